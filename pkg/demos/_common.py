"""Output-directory helper shared by the demos."""
import sys
from pathlib import Path


def out_dir(default: str) -> Path:
    p = Path(sys.argv[1] if len(sys.argv) > 1 else default)
    p.mkdir(parents=True, exist_ok=True)
    return p
