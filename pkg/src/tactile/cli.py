"""``tactile`` command line: simulate, track, quiver, depth-fit, depth-eval."""
from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from collections import Counter, deque
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from .core import (ShearConfig, TactileError, read_frame, read_shear_field, validate_stream,
                   write_frame, write_shear_field)
from .depth import (Dataset, evaluate, fit_depth_model, read_depth_model, write_depth_model)
from .quiver import write_quiver
from .scenefile import SceneParseError, parse_scene
from .shear import Mode, ShearTracker, slip_score
from .sim import generate_dataset, render_frame

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CommandError(Exception):
    def __init__(self, message, code=EXIT_FAILURE):
        super().__init__(message)
        self.code = code


@contextmanager
def staged_dir(final: Path):
    """Build a directory beside ``final`` and move it into place only on success."""
    final = Path(final)
    if final.exists() and (not final.is_dir() or any(final.iterdir())):
        raise CommandError(f"output directory {final} exists and is not empty", EXIT_USAGE)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        final.rmdir()
    os.replace(tmp, final)


@contextmanager
def staged_file(final: Path):
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    fd, name = tempfile.mkstemp(prefix=f".{final.name}.", dir=final.parent)
    os.close(fd)
    tmp = Path(name)
    try:
        yield tmp
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    os.replace(tmp, final)


def _config(args) -> ShearConfig:
    try:
        return ShearConfig(grid_h=args.grid_h, grid_w=args.grid_w, k=args.k, m=args.m,
                           window=args.window, search=args.search)
    except ValueError as e:
        raise CommandError(str(e), EXIT_USAGE) from None


def cmd_simulate(args) -> int:
    try:
        scene = parse_scene(args.scene)
    except SceneParseError as e:
        raise CommandError(str(e), EXIT_USAGE) from None
    if args.samples < 0:
        raise CommandError("--samples must be >= 0", EXIT_USAGE)
    if not scene.objects and scene.sequence is None:
        raise CommandError(f"{args.scene}: no [object.*] or [sequence] sections", EXIT_USAGE)
    grid = (args.grid_h, args.grid_w)
    with staged_dir(Path(args.out)) as tmp:
        if scene.objects:
            rows = generate_dataset(scene.objects, args.samples, args.seed, tmp, grid)
            counts = Counter(r.split for r in rows)
            print(f"dataset: {len(rows)} samples, {len(scene.objects)} objects; "
                  + ", ".join(f"{k}={counts[k]}" for k in sorted(counts)))
        if scene.sequence is not None:
            seq = replace(scene.sequence, seed=args.seed)
            fdir = tmp / "frames"
            fdir.mkdir()
            for i in range(len(seq.motion)):
                sf = render_frame(seq, i, grid)
                write_frame(fdir / f"frame_{i:04d}.png", sf.frame)
                write_shear_field(fdir / f"truth_{i:04d}.gsf", sf.field)
            print(f"sequence: {len(seq.motion)} frames in {Path(args.out) / 'frames'}")
    return 0


def _load_stream(frames_dir: Path):
    paths = sorted(frames_dir.glob("frame_*.png"))
    if not paths:
        raise CommandError(f"no frame_*.png files in {frames_dir}")
    try:
        return [read_frame(p) for p in paths]
    except (OSError, ValueError) as e:
        raise CommandError(f"reading frames: {e}") from None


def cmd_track(args) -> int:
    cfg = _config(args)
    frames = _load_stream(Path(args.frames))
    problems = validate_stream(frames)
    if problems:
        for v in problems:
            print(f"frame {v.index}: {v.rule} ({v.detail})", file=sys.stderr)
        raise CommandError(f"{len(problems)} stream violation(s)")
    tracker = ShearTracker(frames[0], cfg, Mode(args.mode))
    history = deque([tracker.accumulated], maxlen=args.slip_window)
    lines = ["t\td\tomega\tmean_u\tmax_u\tslip_score"]
    with staged_dir(Path(args.out)) as tmp:
        for i, frame in enumerate(frames[1:], start=1):
            field, stats = tracker.step(frame)
            slip = slip_score(field, list(history), cfg)
            history.append(field)
            write_shear_field(tmp / f"field_{i:04d}.gsf", field)
            lines.append(f"{frame.timestamp:.6f}\t{stats.d:.6f}\t{stats.omega:.6f}\t"
                         f"{stats.mean_magnitude:.6f}\t{stats.max_magnitude:.6f}\t{slip:.6f}")
        (tmp / "stats.tsv").write_text("\n".join(lines) + "\n")
    print(f"tracked {len(frames) - 1} frames ({args.mode}, {cfg.grid_h}x{cfg.grid_w} grid) -> {args.out}")
    return 0


def cmd_quiver(args) -> int:
    try:
        field = read_shear_field(args.field)
        frame = read_frame(args.frame)
    except (OSError, ValueError) as e:
        raise CommandError(f"reading inputs: {e}") from None
    with staged_file(Path(args.out)) as tmp:
        write_quiver(tmp, field, frame, scale=args.scale)
    print(f"wrote {args.out}")
    return 0


def _dataset_dir(p: str) -> Path:
    p = Path(p)
    return p.parent if p.name == "manifest.tsv" else p


def cmd_depth_fit(args) -> int:
    try:
        ds = Dataset(_dataset_dir(args.manifest))
    except (OSError, ValueError) as e:
        raise CommandError(f"reading manifest: {e}", EXIT_USAGE) from None
    model = fit_depth_model(ds, args.patch_radius, args.lam, args.seed)
    with staged_file(Path(args.out)) as tmp:
        write_depth_model(tmp, model)
    meta = model.metadata
    print(f"model: r={model.patch_radius} lambda={meta['lambda']} train_rmse={meta['train_rmse']} mm"
          + (f" val_rmse={meta['val_rmse']} mm" if "val_rmse" in meta else ""))
    return 0


def cmd_depth_eval(args) -> int:
    try:
        model = read_depth_model(args.model)
        ds = Dataset(_dataset_dir(args.manifest))
    except (OSError, ValueError) as e:
        raise CommandError(f"reading inputs: {e}", EXIT_USAGE) from None
    metrics = evaluate(model, ds, args.split)
    with staged_file(Path(args.out)) as tmp:
        metrics.write_tsv(tmp)
    print(f"{args.split}: rmse={metrics.rmse:.4g} mm max_error={metrics.max_error:.4g} mm "
          f"iou={metrics.iou:.3f} over {metrics.samples} samples")
    return 0


def _add_grid(p):
    p.add_argument("--grid-h", type=int, default=13)
    p.add_argument("--grid-w", type=int, default=18)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tactile", description="Marker-gel shear and depth tools.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a dataset and/or a frame sequence from a scene file")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=50, help="samples per object")
    p.add_argument("--seed", type=int, default=0)
    _add_grid(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="shear fields for a frame stream")
    p.add_argument("frames", help="directory of frame_NNNN.png + .txt sidecars")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="weighted")
    _add_grid(p)
    d = ShearConfig()
    p.add_argument("--k", type=float, default=d.k)
    p.add_argument("--m", type=float, default=d.m)
    p.add_argument("--window", type=int, default=d.window)
    p.add_argument("--search", type=int, default=d.search)
    p.add_argument("--slip-window", type=int, default=5)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("quiver", help="render a GSF1 field over a frame as SVG")
    p.add_argument("field")
    p.add_argument("frame")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=3.0)
    p.set_defaults(func=cmd_quiver)

    p = sub.add_parser("depth-fit", help="fit the patch ridge depth model")
    p.add_argument("manifest", help="dataset directory or its manifest.tsv")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-radius", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_depth_fit)

    p = sub.add_parser("depth-eval", help="score a depth model on a manifest split")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_depth_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as e:
        print(f"tactile {args.command}: {e}", file=sys.stderr)
        return e.code
    except (TactileError, OSError, ValueError) as e:
        print(f"tactile {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
