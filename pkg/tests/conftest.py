import numpy as np
import pytest

from tactile.core import ShearField, TactileFrame, grid_anchors
from tactile.sim import Keyframe, SimScene, render_frame


def rest_frame(seed=0, **kw):
    return render_frame(SimScene(seed=seed, **kw), 0).frame


def shifted_pair(shift, seed=0, noise_sigma=2.0):
    """(reference, target) where every marker moves rigidly by ``shift`` px."""
    sc = SimScene(motion=(Keyframe(0.0), Keyframe(0.0, shift)), shear_taper=None,
                  noise_sigma=noise_sigma, seed=seed)
    return render_frame(sc, 0).frame, render_frame(sc, 1).frame


def random_field(rng, gh=13, gw=18, scale=2.0, valid_fraction=1.0):
    anchors = grid_anchors(288, 208, gh, gw)
    valid = rng.random((gh, gw)) < valid_fraction if valid_fraction < 1 else None
    return ShearField(rng.normal(0, scale, (gh, gw)), rng.normal(0, scale, (gh, gw)), anchors, valid)


def random_frame(rng, w=48, h=40, t=0.0):
    return TactileFrame(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_planted_dataset(directory, n=12, size=(48, 40), seed=0, zero=False):
    """Samples whose depth is exactly 0.01 x the green channel of the difference image."""
    from tactile.core import DepthMap, DifferenceImage, write_depth_map, write_difference_image
    from tactile.sim import ManifestRow, write_manifest

    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    w, h = size
    rows = []
    for i in range(n):
        # even values survive the offset PNG encoding exactly
        v = 2 * rng.integers(-127, 128, (h, w, 3))
        v[..., 1] = np.abs(v[..., 1])
        if zero:
            v[:] = 0
        sid = f"{i:04d}"
        write_difference_image(directory / f"diff_{sid}.png", DifferenceImage(v.astype(np.int16)))
        write_depth_map(directory / f"depth_{sid}.gsd", DepthMap(0.01 * v[..., 1]))
        split = "val" if i % 4 == 3 else "train"
        rows.append(ManifestRow(sid, split, "planted", "press=0"))
    write_manifest(directory / "manifest.tsv", rows)
    return directory


@pytest.fixture(scope="session")
def standard_dataset(tmp_path_factory):
    """Five-object simulator dataset, 50 samples per object, with its fitted depth model."""
    from tactile.depth import Dataset, fit_depth_model
    from tactile.sim import generate_dataset, standard_objects

    root = tmp_path_factory.mktemp("standard")
    generate_dataset(standard_objects(), 50, 0, root)
    ds = Dataset(root)
    return ds, fit_depth_model(ds)


def pytest_terminal_summary(terminalreporter):
    import sys as _sys

    mod = _sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
