"""Depth from RGB difference images, plus the radial distortion operators.

The depth model is a patch-wise linear map: each pixel's depth is a dot
product between its (2r+1)^2 x 3 neighbourhood in the difference image and a
learned weight vector, clamped at zero. Weights come from ridge regression
solved through normal equations accumulated one sample at a time, so the
whole dataset never sits in memory. Any object with the same
``predict(diff) -> DepthMap`` shape can replace it.
"""
from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg, ndimage

from .core import (DepthMap, DifferenceImage, DimensionMismatch, Distortion, TactileError,
                   TactileFrame, read_depth_map, read_difference_image)
from .sim import ManifestRow, dataset_hash, read_manifest


class AlreadyRectified(TactileError):
    pass


class AlreadyDistorted(TactileError):
    pass


class SingularSystem(TactileError):
    pass


class EmptySplit(TactileError):
    pass


# -- lens model ------------------------------------------------------------

@dataclass(frozen=True)
class DistortionModel:
    """Two-coefficient radial model on coordinates normalised by half the larger frame side.

    Rectified point p maps to distorted point c + (p - c)(1 + k1 r^2 + k2 r^4).
    """

    center: tuple[float, float]
    k1: float = 0.0
    k2: float = 0.0
    output_size: tuple[int, int] | None = None  # (width, height); None keeps the input size

    @classmethod
    def centered(cls, width: int, height: int, k1: float = 0.0, k2: float = 0.0) -> "DistortionModel":
        return cls(((width - 1) / 2, (height - 1) / 2), k1, k2, (width, height))

    def _scale(self, width, height):
        return max(width, height) / 2.0

    def forward(self, x, y, width, height):
        """Rectified -> distorted pixel coordinates."""
        s = self._scale(width, height)
        cx, cy = self.center
        xn, yn = (np.asarray(x, float) - cx) / s, (np.asarray(y, float) - cy) / s
        r2 = xn * xn + yn * yn
        f = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        return cx + xn * f * s, cy + yn * f * s

    def inverse(self, x, y, width, height, iters: int = 30):
        """Distorted -> rectified pixel coordinates, by Newton iteration on the radius."""
        s = self._scale(width, height)
        cx, cy = self.center
        xn, yn = (np.asarray(x, float) - cx) / s, (np.asarray(y, float) - cy) / s
        rd = np.hypot(xn, yn)
        ru = rd.copy()
        for _ in range(iters):
            g = ru * (1 + self.k1 * ru ** 2 + self.k2 * ru ** 4) - rd
            dg = 1 + 3 * self.k1 * ru ** 2 + 5 * self.k2 * ru ** 4
            ru = ru - g / np.where(np.abs(dg) < 1e-12, 1e-12, dg)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(rd > 0, ru / rd, 1.0)
        return cx + xn * ratio * s, cy + yn * ratio * s


def _resample(pixels: np.ndarray, sx: np.ndarray, sy: np.ndarray, order: int = 1) -> np.ndarray:
    out = np.empty(sx.shape + (pixels.shape[2],), np.float64)
    for c in range(pixels.shape[2]):
        out[..., c] = ndimage.map_coordinates(pixels[..., c].astype(np.float64), [sy, sx],
                                              order=order, mode="nearest")
    return out


def _out_grid(frame, model):
    w, h = model.output_size or (frame.width, frame.height)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return xx, yy


def rectify(frame: TactileFrame, model: DistortionModel, order: int = 1) -> TactileFrame:
    """Undo lens distortion: each output pixel samples the input at ``model.forward``.

    ``order`` is the spline order of the resampler; 1 is bilinear.
    """
    if frame.distortion is Distortion.RECTIFIED:
        raise AlreadyRectified("frame is already rectified")
    xx, yy = _out_grid(frame, model)
    sx, sy = model.forward(xx, yy, frame.width, frame.height)
    px = _resample(frame.pixels, sx, sy, order)
    return TactileFrame(np.clip(np.rint(px), 0, 255).astype(np.uint8), frame.timestamp,
                        Distortion.RECTIFIED)


def distort(frame: TactileFrame, model: DistortionModel, order: int = 1) -> TactileFrame:
    """Apply lens distortion: each output pixel samples the input at ``model.inverse``."""
    if frame.distortion is Distortion.DISTORTED:
        raise AlreadyDistorted("frame is already distorted")
    xx, yy = _out_grid(frame, model)
    sx, sy = model.inverse(xx, yy, frame.width, frame.height)
    px = _resample(frame.pixels, sx, sy, order)
    return TactileFrame(np.clip(np.rint(px), 0, 255).astype(np.uint8), frame.timestamp,
                        Distortion.DISTORTED)


# -- depth model -----------------------------------------------------------

GDM_MAGIC = b"GDM1"


def feature_count(patch_radius: int) -> int:
    return 3 * (2 * patch_radius + 1) ** 2


def default_lambda(patch_radius: int = 3) -> float:
    return 1e-3 * feature_count(patch_radius)


@dataclass
class DepthModel:
    patch_radius: int
    weights: np.ndarray  # feature_count weights then the bias
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, np.float64)
        if self.patch_radius < 1:
            raise ValueError("patch_radius must be >= 1")
        if self.weights.shape != (feature_count(self.patch_radius) + 1,):
            raise ValueError(f"expected {feature_count(self.patch_radius) + 1} weights, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    def predict(self, diff: DifferenceImage) -> DepthMap:
        return predict_depth(self, diff)


def patch_features(values: np.ndarray, r: int, rows: slice | None = None) -> np.ndarray:
    """(n_pixels, 3(2r+1)^2 + 1) design matrix with edge padding; last column is the bias."""
    v = np.pad(np.asarray(values, np.float64), ((r, r), (r, r), (0, 0)), mode="edge")
    win = sliding_window_view(v, (2 * r + 1, 2 * r + 1), axis=(0, 1))  # (H, W, 3, P, P)
    if rows is not None:
        win = win[rows]
    n = win.shape[0] * win.shape[1]
    x = np.empty((n, feature_count(r) + 1))
    x[:, :-1] = win.reshape(n, -1)
    x[:, -1] = 1.0
    return x


def _row_chunks(h: int, size: int = 48):
    for a in range(0, h, size):
        yield slice(a, min(a + size, h))


def predict_depth(model: DepthModel, diff: DifferenceImage) -> DepthMap:
    """Clamped linear prediction; pixels whose whole patch is zero predict exactly zero."""
    size = model.metadata.get("width"), model.metadata.get("height")
    if size[0] is not None and (diff.width, diff.height) != (int(size[0]), int(size[1])):
        raise DimensionMismatch(f"model trained on {size[0]}x{size[1]}, got {diff.width}x{diff.height}")
    r = model.patch_radius
    out = np.empty(diff.values.shape[:2])
    nonzero = ndimage.maximum_filter(np.abs(diff.values).max(axis=2), size=2 * r + 1, mode="nearest") > 0
    for rows in _row_chunks(diff.height):
        x = patch_features(diff.values, r, rows)
        out[rows] = (x @ model.weights).reshape(-1, diff.width)
    out = np.where(nonzero, np.maximum(out, 0.0), 0.0)
    return DepthMap(out)


# -- datasets --------------------------------------------------------------

class Dataset:
    """Read access to a generated dataset directory."""

    def __init__(self, directory):
        self.root = Path(directory)
        self.rows = read_manifest(self.root / "manifest.tsv")

    def split(self, name: str | Sequence[str]) -> list[ManifestRow]:
        names = {name} if isinstance(name, str) else set(name)
        return [r for r in self.rows if r.split in names]

    def load(self, row: ManifestRow) -> tuple[DifferenceImage, DepthMap]:
        diff = read_difference_image(self.root / f"diff_{row.sample_id}.png")
        depth = read_depth_map(self.root / f"depth_{row.sample_id}.gsd")
        if (diff.width, diff.height) != (depth.width, depth.height):
            raise DimensionMismatch(f"sample {row.sample_id}: diff and depth sizes differ")
        return diff, depth

    def hash(self) -> str:
        return dataset_hash(self.root)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TACTILE_THREADS", "1")))
    except ValueError:
        return 1


def _normal_contribution(ds: Dataset, row: ManifestRow, r: int):
    diff, depth = ds.load(row)
    n = feature_count(r) + 1
    xtx = np.zeros((n, n))
    xty = np.zeros(n)
    for rows in _row_chunks(diff.height):
        x = patch_features(diff.values, r, rows)
        y = depth.depth[rows].astype(np.float64).ravel()
        xtx += x.T @ x
        xty += x.T @ y
    return xtx, xty, diff.width * diff.height, (diff.width, diff.height)


def accumulate_normal_equations(ds: Dataset, rows: Sequence[ManifestRow], patch_radius: int):
    """Sum X^T X, X^T y and the pixel count over ``rows``, reduced in manifest order."""
    n = feature_count(patch_radius) + 1
    xtx = np.zeros((n, n))
    xty = np.zeros(n)
    count = 0
    size = None
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        for a, b, c, sz in pool.map(lambda row: _normal_contribution(ds, row, patch_radius), rows):
            if size is None:
                size = sz
            elif sz != size:
                raise DimensionMismatch(f"samples differ in size: {sz} vs {size}")
            xtx += a
            xty += b
            count += c
    return xtx, xty, count, size


def solve_ridge(xtx: np.ndarray, xty: np.ndarray, count: int, lam: float) -> np.ndarray:
    """Minimiser of (1/N)|Xw - y|^2 + lam |w|^2 via Cholesky."""
    if not lam > 0:
        raise SingularSystem(f"ridge lambda must be > 0, got {lam}")
    a = xtx / count + lam * np.eye(len(xty))
    try:
        c = linalg.cho_factor(a, lower=True, check_finite=True)
    except linalg.LinAlgError as e:
        raise SingularSystem(f"normal matrix not positive definite: {e}") from None
    return linalg.cho_solve(c, xty / count)


def objective_gradient(ds: Dataset, rows: Sequence[ManifestRow], model: DepthModel, lam: float) -> np.ndarray:
    """Gradient of the ridge objective at ``model.weights``, recomputed from raw samples."""
    r = model.patch_radius
    g = np.zeros_like(model.weights)
    count = 0
    for row in rows:
        diff, depth = ds.load(row)
        for sl in _row_chunks(diff.height):
            x = patch_features(diff.values, r, sl)
            resid = x @ model.weights - depth.depth[sl].astype(np.float64).ravel()
            g += x.T @ resid
            count += x.shape[0]
    return 2.0 * g / count + 2.0 * lam * model.weights


def fit_depth_model(dataset, patch_radius: int = 3, lam: float | None = None, seed: int = 0,
                    train_split: str | Sequence[str] = "train",
                    val_split: str | Sequence[str] = "val") -> DepthModel:
    """Fit the patch-wise ridge model on ``train_split`` and report train/val RMSE in metadata."""
    ds = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    lam = default_lambda(patch_radius) if lam is None else float(lam)
    if not lam > 0:
        raise SingularSystem(f"ridge lambda must be > 0, got {lam}")
    train = ds.split(train_split)
    if not train:
        raise EmptySplit(f"no samples in split {train_split!r}")
    xtx, xty, count, size = accumulate_normal_equations(ds, train, patch_radius)
    w = solve_ridge(xtx, xty, count, lam)
    meta = {"dataset_hash": ds.hash(), "lambda": repr(lam), "seed": str(seed),
            "width": str(size[0]), "height": str(size[1]), "train_samples": str(len(train))}
    model = DepthModel(patch_radius, w, meta)
    meta["train_rmse"] = f"{evaluate(model, ds, train_split).rmse:.6g}"
    val = ds.split(val_split)
    if val:
        meta["val_rmse"] = f"{evaluate(model, ds, val_split).rmse:.6g}"
    return model


def write_depth_model(path, model: DepthModel) -> None:
    meta = "".join(f"{k}={v}\n" for k, v in model.metadata.items()).encode("utf-8")
    buf = (GDM_MAGIC + struct.pack("<II", model.patch_radius, feature_count(model.patch_radius))
           + model.weights.astype("<f8").tobytes() + struct.pack("<I", len(meta)) + meta)
    Path(path).write_bytes(buf)


def read_depth_model(path) -> DepthModel:
    buf = Path(path).read_bytes()
    if buf[:4] != GDM_MAGIC:
        raise ValueError(f"{path}: not a GDM1 model")
    r, nf = struct.unpack_from("<II", buf, 4)
    if nf != feature_count(r):
        raise ValueError(f"{path}: feature count {nf} inconsistent with patch radius {r}")
    off = 12
    w = np.frombuffer(buf, "<f8", nf + 1, off).copy()
    off += 8 * (nf + 1)
    (n,) = struct.unpack_from("<I", buf, off)
    text = buf[off + 4:off + 4 + n].decode("utf-8")
    meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    return DepthModel(r, w, meta)


# -- evaluation ------------------------------------------------------------

def half_max_mask(depth: np.ndarray) -> np.ndarray:
    peak = depth.max()
    return depth >= 0.5 * peak if peak > 0 else np.zeros(depth.shape, bool)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


@dataclass
class Metrics:
    split: str
    samples: int
    rmse: float
    max_error: float
    iou: float                         # mean over samples with contact
    per_object: dict[str, float]       # RMSE per object id
    max_press: float                   # largest true depth in the split, mm

    def rows(self) -> list[tuple[str, str, str]]:
        out = [("all", "samples", str(self.samples)), ("all", "rmse_mm", f"{self.rmse:.6g}"),
               ("all", "max_error_mm", f"{self.max_error:.6g}"), ("all", "contact_iou", f"{self.iou:.6g}"),
               ("all", "max_depth_mm", f"{self.max_press:.6g}")]
        out += [(obj, "rmse_mm", f"{v:.6g}") for obj, v in sorted(self.per_object.items())]
        return out

    def write_tsv(self, path) -> None:
        lines = ["scope\tmetric\tvalue"] + ["\t".join(r) for r in self.rows()]
        Path(path).write_text("\n".join(lines) + "\n")


def evaluate(model, dataset, split: str | Sequence[str]) -> Metrics:
    """Score ``model`` on a manifest split.

    Contact IoU compares the half-maximum regions of prediction and truth.
    """
    ds = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    rows = ds.split(split)
    if not rows:
        raise EmptySplit(f"split {split!r} is empty")
    sq = 0.0
    n = 0
    worst = 0.0
    top = 0.0
    ious = []
    per = {}
    for row in rows:
        diff, truth = ds.load(row)
        pred = model.predict(diff).depth.astype(np.float64)
        t = truth.depth.astype(np.float64)
        e = pred - t
        s = float(np.sum(e * e))
        sq += s
        n += e.size
        worst = max(worst, float(np.abs(e).max()))
        top = max(top, float(t.max()))
        acc = per.setdefault(row.object_id, [0.0, 0])
        acc[0] += s
        acc[1] += e.size
        if t.max() > 0:
            ious.append(iou(half_max_mask(pred), half_max_mask(t)))
    name = split if isinstance(split, str) else "+".join(split)
    return Metrics(name, len(rows), math.sqrt(sq / n), worst,
                   float(np.mean(ious)) if ious else float("nan"),
                   {k: math.sqrt(a / b) for k, (a, b) in per.items()}, top)
