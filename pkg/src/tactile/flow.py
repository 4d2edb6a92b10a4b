"""Marker detection and grid-sampled block-matching flow between two RGB frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .core import (ShearConfig, ShearField, TactileError, TactileFrame,
                   check_compatible, grid_anchors)


class TooFewMarkers(TactileError):
    pass


@dataclass(frozen=True, eq=False)
class MarkerSet:
    centroids: np.ndarray  # (n, 2) float64 (x, y)
    radii: np.ndarray      # (n,) equivalent-disk radius, px

    def __len__(self):
        return len(self.centroids)


@dataclass(frozen=True, eq=False)
class FlowEstimate:
    field: ShearField
    valid_mask: np.ndarray
    mean_error: float  # mean per-pixel absolute grayscale residual over valid cells


def detect_markers(frame: TactileFrame, expected_count: int = 234,
                   min_contrast: float = 30.0, min_area: int = 4) -> MarkerSet:
    """Find dark dots on the lighter gel.

    Threshold at half the typical darkness of a dot relative to the local
    gel level, label connected components, then refine each blob with an
    intensity-weighted centroid over its dilated footprint.
    """
    gray = frame.gray4().astype(np.float64) / 4.0
    # gel level from a wide median so shading gradients do not bias the threshold
    background = ndimage.median_filter(gray, size=15, mode="nearest")
    darkness = np.clip(background - gray, 0.0, None)
    peak = np.percentile(darkness, 99.5)
    if peak < min_contrast:
        raise TooFewMarkers(f"no dark blobs (contrast {peak:.1f} < {min_contrast})")
    # dots scale the gel multiplicatively, so threshold on darkness relative to the gel level
    rel = darkness / np.maximum(background, 1.0)
    mask = (rel > 0.5 * np.percentile(rel, 99.5)) & (darkness > min_contrast / 2)
    labels, n = ndimage.label(mask)
    if n == 0:
        raise TooFewMarkers("no blobs after thresholding")

    areas = ndimage.sum_labels(np.ones_like(gray), labels, np.arange(1, n + 1))
    typical = np.median(areas)
    keep = np.flatnonzero((areas >= min_area) & (areas <= 4 * typical)) + 1

    # weight over a one-pixel dilation so the anti-aliased rim counts
    grown = ndimage.grey_dilation(labels, size=3)
    grown = np.where(labels > 0, labels, grown)
    yy, xx = np.indices(gray.shape, dtype=np.float64)
    w = ndimage.sum_labels(darkness, grown, keep)
    cx = ndimage.sum_labels(darkness * xx, grown, keep) / w
    cy = ndimage.sum_labels(darkness * yy, grown, keep) / w
    cents = np.stack([cx, cy], axis=1)
    radii = np.sqrt(areas[keep - 1] / np.pi)

    ok = (cx >= 0) & (cx <= frame.width - 1) & (cy >= 0) & (cy <= frame.height - 1)
    cents, radii = cents[ok], radii[ok]
    cents, radii = _merge_close(cents, radii, 2.0)

    if len(cents) < 0.5 * expected_count:
        raise TooFewMarkers(f"found {len(cents)} markers, expected about {expected_count}")
    order = np.lexsort((cents[:, 0], cents[:, 1]))
    return MarkerSet(cents[order], radii[order])


def _merge_close(cents, radii, min_sep):
    if len(cents) < 2:
        return cents, radii
    d = np.hypot(*(cents[:, None, :] - cents[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    alive = np.ones(len(cents), bool)
    for i in range(len(cents)):
        if not alive[i]:
            continue
        close = np.flatnonzero(alive & (d[i] < min_sep))
        if close.size:
            grp = np.r_[i, close]
            cents[i] = cents[grp].mean(axis=0)
            radii[i] = radii[grp].max()
            alive[close] = False
    return cents[alive], radii[alive]


def match_markers(found: np.ndarray, truth: np.ndarray, tol: float):
    """Nearest-neighbour pairing; returns (index into truth, distance) per found centroid."""
    if len(found) == 0:
        return np.zeros(0, int), np.zeros(0)
    d = np.hypot(*(found[:, None, :] - truth[None, :, :]).transpose(2, 0, 1))
    idx = d.argmin(axis=1)
    return idx, d[np.arange(len(found)), idx]


def _candidate_rank(search: int) -> np.ndarray:
    """Rank of each (dy, dx) offset: smaller L2 first, then lexicographic (dx, dy)."""
    r = np.arange(-search, search + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    order = np.lexsort((dy.ravel(), dx.ravel(), (dx ** 2 + dy ** 2).ravel()))
    rank = np.empty(order.size, np.int64)
    rank[order] = np.arange(order.size)
    return rank.reshape(dy.shape)


def _parabola(sm, s0, sp):
    den = sm - 2.0 * s0 + sp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den > 0, 0.5 * (sm - sp) / den, 0.0)
    return np.clip(off, -0.5, 0.5)


def sad_volume(target: TactileFrame, reference: TactileFrame, anchors: np.ndarray,
               window: int, search: int) -> np.ndarray:
    """SAD of every candidate offset, shape (gh, gw, 2s+1, 2s+1) indexed [dy, dx], gray x4 units."""
    pad = window + search
    ref = np.pad(reference.gray4(), pad, mode="edge")
    tgt = np.pad(target.gray4(), pad, mode="edge")
    ax = anchors[..., 0].astype(np.int64) + pad
    ay = anchors[..., 1].astype(np.int64) + pad
    p = 2 * window + 1
    q = p + 2 * search
    gh, gw = ax.shape
    out = np.empty((gh, gw, 2 * search + 1, 2 * search + 1), np.int64)
    # one grid row at a time bounds the temporary to ~gw * (2s+1)^2 * p^2 ints
    for i in range(gh):
        ref_rows = np.stack([ref[ay[i, j] - window:ay[i, j] + window + 1,
                                 ax[i, j] - window:ax[i, j] + window + 1] for j in range(gw)])
        tgt_rows = np.stack([tgt[ay[i, j] - pad:ay[i, j] - pad + q,
                                 ax[i, j] - pad:ax[i, j] - pad + q] for j in range(gw)])
        views = sliding_window_view(tgt_rows, (p, p), axis=(1, 2))
        out[i] = np.abs(views - ref_rows[:, None, None]).sum(axis=(-2, -1))
    return out


def flow(target: TactileFrame, reference: TactileFrame, config: ShearConfig = ShearConfig(),
         anchors: np.ndarray | None = None) -> FlowEstimate:
    """Displacement of the reference pattern into ``target`` at each grid anchor.

    Integer search by SAD over +-``config.search`` px, then independent
    parabolic refinement along x and y around the winner (skipped on an
    exact zero-SAD match). Cells whose best SAD exceeds ``residual_ceiling``
    of the window maximum come back invalid with zero vectors.
    """
    check_compatible(target, reference)
    if anchors is None:
        anchors = grid_anchors(reference.width, reference.height, config.grid_h, config.grid_w)
    w, s = config.window, config.search
    sad = sad_volume(target, reference, anchors, w, s)
    gh, gw, n, _ = sad.shape

    rank = _candidate_rank(s)
    key = sad * (n * n) + rank
    flat = key.reshape(gh, gw, -1).argmin(axis=-1)
    iy, ix = np.unravel_index(flat, (n, n))
    best = np.take_along_axis(sad.reshape(gh, gw, -1), flat[..., None], -1)[..., 0]

    rows, cols = np.indices((gh, gw))
    sadf = sad.astype(np.float64)
    s0 = sadf[rows, cols, iy, ix]
    fx = np.zeros((gh, gw))
    fy = np.zeros((gh, gw))
    # a zero-SAD winner is an exact match and needs no refinement
    exact = best == 0
    inx = (ix > 0) & (ix < n - 1) & ~exact
    iny = (iy > 0) & (iy < n - 1) & ~exact
    fx[inx] = _parabola(sadf[rows, cols, iy, ix - 1], s0, sadf[rows, cols, iy, np.minimum(ix + 1, n - 1)])[inx]
    fy[iny] = _parabola(sadf[rows, cols, iy - 1, ix], s0, sadf[rows, cols, np.minimum(iy + 1, n - 1), ix])[iny]

    ux = (ix - s) + fx
    uy = (iy - s) + fy
    p = 2 * w + 1
    ceiling = config.residual_ceiling * 255 * 4 * p * p
    valid = best <= ceiling
    ux = np.where(valid, ux, 0.0)
    uy = np.where(valid, uy, 0.0)
    err = float(best[valid].mean() / (4 * p * p)) if valid.any() else float("nan")
    field = ShearField(ux, uy, anchors, valid)
    return FlowEstimate(field, field.valid, err)


def interior_cells(anchors: np.ndarray, width: int, height: int, config: ShearConfig) -> np.ndarray:
    """Cells whose whole search footprint lies inside the frame (no edge padding involved)."""
    reach = config.window + config.search
    ax, ay = anchors[..., 0], anchors[..., 1]
    return (ax >= reach) & (ax <= width - 1 - reach) & (ay >= reach) & (ay <= height - 1 - reach)
