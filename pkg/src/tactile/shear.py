"""Stateful shear-field tracking: frame-to-frame, reference-frame and weighted fusion."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DegenerateField, ShearConfig, ShearField, TactileFrame, check_compatible, grid_anchors
from .flow import flow


class Mode(enum.Enum):
    ADJACENT = "adjacent"
    REFERENCE = "reference"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class ShearStats:
    d: float
    omega: float
    mean_magnitude: float
    max_magnitude: float


def displacement_stat(field: ShearField) -> float:
    """Larger of the population standard deviations of u_x and u_y over valid cells."""
    v = field.valid
    if v.sum() < 2:
        raise DegenerateField(f"need at least 2 valid cells, have {int(v.sum())}")
    ux = field.u_x[v].astype(np.float64)
    uy = field.u_y[v].astype(np.float64)
    return float(max(ux.std(), uy.std()))


def fusion_weight(d: float, config: ShearConfig = ShearConfig()) -> float:
    """Logistic weight on the frame-to-frame estimate; 0.5 at d == m."""
    z = -config.k * (d - config.m)
    # split on sign so exp never overflows
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def slip_score(field: ShearField, window: Sequence[ShearField], config: ShearConfig = ShearConfig()) -> float:
    """Largest per-cell frame-to-frame change across ``window`` then ``field``, over ``config.search``.

    Cells count only where both fields of a consecutive pair are valid.
    """
    if not window:
        raise DegenerateField("slip_score needs at least one earlier field")
    seq = list(window) + [field]
    best = None
    for a, b in zip(seq[:-1], seq[1:]):
        if a.u_x.shape != b.u_x.shape:
            raise DegenerateField("fields in the window have different grids")
        both = a.valid & b.valid
        if not both.any():
            continue
        dx = b.u_x[both].astype(np.float64) - a.u_x[both]
        dy = b.u_y[both].astype(np.float64) - a.u_y[both]
        m = float(np.hypot(dx, dy).max())
        best = m if best is None else max(best, m)
    if best is None:
        raise DegenerateField("no cell is valid in any consecutive pair")
    return best / config.search


def _combine(a: ShearField, r: ShearField, omega: float) -> ShearField:
    ux = omega * a.u_x.astype(np.float64) + (1.0 - omega) * r.u_x.astype(np.float64)
    uy = omega * a.u_y.astype(np.float64) + (1.0 - omega) * r.u_y.astype(np.float64)
    return ShearField(ux, uy, a.anchors, a.valid | r.valid)


def _add(f: ShearField, acc: ShearField) -> ShearField:
    return ShearField(f.u_x.astype(np.float64) + acc.u_x, f.u_y.astype(np.float64) + acc.u_y,
                      f.anchors, f.valid | acc.valid)


class ShearTracker:
    """Per-stream tracker holding the undeformed frame, the previous frame and the running field.

    >>> tracker = ShearTracker(rest_frame)                # doctest: +SKIP
    >>> field, stats = tracker.step_weighted(next_frame)  # doctest: +SKIP

    One tracker per sensor stream; calls must be sequential.
    """

    def __init__(self, undeformed: TactileFrame | None = None, config: ShearConfig = ShearConfig(),
                 mode: Mode | str = Mode.WEIGHTED):
        self.config = config
        self.mode = Mode(mode)
        self.reference = None
        self.previous = None
        self.accumulated = None
        self.last_adjacent = None
        self.last_reference = None
        if undeformed is not None:
            self.reset(undeformed)

    def reset(self, undeformed: TactileFrame) -> None:
        self.reference = undeformed
        self.previous = undeformed
        anchors = grid_anchors(undeformed.width, undeformed.height, self.config.grid_h, self.config.grid_w)
        self.accumulated = ShearField.zeros(anchors)
        self.last_adjacent = self.last_reference = None

    @property
    def anchors(self) -> np.ndarray:
        return self.accumulated.anchors

    def _check(self, frame: TactileFrame) -> None:
        if self.reference is None:
            raise RuntimeError("tracker has no undeformed frame; call reset() first")
        check_compatible(frame, self.reference)
        first = self.previous is self.reference
        if frame.timestamp < self.previous.timestamp or (not first and frame.timestamp == self.previous.timestamp):
            raise ValueError(f"frame timestamp {frame.timestamp} does not follow {self.previous.timestamp}")

    def _adjacent_term(self, frame):
        f = flow(frame, self.previous, self.config, self.anchors).field
        return _add(f, self.accumulated)

    def _reference_term(self, frame):
        return flow(frame, self.reference, self.config, self.anchors).field

    def step_adjacent(self, frame: TactileFrame) -> ShearField:
        self._check(frame)
        out = self._adjacent_term(frame)
        self.last_adjacent = out
        self.previous, self.accumulated = frame, out
        return out

    def step_reference(self, frame: TactileFrame) -> ShearField:
        self._check(frame)
        out = self._reference_term(frame)
        self.last_reference = out
        self.previous, self.accumulated = frame, out
        return out

    def current_d(self) -> float:
        """Displacement statistic of the running field; 0 when too few cells are valid."""
        try:
            return displacement_stat(self.accumulated)
        except DegenerateField:
            return 0.0

    def step_weighted(self, frame: TactileFrame) -> tuple[ShearField, ShearStats]:
        self._check(frame)
        d = self.current_d()
        omega = fusion_weight(d, self.config)
        a = self._adjacent_term(frame)
        r = self._reference_term(frame)
        out = _combine(a, r, omega)
        self.last_adjacent, self.last_reference = a, r
        self.previous, self.accumulated = frame, out
        return out, ShearStats(d, omega, out.mean_magnitude(), out.max_magnitude())

    def step(self, frame: TactileFrame) -> tuple[ShearField, ShearStats]:
        """Advance in the tracker's configured mode; stats report d and omega for every mode."""
        if self.mode is Mode.WEIGHTED:
            return self.step_weighted(frame)
        d = self.current_d()
        omega = fusion_weight(d, self.config)
        out = self.step_adjacent(frame) if self.mode is Mode.ADJACENT else self.step_reference(frame)
        return out, ShearStats(d, omega, out.mean_magnitude(), out.max_magnitude())


def track(frames: Sequence[TactileFrame], mode: Mode | str = Mode.WEIGHTED,
          config: ShearConfig = ShearConfig()) -> list[tuple[ShearField, ShearStats]]:
    """Run a tracker over a stream, using the first frame as the undeformed reference."""
    if not frames:
        return []
    tr = ShearTracker(frames[0], config, mode)
    return [tr.step(f) for f in frames[1:]]


@dataclass(frozen=True)
class PhaseThresholds:
    """Mean-magnitude thresholds (px) separating contact, exploration and settled phases."""

    quiet: float = 0.2        # contact phase stays below this
    swing: float = 0.6        # exploration peaks rise above this
    min_swings: int = 2       # separate excursions above ``swing``
    settle_std: float = 0.1   # settled tail varies less than this
    settle_len: int = 5


def detect_phases(mean_mag: Sequence[float], th: PhaseThresholds = PhaseThresholds()):
    """Split a mean|u| trajectory into (contact_end, explore_end) indices, or None.

    Contact is the leading run below ``quiet``; exploration must cross
    ``swing`` at least ``min_swings`` times with dips between; the final
    ``settle_len`` samples must be steady.
    """
    m = np.asarray(mean_mag, float)
    if m.size < th.settle_len + 3:
        return None
    above_quiet = np.flatnonzero(m >= th.quiet)
    if above_quiet.size == 0 or above_quiet[0] == 0:
        return None
    contact_end = int(above_quiet[0])
    tail = m[-th.settle_len:]
    if tail.std() > th.settle_std:
        return None
    # walk back from the tail while still steady
    explore_end = m.size - th.settle_len
    while explore_end > contact_end and abs(m[explore_end - 1] - tail.mean()) <= 3 * th.settle_std:
        explore_end -= 1
    seg = m[contact_end:explore_end]
    hi = seg >= th.swing
    swings = int(np.sum(hi[1:] & ~hi[:-1]) + (1 if hi.size and hi[0] else 0))
    if swings < th.min_swings:
        return None
    return contact_end, explore_end
