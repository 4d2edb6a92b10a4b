"""Synthetic marker-gel sensor with exact ground truth.

Frames are rendered from a clamped-height membrane model: the indenter's
height function is capped at the press depth, blurred with a Gaussian whose
width scales with gel thickness, and shaded by three directional lights that
respond linearly to the surface gradient. Dark anti-aliased markers sit on a
uniform lattice and move with the imposed shear field, so every estimator in
the package can be scored against the field, depth map and contact mask that
produced the image.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (DepthMap, ShearField, TactileError, TactileFrame, difference_image,
                   grid_anchors, write_depth_map, write_difference_image, write_shear_field)


class IndenterOutOfFrame(TactileError):
    pass


class IndenterKind(enum.Enum):
    SPHERE = "sphere"
    CYLINDER = "cylinder"
    CROSS = "cross"
    RING = "ring"
    TEXT_GLYPH = "text"


# 5x7 bitmaps, rows top to bottom
_GLYPHS = {
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
}


@dataclass(frozen=True)
class IndenterShape:
    """Rigid indenter; sizes in mm.

    ``size`` is the sphere/cylinder/ring outer radius, the cross half-length,
    or the glyph height. ``width`` is the cross arm width or the ring wall.
    """

    kind: IndenterKind = IndenterKind.SPHERE
    size: float = 4.0
    width: float = 1.5
    text: str = "T"

    def __post_init__(self):
        object.__setattr__(self, "kind", IndenterKind(self.kind))
        if self.size <= 0 or self.width <= 0:
            raise ValueError("indenter sizes must be positive")
        if self.kind is IndenterKind.RING and self.width >= self.size:
            raise ValueError("ring wall must be thinner than its radius")
        if self.kind is IndenterKind.TEXT_GLYPH and self.text not in _GLYPHS:
            raise ValueError(f"no glyph for {self.text!r}; have {sorted(_GLYPHS)}")

    def profile(self, x, y):
        """Surface height above the indenter's lowest point; inf outside the footprint."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        rho = np.hypot(x, y)
        k = self.kind
        if k is IndenterKind.SPHERE:
            r = self.size
            with np.errstate(invalid="ignore"):
                return np.where(rho < r, r - np.sqrt(np.maximum(r * r - rho * rho, 0.0)), np.inf)
        if k is IndenterKind.CYLINDER:
            inside = rho <= self.size
        elif k is IndenterKind.RING:
            inside = (rho <= self.size) & (rho >= self.size - self.width)
        elif k is IndenterKind.CROSS:
            hw = self.width / 2
            inside = ((np.abs(x) <= self.size) & (np.abs(y) <= hw)) | \
                     ((np.abs(y) <= self.size) & (np.abs(x) <= hw))
        else:
            inside = self._glyph_mask(x, y)
        return np.where(inside, 0.0, np.inf)

    def _glyph_mask(self, x, y):
        rows = _GLYPHS[self.text]
        bits = np.array([[c == "1" for c in r] for r in rows])
        cell = self.size / bits.shape[0]
        col = np.floor(x / cell + bits.shape[1] / 2).astype(int)
        row = np.floor(y / cell + bits.shape[0] / 2).astype(int)
        ok = (col >= 0) & (col < bits.shape[1]) & (row >= 0) & (row < bits.shape[0])
        out = np.zeros(np.broadcast(x, y).shape, bool)
        out[ok] = bits[row[ok], col[ok]]
        return out

    def height_function(self, x, y, press: float):
        """Indentation depth (mm) the indenter imposes at (x, y) mm when pushed ``press`` mm in."""
        return np.maximum(press - self.profile(x, y), 0.0)

    def support_radius(self, press: float | None = None) -> float:
        """Radius (mm) of a disk containing the footprint, or the contact at ``press`` mm."""
        k = self.kind
        if k is IndenterKind.SPHERE and press is not None and press < self.size:
            return math.sqrt(press * (2 * self.size - press))
        if k is IndenterKind.CROSS:
            return math.hypot(self.size, self.width / 2)
        if k is IndenterKind.TEXT_GLYPH:
            return 0.5 * self.size * math.hypot(1.0, 5 / 7)
        return self.size


@dataclass(frozen=True)
class Keyframe:
    press_depth: float = 0.0                     # mm
    shear: tuple[float, float] = (0.0, 0.0)      # px
    center: tuple[float, float] | None = None    # px; None means frame centre

    def __post_init__(self):
        if self.press_depth < 0:
            raise ValueError("press_depth must be >= 0")
        object.__setattr__(self, "shear", tuple(float(v) for v in self.shear))
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(v) for v in self.center))


def default_shading() -> np.ndarray:
    """Per-channel (x, y) gradient gains for lights at 90, 210 and 330 degrees."""
    gain = 60.0
    ang = np.deg2rad([90.0, 210.0, 330.0])
    return gain * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass(frozen=True, eq=False)
class SimScene:
    indenter: IndenterShape = field(default_factory=IndenterShape)
    motion: tuple[Keyframe, ...] = (Keyframe(),)
    frame_size: tuple[int, int] = (288, 208)  # (width, height)
    marker_pitch: float = 16.0
    marker_radius: float = 3.0
    px_per_mm: float = 5.0
    gel_thickness: float = 1.0                # mm
    blur_per_thickness: float = 1.5           # Gaussian sigma, px per mm of gel
    contact_floor: float = 0.02               # fraction of peak depth treated as no contact
    shading: np.ndarray = field(default_factory=default_shading)
    base_color: tuple[float, float, float] = (185.0, 170.0, 150.0)
    marker_darkness: float = 0.25             # dot intensity as a fraction of the gel
    noise_sigma: float = 2.0
    shear_taper: float | None = 40.0          # px; None moves the whole gel rigidly
    frame_dt: float = 1.0 / 30.0
    seed: int = 0
    name: str = "scene"

    def __post_init__(self):
        if not self.marker_pitch > 2 * self.marker_radius:
            raise ValueError("marker_pitch must exceed twice marker_radius")
        if not self.motion:
            raise ValueError("motion needs at least one keyframe")
        object.__setattr__(self, "motion", tuple(self.motion))
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))
        sh = np.asarray(self.shading, float)
        if sh.shape != (3, 2):
            raise ValueError("shading must be a 3x2 array of per-channel (x, y) gains")
        sh.flags.writeable = False
        object.__setattr__(self, "shading", sh)

    @property
    def width(self) -> int:
        return self.frame_size[0]

    @property
    def height(self) -> int:
        return self.frame_size[1]

    def with_motion(self, motion: Sequence[Keyframe]) -> "SimScene":
        return replace(self, motion=tuple(motion))

    def marker_rest_positions(self) -> np.ndarray:
        """(n, 2) lattice centred in the frame, row-major."""
        p = self.marker_pitch
        nx = int(self.width // p)
        ny = int(self.height // p)
        ox = (self.width - nx * p) / 2 + p / 2
        oy = (self.height - ny * p) / 2 + p / 2
        xs = ox + p * np.arange(nx)
        ys = oy + p * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True, eq=False)
class SimFrame:
    frame: TactileFrame
    depth: DepthMap
    field: ShearField             # imposed displacement sampled at grid anchors
    contact_mask: np.ndarray
    markers_rest: np.ndarray      # (n, 2)
    markers: np.ndarray           # (n, 2) displaced positions
    marker_visible: np.ndarray    # (n,) dot contrast above the detection floor


def membrane_depth(scene: SimScene, kf: Keyframe) -> np.ndarray:
    """Clamped-height membrane: indenter height function, Gaussian-blurred, peak kept at press depth."""
    w, h = scene.frame_size
    cx, cy = kf.center if kf.center is not None else ((w - 1) / 2, (h - 1) / 2)
    if kf.press_depth == 0:
        return np.zeros((h, w))
    sigma = scene.blur_per_thickness * scene.gel_thickness
    reach = scene.indenter.support_radius(kf.press_depth) * scene.px_per_mm + 4 * sigma + 1
    if cx - reach < 0 or cy - reach < 0 or cx + reach > w - 1 or cy + reach > h - 1:
        raise IndenterOutOfFrame(
            f"contact support (radius {reach:.1f}px at ({cx:.1f}, {cy:.1f})) exits the {w}x{h} frame")
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    raw = scene.indenter.height_function((xx - cx) / scene.px_per_mm, (yy - cy) / scene.px_per_mm,
                                         kf.press_depth)
    if sigma > 0:
        d = ndimage.gaussian_filter(raw, sigma, mode="constant", truncate=4.0)
    else:
        d = raw
    peak = d.max()
    if peak <= 0:
        return np.zeros((h, w))
    d = d * (kf.press_depth / peak)
    d[d < scene.contact_floor * kf.press_depth] = 0.0
    return d


def shear_weight(scene: SimScene, contact: np.ndarray) -> np.ndarray:
    """Per-pixel fraction of the imposed shear: 1 in contact, cosine taper to 0 outside."""
    if scene.shear_taper is None:
        return np.ones(contact.shape)
    if not contact.any():
        return np.zeros(contact.shape)
    dist = ndimage.distance_transform_edt(~contact)
    t = np.clip(dist / scene.shear_taper, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def _sample(img: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(img, [pts[:, 1], pts[:, 0]], order=1, mode="nearest")


def _draw_markers(gel: np.ndarray, centers: np.ndarray, radius: float, darkness: float) -> np.ndarray:
    h, w = gel.shape[:2]
    alpha = np.zeros((h, w))
    rr = int(math.ceil(radius + 1))
    for x, y in centers:
        x0, x1 = max(int(math.floor(x)) - rr, 0), min(int(math.ceil(x)) + rr + 1, w)
        y0, y1 = max(int(math.floor(y)) - rr, 0), min(int(math.ceil(y)) + rr + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        a = np.clip(radius + 0.5 - np.hypot(xx - x, yy - y), 0.0, 1.0)
        np.maximum(alpha[y0:y1, x0:x1], a, out=alpha[y0:y1, x0:x1])
    return gel * (1.0 - alpha * (1.0 - darkness))[..., None]


def render_frame(scene: SimScene, index: int, grid: tuple[int, int] = (13, 18)) -> SimFrame:
    """Render keyframe ``index``; a pure function of (scene, index)."""
    if not 0 <= index < len(scene.motion):
        raise IndexError(f"keyframe {index} outside motion of length {len(scene.motion)}")
    kf = scene.motion[index]
    w, h = scene.frame_size
    depth = membrane_depth(scene, kf)
    contact = depth > 0

    gy, gx = np.gradient(depth)
    gx *= scene.px_per_mm
    gy *= scene.px_per_mm
    base = np.asarray(scene.base_color, float)
    gel = base + gx[..., None] * scene.shading[:, 0] + gy[..., None] * scene.shading[:, 1]
    gel = np.clip(gel, 0.0, 255.0)

    wgt = shear_weight(scene, contact)
    shear = np.asarray(kf.shear, float)
    rest = scene.marker_rest_positions()
    moved = rest + _sample(wgt, rest)[:, None] * shear
    img = _draw_markers(gel, moved, scene.marker_radius, scene.marker_darkness)

    rng = np.random.default_rng([scene.seed, index])
    if scene.noise_sigma > 0:
        img = img + rng.normal(0.0, scene.noise_sigma, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    gray_gel = (gel[..., 0] + 2 * gel[..., 1] + gel[..., 2]) / 4
    contrast = _sample(gray_gel, moved) * (1.0 - scene.marker_darkness)
    inside = (moved[:, 0] >= 0) & (moved[:, 0] <= w - 1) & (moved[:, 1] >= 0) & (moved[:, 1] <= h - 1)
    visible = inside & (contrast >= 40.0)

    anchors = grid_anchors(w, h, *grid)
    pts = anchors.reshape(-1, 2).astype(float)
    aw = _sample(wgt, pts).reshape(grid)
    gt = ShearField(aw * shear[0], aw * shear[1], anchors)

    frame = TactileFrame(pixels, timestamp=index * scene.frame_dt)
    return SimFrame(frame, DepthMap(depth), gt, contact, rest, moved, visible)


def render_sequence(scene: SimScene, grid: tuple[int, int] = (13, 18)) -> list[SimFrame]:
    return [render_frame(scene, i, grid) for i in range(len(scene.motion))]


def displacement_at(scene: SimScene, index: int, points: np.ndarray) -> np.ndarray:
    """Imposed displacement (px) of gel material resting at ``points``."""
    kf = scene.motion[index]
    contact = membrane_depth(scene, kf) > 0
    wgt = shear_weight(scene, contact)
    return _sample(wgt, np.asarray(points, float))[:, None] * np.asarray(kf.shear, float)


# -- scripted sequences ----------------------------------------------------

def return_to_rest_motion(rng: np.random.Generator, steps: int = 20, max_step: float = 1.0,
                          press: float = 1.0) -> list[Keyframe]:
    """Zero-shear start, a random outbound walk, then a straight return to zero shear.

    Every step moves the imposed shear by at most ``max_step`` px. The frame
    count is ``steps + 1``; the first and last frames share the same state.
    """
    half = steps // 2
    out = rng.uniform(-1.0, 1.0, (half, 2))
    out *= max_step / np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12) \
        * rng.uniform(0.5, 1.0, (half, 1))
    path = np.cumsum(out, axis=0)
    back_n = steps - half
    frac = 1.0 - np.arange(1, back_n + 1) / back_n
    path = np.vstack([path, path[-1] * frac[:, None]])
    frames = [Keyframe(press, (0.0, 0.0))]
    frames += [Keyframe(press, (float(x), float(y))) for x, y in path]
    return frames


def peg_wiggle_motion(contact: int = 10, explore: int = 30, insert: int = 12,
                      amplitude: float = 3.0, period: int = 10, settle: tuple[float, float] = (0.0, 1.5),
                      press: float = 1.0) -> list[Keyframe]:
    """Press in without shear, wiggle laterally, then hold a settled shear."""
    frames = [Keyframe(press * (i + 1) / contact) for i in range(contact)]
    for i in range(explore):
        frames.append(Keyframe(press, (amplitude * math.sin(2 * math.pi * (i + 1) / period), 0.0)))
    ramp = 3
    for i in range(insert):
        a = min(1.0, (i + 1) / ramp)
        frames.append(Keyframe(press, (a * settle[0], a * settle[1])))
    return frames


def peg_wiggle_scene(seed: int = 0, **kw) -> SimScene:
    """Cylindrical peg pressed in, wiggled while searching for a hole, then inserted.

    The first frame is the undeformed gel.
    """
    motion = [Keyframe(0.0)] + peg_wiggle_motion(**kw)
    return SimScene(indenter=IndenterShape(IndenterKind.CYLINDER, 10.0), motion=tuple(motion),
                    seed=seed, name="peg-wiggle")


def return_to_rest_scene(seed: int = 0, steps: int = 20, max_step: float = 1.0) -> SimScene:
    """Sphere held pressed while the shear walks out and comes straight back to zero."""
    motion = return_to_rest_motion(np.random.default_rng(seed), steps, max_step)
    return SimScene(motion=tuple(motion), seed=seed, name="return-to-rest")


# -- datasets --------------------------------------------------------------

ROLE_SPLIT = {"train": "train", "val": "val_object", "test": "test"}
VAL_FRACTION = 0.1


@dataclass(frozen=True)
class LabeledScene:
    scene: SimScene
    object_id: str
    role: str = "train"         # train | val (whole object) | test (unseen object)
    max_press: float = 1.0      # mm

    def __post_init__(self):
        if self.role not in ROLE_SPLIT:
            raise ValueError(f"role must be one of {sorted(ROLE_SPLIT)}, got {self.role!r}")


def sample_pose(rng: np.random.Generator, scene: SimScene, max_press: float,
                max_shear: float = 2.0) -> Keyframe:
    press = float(rng.uniform(0.4, 1.0) * max_press)
    sigma = scene.blur_per_thickness * scene.gel_thickness
    reach = scene.indenter.support_radius() * scene.px_per_mm + 4 * sigma + 2
    w, h = scene.frame_size
    if 2 * reach >= min(w, h) - 2:
        raise IndenterOutOfFrame(f"indenter of reach {reach:.1f}px cannot fit in {w}x{h}")
    cx = float(rng.uniform(reach, w - 1 - reach))
    cy = float(rng.uniform(reach, h - 1 - reach))
    shear = rng.uniform(-max_shear, max_shear, 2)
    return Keyframe(press, (float(shear[0]), float(shear[1])), (cx, cy))


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    split: str
    object_id: str
    pose: str


MANIFEST_HEADER = ("sample_id", "split", "object_id", "pose")


def format_pose(kf: Keyframe) -> str:
    cx, cy = kf.center
    return (f"press={kf.press_depth:.6f};dx={kf.shear[0]:.6f};dy={kf.shear[1]:.6f};"
            f"cx={cx:.3f};cy={cy:.3f}")


def parse_pose(text: str) -> dict[str, float]:
    return {k: float(v) for k, v in (item.split("=", 1) for item in text.split(";") if item)}


def write_manifest(path, rows: Sequence[ManifestRow]) -> None:
    lines = ["\t".join(MANIFEST_HEADER)]
    lines += ["\t".join((r.sample_id, r.split, r.object_id, r.pose)) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRow]:
    text = Path(path).read_text().splitlines()
    if not text or tuple(text[0].split("\t")) != MANIFEST_HEADER:
        raise ValueError(f"{path}: missing manifest header")
    rows = []
    for lineno, line in enumerate(text[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated columns")
        rows.append(ManifestRow(*parts))
    return rows


def generate_dataset(scenes: Sequence[LabeledScene], samples_per_scene: int, seed: int,
                     out_dir, grid: tuple[int, int] = (13, 18)) -> list[ManifestRow]:
    """Render paired (difference image, depth, shear) samples and a split manifest.

    Train objects hold out ``VAL_FRACTION`` of their samples as ``val``;
    whole objects with role ``val`` land in ``val_object``; role ``test``
    objects land in ``test`` and are never seen during fitting.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    rows = []
    n = 0
    for si, ls in enumerate(scenes):
        rng = np.random.default_rng([seed, si])
        held = set()
        if ls.role == "train" and samples_per_scene > 0:
            k = int(math.floor(VAL_FRACTION * samples_per_scene + 0.5))
            held = set(rng.permutation(samples_per_scene)[:k].tolist())
        for j in range(samples_per_scene):
            pose = sample_pose(rng, ls.scene, ls.max_press)
            noise_seed = int(rng.integers(0, 2 ** 31))
            sc = replace(ls.scene, motion=(Keyframe(0.0, (0.0, 0.0), pose.center), pose),
                         seed=noise_seed)
            rest = render_frame(sc, 0, grid)
            pressed = render_frame(sc, 1, grid)
            diff = difference_image(pressed.frame, rest.frame)
            sid = f"{n:04d}"
            try:
                write_difference_image(out / f"diff_{sid}.png", diff)
                write_depth_map(out / f"depth_{sid}.gsd", pressed.depth)
                write_shear_field(out / f"flow_{sid}.gsf", pressed.field)
            except OSError as e:
                raise OSError(f"writing sample {sid} in {out}: {e}") from e
            split = "val" if j in held else ROLE_SPLIT[ls.role]
            rows.append(ManifestRow(sid, split, ls.object_id, format_pose(pose)))
            n += 1
    write_manifest(out / "manifest.tsv", rows)
    return rows


def dataset_hash(directory) -> str:
    """SHA-256 over the manifest and every sample file it names, in manifest order."""
    d = Path(directory)
    h = hashlib.sha256()
    h.update((d / "manifest.tsv").read_bytes())
    for row in read_manifest(d / "manifest.tsv"):
        for name in (f"diff_{row.sample_id}.png", f"depth_{row.sample_id}.gsd", f"flow_{row.sample_id}.gsf"):
            p = d / name
            if p.exists():
                h.update(p.read_bytes())
    return h.hexdigest()


def standard_objects(**scene_kw) -> list[LabeledScene]:
    """Four training indenters and one unseen glyph, sized for the default sensor."""
    specs = [("sphere", IndenterShape(IndenterKind.SPHERE, 4.0), "train"),
             ("cylinder", IndenterShape(IndenterKind.CYLINDER, 3.0), "train"),
             ("cross", IndenterShape(IndenterKind.CROSS, 4.0, 1.5), "train"),
             ("ring", IndenterShape(IndenterKind.RING, 4.0, 1.5), "train"),
             ("glyph-T", IndenterShape(IndenterKind.TEXT_GLYPH, 6.0, text="T"), "test")]
    return [LabeledScene(SimScene(indenter=shape, name=name, **scene_kw), name, role)
            for name, shape, role in specs]
