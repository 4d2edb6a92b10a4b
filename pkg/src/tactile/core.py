"""Shared types, invariant checks and on-disk formats for tactile frames and fields."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

MIN_FRAME_SIZE = 32

GSF_MAGIC = b"GSF1"
GSF_MASK_MAGIC = b"MASK"
GSD_MAGIC = b"GSD1"


class TactileError(Exception):
    pass


class DimensionMismatch(TactileError, ValueError):
    pass


class DistortionMismatch(TactileError, ValueError):
    pass


class DegenerateField(TactileError, ValueError):
    pass


class FormatError(TactileError, ValueError):
    pass


class Distortion(enum.Enum):
    DISTORTED = "distorted"
    RECTIFIED = "rectified"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TactileFrame:
    """One RGB sensor image, ``pixels`` is (height, width, 3) uint8."""

    pixels: np.ndarray
    timestamp: float = 0.0
    distortion: Distortion = Distortion.RECTIFIED

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionMismatch(f"expected (H, W, 3) pixels, got {px.shape}")
        if px.shape[0] < MIN_FRAME_SIZE or px.shape[1] < MIN_FRAME_SIZE:
            raise DimensionMismatch(f"frame {px.shape[1]}x{px.shape[0]} below {MIN_FRAME_SIZE}px")
        if px.dtype != np.uint8:
            if not np.all((px >= 0) & (px <= 255)):
                raise ValueError("pixel values outside 0..255")
            px = px.astype(np.uint8)
        if not np.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"timestamp must be finite and >= 0, got {self.timestamp}")
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "distortion", Distortion(self.distortion))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def gray4(self) -> np.ndarray:
        """Grayscale scaled by 4: r + 2g + b as int32."""
        p = self.pixels.astype(np.int32)
        return p[..., 0] + 2 * p[..., 1] + p[..., 2]

    def replace(self, **kw) -> "TactileFrame":
        args = dict(pixels=self.pixels, timestamp=self.timestamp, distortion=self.distortion)
        args.update(kw)
        return TactileFrame(**args)

    def __eq__(self, other):
        if not isinstance(other, TactileFrame):
            return NotImplemented
        return (self.timestamp == other.timestamp and self.distortion == other.distortion
                and np.array_equal(self.pixels, other.pixels))

    __hash__ = None


def grid_anchors(width: int, height: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Uniform lattice with half-cell margins, (grid_h, grid_w, 2) integer (x, y) pixel coords."""
    xs = np.floor((np.arange(grid_w) + 0.5) * width / grid_w)
    ys = np.floor((np.arange(grid_h) + 0.5) * height / grid_h)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1).astype(np.float32)


@dataclass(frozen=True, eq=False)
class ShearField:
    """Grid of 2D displacement vectors in pixels (the two-channel shear image).

    Arrays are stored as float32 so that GSF1 serialization is lossless.
    ``valid`` marks cells whose vectors came from a trusted match.
    """

    u_x: np.ndarray
    u_y: np.ndarray
    anchors: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        ux = np.asarray(self.u_x, dtype=np.float32)
        uy = np.asarray(self.u_y, dtype=np.float32)
        an = np.asarray(self.anchors, dtype=np.float32)
        if ux.ndim != 2 or ux.shape != uy.shape:
            raise DimensionMismatch(f"u_x {ux.shape} and u_y {uy.shape} must be equal 2D grids")
        if an.shape != ux.shape + (2,):
            raise DimensionMismatch(f"anchors {an.shape} do not match grid {ux.shape}")
        if not (np.all(np.isfinite(ux)) and np.all(np.isfinite(uy)) and np.all(np.isfinite(an))):
            raise ValueError("shear field entries must be finite")
        valid = np.ones(ux.shape, bool) if self.valid is None else np.asarray(self.valid, bool)
        if valid.shape != ux.shape:
            raise DimensionMismatch("valid mask shape does not match grid")
        for name, a in (("u_x", ux), ("u_y", uy), ("anchors", an), ("valid", valid)):
            object.__setattr__(self, name, _frozen(a))

    @classmethod
    def zeros(cls, anchors: np.ndarray) -> "ShearField":
        shape = np.asarray(anchors).shape[:2]
        return cls(np.zeros(shape, np.float32), np.zeros(shape, np.float32), anchors)

    @property
    def grid_h(self) -> int:
        return self.u_x.shape[0]

    @property
    def grid_w(self) -> int:
        return self.u_x.shape[1]

    def as_image(self) -> np.ndarray:
        """(grid_h, grid_w, 2) float32 array, channels (u_x, u_y)."""
        return np.stack([self.u_x, self.u_y], axis=-1)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u_x.astype(np.float64), self.u_y.astype(np.float64))

    def mean_magnitude(self) -> float:
        mag = self.magnitude()[self.valid]
        return float(mag.mean()) if mag.size else 0.0

    def max_magnitude(self) -> float:
        mag = self.magnitude()[self.valid]
        return float(mag.max()) if mag.size else 0.0

    def check_bounds(self, width: int, height: int) -> None:
        a = self.anchors
        if np.any(a[..., 0] < 0) or np.any(a[..., 0] > width - 1) \
                or np.any(a[..., 1] < 0) or np.any(a[..., 1] > height - 1):
            raise DimensionMismatch(f"anchors fall outside a {width}x{height} frame")

    def __eq__(self, other):
        if not isinstance(other, ShearField):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("u_x", "u_y", "anchors", "valid"))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel indentation depth in mm on the rectified image grid (0 = no contact)."""

    depth: np.ndarray
    distortion: Distortion = field(default=Distortion.RECTIFIED)

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float32)
        if d.ndim != 2:
            raise DimensionMismatch(f"depth must be 2D, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("depth entries must be finite")
        if np.any(d < 0):
            raise ValueError("depth must be non-negative")
        if Distortion(self.distortion) is not Distortion.RECTIFIED:
            raise DistortionMismatch("depth maps live in the rectified frame")
        object.__setattr__(self, "depth", _frozen(d))

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def contact_mask(self) -> np.ndarray:
        return self.depth > 0

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return np.array_equal(self.depth, other.depth)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DifferenceImage:
    """Signed deformed-minus-undeformed pixels, int16 (H, W, 3) in [-255, 255]."""

    values: np.ndarray
    distortion: Distortion = Distortion.RECTIFIED

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[2] != 3:
            raise DimensionMismatch(f"expected (H, W, 3) values, got {v.shape}")
        if np.any(v < -255) or np.any(v > 255):
            raise ValueError("difference values outside [-255, 255]")
        object.__setattr__(self, "values", _frozen(v.astype(np.int16)))
        object.__setattr__(self, "distortion", Distortion(self.distortion))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __neg__(self):
        return DifferenceImage(-self.values, self.distortion)

    def __eq__(self, other):
        if not isinstance(other, DifferenceImage):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class ShearConfig:
    grid_h: int = 13
    grid_w: int = 18
    k: float = 50.0         # sigmoid steepness, 1/px
    m: float = 0.2          # sigmoid midpoint, px
    window: int = 6         # block radius, px
    search: int = 6         # max displacement searched, px
    residual_ceiling: float = 0.12  # fraction of max window SAD

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if not self.m >= 0:
            raise ValueError("m must be >= 0")
        if self.grid_h < 2 or self.grid_w < 2:
            raise ValueError("grid must be at least 2x2")
        if self.search < 1:
            raise ValueError("search must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.residual_ceiling <= 1:
            raise ValueError("residual_ceiling must be in (0, 1]")


def check_compatible(a, b) -> None:
    """Raise unless two frames (or images) share size and distortion state."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame sizes differ: {a.shape} vs {b.shape}")
    if a.distortion != b.distortion:
        raise DistortionMismatch(f"distortion states differ: {a.distortion.value} vs {b.distortion.value}")


def difference_image(deformed: TactileFrame, undeformed: TactileFrame) -> DifferenceImage:
    check_compatible(deformed, undeformed)
    values = deformed.pixels.astype(np.int16) - undeformed.pixels.astype(np.int16)
    return DifferenceImage(values, deformed.distortion)


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    detail: str = ""


def validate_stream(frames: Sequence[TactileFrame]) -> list[Violation]:
    """Check a frame sequence; returns every violation found (empty list means ok)."""
    out = []
    if not frames:
        return out
    first = frames[0]
    for i, f in enumerate(frames[1:], start=1):
        prev = frames[i - 1]
        if not f.timestamp > prev.timestamp:
            out.append(Violation(i, "strictly increasing",
                                 f"timestamp {f.timestamp} after {prev.timestamp}"))
        if f.shape != first.shape:
            out.append(Violation(i, "constant dimensions", f"{f.shape} vs {first.shape}"))
        if f.distortion != first.distortion:
            out.append(Violation(i, "constant distortion",
                                 f"{f.distortion.value} vs {first.distortion.value}"))
    return out


# -- serialization ---------------------------------------------------------

def shear_field_to_bytes(sf: ShearField) -> bytes:
    parts = [GSF_MAGIC, struct.pack("<II", sf.grid_h, sf.grid_w),
             sf.anchors.astype("<f4").tobytes(),
             sf.u_x.astype("<f4").tobytes(),
             sf.u_y.astype("<f4").tobytes()]
    if not sf.valid.all():
        # optional trailer, absent when every cell is valid
        parts += [GSF_MASK_MAGIC, sf.valid.astype(np.uint8).tobytes()]
    return b"".join(parts)


def shear_field_from_bytes(buf: bytes) -> ShearField:
    if buf[:4] != GSF_MAGIC:
        raise FormatError("not a GSF1 stream")
    gh, gw = struct.unpack_from("<II", buf, 4)
    n = gh * gw
    off = 12
    need = off + 4 * n * 4
    if len(buf) < need:
        raise FormatError(f"GSF1 stream truncated: {len(buf)} < {need} bytes")
    anchors = np.frombuffer(buf, "<f4", 2 * n, off).reshape(gh, gw, 2)
    off += 8 * n
    ux = np.frombuffer(buf, "<f4", n, off).reshape(gh, gw)
    off += 4 * n
    uy = np.frombuffer(buf, "<f4", n, off).reshape(gh, gw)
    off += 4 * n
    valid = None
    if len(buf) > off:
        if buf[off:off + 4] != GSF_MASK_MAGIC or len(buf) != off + 4 + n:
            raise FormatError("unrecognised GSF1 trailer")
        valid = np.frombuffer(buf, np.uint8, n, off + 4).reshape(gh, gw).astype(bool)
    return ShearField(ux, uy, anchors, valid)


def write_shear_field(path, sf: ShearField) -> None:
    Path(path).write_bytes(shear_field_to_bytes(sf))


def read_shear_field(path) -> ShearField:
    return shear_field_from_bytes(Path(path).read_bytes())


def depth_map_to_bytes(dm: DepthMap) -> bytes:
    return GSD_MAGIC + struct.pack("<II", dm.width, dm.height) + dm.depth.astype("<f4").tobytes()


def depth_map_from_bytes(buf: bytes) -> DepthMap:
    if buf[:4] != GSD_MAGIC:
        raise FormatError("not a GSD1 stream")
    w, h = struct.unpack_from("<II", buf, 4)
    if len(buf) != 12 + 4 * w * h:
        raise FormatError("GSD1 stream has wrong length")
    return DepthMap(np.frombuffer(buf, "<f4", w * h, 12).reshape(h, w))


def write_depth_map(path, dm: DepthMap) -> None:
    Path(path).write_bytes(depth_map_to_bytes(dm))


def read_depth_map(path) -> DepthMap:
    return depth_map_from_bytes(Path(path).read_bytes())


def _sidecar_path(png_path: Path) -> Path:
    return png_path.with_suffix(".txt")


def write_frame(path, frame: TactileFrame) -> None:
    """PNG pixels plus a key=value sidecar (same stem, .txt) for timestamp and distortion."""
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(frame.pixels), "RGB").save(path, format="PNG")
    _sidecar_path(path).write_text(
        f"timestamp={frame.timestamp!r}\ndistortion={frame.distortion.value}\n"
        f"width={frame.width}\nheight={frame.height}\n")


def read_frame(path) -> TactileFrame:
    path = Path(path)
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"))
    meta = {}
    side = _sidecar_path(path)
    if side.exists():
        for lineno, line in enumerate(side.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{side}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    try:
        ts = float(meta.get("timestamp", 0.0))
        dist = Distortion(meta.get("distortion", Distortion.RECTIFIED.value))
    except ValueError as e:
        raise FormatError(f"{side}: {e}") from None
    return TactileFrame(pixels, ts, dist)


def encode_difference_png(diff: DifferenceImage) -> Image.Image:
    """Offset encoding stored = floor(value / 2) + 128; drops the least significant bit."""
    stored = (diff.values.astype(np.int32) >> 1) + 128
    return Image.fromarray(stored.astype(np.uint8), "RGB")


def decode_difference_png(img: Image.Image) -> DifferenceImage:
    stored = np.asarray(img.convert("RGB")).astype(np.int16)
    return DifferenceImage(np.clip((stored - 128) * 2, -255, 255))


def write_difference_image(path, diff: DifferenceImage) -> None:
    encode_difference_png(diff).save(Path(path), format="PNG")


def read_difference_image(path) -> DifferenceImage:
    with Image.open(path) as im:
        return decode_difference_png(im)
