import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage

from tactile.core import (DepthMap, DifferenceImage, DimensionMismatch, Distortion, DistortionMismatch,
                          FormatError, ShearConfig, ShearField, TactileFrame, decode_difference_png,
                          depth_map_from_bytes, depth_map_to_bytes, difference_image,
                          encode_difference_png, grid_anchors, read_depth_map, read_frame,
                          read_shear_field, shear_field_from_bytes, shear_field_to_bytes,
                          validate_stream, write_depth_map, write_frame, write_shear_field)
from tactile.sim import Keyframe, SimScene, render_frame, render_sequence

from conftest import random_field, random_frame

frames = hnp.arrays(np.uint8, (32, 36, 3))


def test_frame_checks():
    with pytest.raises(DimensionMismatch):
        TactileFrame(np.zeros((31, 40, 3), np.uint8))
    with pytest.raises(DimensionMismatch):
        TactileFrame(np.zeros((40, 40), np.uint8))
    with pytest.raises(ValueError):
        TactileFrame(np.zeros((40, 40, 3), np.uint8), timestamp=-1.0)
    f = TactileFrame(np.zeros((40, 40, 3), np.uint8))
    assert not f.pixels.flags.writeable


def test_difference_arithmetic():
    a = np.full((40, 40, 3), 7, np.uint8)
    b = a.copy()
    a[10, 10] = (200, 100, 50)
    b[10, 10] = (180, 110, 50)
    d = difference_image(TactileFrame(a), TactileFrame(b))
    assert d.values.dtype == np.int16
    assert tuple(d.values[10, 10]) == (20, -10, 0)
    assert np.count_nonzero(d.values) == 2


@settings(max_examples=50, deadline=None)
@given(frames, frames)
def test_difference_antisymmetric(a, b):
    fa, fb = TactileFrame(a), TactileFrame(b)
    assert difference_image(fa, fb) == -difference_image(fb, fa)
    assert not difference_image(fa, fa).values.any()


def test_difference_extremes():
    white = TactileFrame(np.full((32, 32, 3), 255, np.uint8))
    black = TactileFrame(np.zeros((32, 32, 3), np.uint8))
    assert difference_image(white, black).values.min() == 255
    assert difference_image(black, white).values.max() == -255


def test_difference_mismatch():
    a = TactileFrame(np.zeros((32, 32, 3), np.uint8))
    with pytest.raises(DimensionMismatch):
        difference_image(a, TactileFrame(np.zeros((32, 40, 3), np.uint8)))
    with pytest.raises(DistortionMismatch):
        difference_image(a, a.replace(distortion=Distortion.DISTORTED))


def test_press_difference_confined_to_contact():
    sc = SimScene(motion=(Keyframe(0.0), Keyframe(1.0)), noise_sigma=0.0)
    rest, press = render_frame(sc, 0), render_frame(sc, 1)
    d = difference_image(press.frame, rest.frame)
    changed = np.abs(d.values).max(axis=2) > 0
    assert changed.any()
    # shading uses central differences, so allow the one-pixel rim around the mask
    rim = ndimage.binary_dilation(press.contact_mask)
    assert not (changed & ~rim).any()


def test_validate_stream(rng):
    assert validate_stream([]) == []
    f0 = random_frame(rng, t=0.0)
    f1 = random_frame(rng, t=0.0)
    v = validate_stream([f0, f1])
    assert [(x.index, x.rule) for x in v] == [(1, "strictly increasing")]
    f2 = TactileFrame(np.zeros((40, 50, 3), np.uint8), 1.0, Distortion.DISTORTED)
    rules = {x.rule for x in validate_stream([f0, f2])}
    assert rules == {"constant dimensions", "constant distortion"}


def test_simulated_stream_is_valid():
    sc = SimScene(motion=tuple(Keyframe(0.5, (0.02 * i, 0.0)) for i in range(100)))
    fr = [s.frame for s in render_sequence(sc)]
    assert len(fr) == 100
    assert validate_stream(fr) == []


def test_grid_anchors_match_marker_lattice():
    a = grid_anchors(288, 208, 13, 18)
    assert a.shape == (13, 18, 2)
    assert list(a[0, :3, 0]) == [8, 24, 40]
    assert list(a[:3, 0, 1]) == [8, 24, 40]
    rest = SimScene().marker_rest_positions()
    assert np.array_equal(np.sort(rest, axis=0), np.sort(a.reshape(-1, 2), axis=0))


def _gsf_oracle(sf):
    # written out by hand from the format description
    out = b"GSF1" + struct.pack("<II", sf.grid_h, sf.grid_w)
    for i in range(sf.grid_h):
        for j in range(sf.grid_w):
            out += struct.pack("<ff", *sf.anchors[i, j])
    out += b"".join(struct.pack("<f", v) for v in sf.u_x.ravel())
    out += b"".join(struct.pack("<f", v) for v in sf.u_y.ravel())
    return out


def test_gsf_layout(rng):
    sf = random_field(rng)
    assert shear_field_to_bytes(sf) == _gsf_oracle(sf)


def test_gsf_roundtrip(tmp_path, rng):
    for vf in (1.0, 0.7):
        sf = random_field(rng, valid_fraction=vf)
        p = tmp_path / "f.gsf"
        write_shear_field(p, sf)
        back = read_shear_field(p)
        assert back == sf
        assert back.u_x.tobytes() == sf.u_x.tobytes()
        assert p.read_bytes() == shear_field_to_bytes(back)


def test_gsf_mask_trailer(rng):
    sf = random_field(rng, valid_fraction=0.5)
    buf = shear_field_to_bytes(sf)
    assert buf.startswith(_gsf_oracle(sf))
    assert buf[len(_gsf_oracle(sf)):][:4] == b"MASK"


def test_gsf_rejects_garbage():
    with pytest.raises(FormatError):
        shear_field_from_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError):
        shear_field_from_bytes(b"GSF1" + struct.pack("<II", 2, 2) + bytes(10))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, (3, 4), elements=st.floats(-50, 50, width=32)),
       hnp.arrays(np.float32, (3, 4), elements=st.floats(-50, 50, width=32)))
def test_gsf_roundtrip_property(ux, uy):
    sf = ShearField(ux, uy, grid_anchors(64, 48, 3, 4))
    assert shear_field_from_bytes(shear_field_to_bytes(sf)) == sf


def test_depth_map(tmp_path):
    with pytest.raises(ValueError):
        DepthMap(-np.ones((32, 32)))
    d = DepthMap(np.linspace(0, 1, 40 * 36).reshape(36, 40))
    assert depth_map_from_bytes(depth_map_to_bytes(d)) == d
    write_depth_map(tmp_path / "d.gsd", d)
    raw = (tmp_path / "d.gsd").read_bytes()
    assert raw[:4] == b"GSD1" and struct.unpack_from("<II", raw, 4) == (40, 36)
    assert read_depth_map(tmp_path / "d.gsd") == d


def test_frame_roundtrip(tmp_path, rng):
    f = random_frame(rng, t=1.0 / 3.0).replace(distortion=Distortion.DISTORTED)
    write_frame(tmp_path / "f.png", f)
    assert read_frame(tmp_path / "f.png") == f


def test_difference_png_encoding(rng):
    v = rng.integers(-255, 256, (32, 32, 3)).astype(np.int16)
    d = DifferenceImage(v)
    img = encode_difference_png(d)
    assert np.array_equal(np.asarray(img).astype(int), (v.astype(int) >> 1) + 128)
    back = decode_difference_png(img).values.astype(int)
    assert np.abs(back - v).max() <= 1
    assert back.min() >= -255 and back.max() <= 255


def test_shear_config_checks():
    with pytest.raises(ValueError):
        ShearConfig(k=0)
    with pytest.raises(ValueError):
        ShearConfig(search=0)
    assert (ShearConfig().grid_h, ShearConfig().grid_w) == (13, 18)


def test_field_bounds():
    a = grid_anchors(288, 208, 13, 18)
    sf = ShearField(np.zeros((13, 18)), np.zeros((13, 18)), a)
    sf.check_bounds(288, 208)
    with pytest.raises(DimensionMismatch):
        sf.check_bounds(100, 100)
