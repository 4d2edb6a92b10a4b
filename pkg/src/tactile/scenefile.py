"""Scene description files: INI-style sections of ``key = value`` lines.

Example::

    [sensor]
    width = 288
    height = 208
    marker_pitch = 16
    marker_radius = 3
    px_per_mm = 5
    noise_sigma = 2
    shear_taper = 40        # or "rigid"

    [object.sphere]         # dataset objects, one section each
    kind = sphere           # sphere | cylinder | cross | ring | text
    size = 4.0              # mm
    role = train            # train | val | test
    max_press = 1.0

    [sequence]              # optional frame stream for ``tactile track``
    object = sphere
    preset = peg-wiggle     # or list [keyframe.N] sections instead

    [keyframe.0]
    press = 0.5
    shear = 1.0, 0.0
    center = 143.5, 103.5
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .sim import (IndenterKind, IndenterShape, Keyframe, LabeledScene, ROLE_SPLIT, SimScene,
                  peg_wiggle_motion, return_to_rest_motion)

SENSOR_KEYS = {
    "width": int, "height": int, "marker_pitch": float, "marker_radius": float,
    "px_per_mm": float, "noise_sigma": float, "gel_thickness": float,
    "blur_per_thickness": float, "marker_darkness": float, "frame_dt": float,
}
OBJECT_KEYS = {"kind", "size", "width", "text", "role", "max_press"}
SEQUENCE_KEYS = {"object", "preset", "seed"}
KEYFRAME_KEYS = {"press", "shear", "center"}
PRESETS = ("peg-wiggle", "return-to-rest")


class SceneParseError(ValueError):
    def __init__(self, path, lineno, message):
        self.path, self.lineno = str(path), lineno
        where = f"{self.path}:{lineno}" if lineno else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class SceneFile:
    base: SimScene
    objects: list[LabeledScene] = field(default_factory=list)
    sequence: SimScene | None = None


def _line_index(text: str) -> dict:
    """(section, key) -> line number, and (section, None) -> header line."""
    idx = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            idx[(section, None)] = n
        elif section and "=" in line:
            idx[(section, line.split("=", 1)[0].strip().lower())] = n
    return idx


def parse_scene(path) -> SceneFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise SceneParseError(path, 0, f"cannot read scene file: {e.strerror}") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as e:
        raise SceneParseError(path, e.lineno, "key/value line before any [section] header") from None
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        raise SceneParseError(path, lineno, f"cannot parse line {line.strip()!r}") from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise SceneParseError(path, e.lineno, e.message.split(": ", 1)[-1]) from None
    except configparser.Error as e:
        raise SceneParseError(path, 0, str(e)) from None

    lines = _line_index(text)

    def fail(section, key, msg):
        raise SceneParseError(path, lines.get((section, key), lines.get((section, None), 0)), msg)

    def number(section, key, kind=float):
        raw = cp.get(section, key)
        try:
            return kind(raw)
        except ValueError:
            fail(section, key, f"{key} must be {'an integer' if kind is int else 'a number'}, got {raw!r}")

    def pair(section, key):
        raw = cp.get(section, key)
        parts = [p.strip() for p in raw.split(",")]
        try:
            a, b = (float(p) for p in parts)
        except ValueError:
            fail(section, key, f"{key} must be two comma-separated numbers, got {raw!r}")
        return a, b

    known = {"sensor", "sequence"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith(("object.", "keyframe.")):
            fail(sec, None, f"unknown section [{sec}]")

    sensor = {}
    if cp.has_section("sensor"):
        for key in cp.options("sensor"):
            if key == "shear_taper":
                raw = cp.get("sensor", key)
                sensor[key] = None if raw.strip().lower() == "rigid" else number("sensor", key)
            elif key in SENSOR_KEYS:
                sensor[key] = number("sensor", key, SENSOR_KEYS[key])
            else:
                fail("sensor", key, f"unknown sensor key {key!r}")
    if "width" in sensor or "height" in sensor:
        sensor["frame_size"] = (sensor.pop("width", 288), sensor.pop("height", 208))
    try:
        base = SimScene(**sensor)
    except ValueError as e:
        fail("sensor", None, str(e))

    def shape_from(sec):
        for key in cp.options(sec):
            if key not in OBJECT_KEYS:
                fail(sec, key, f"unknown object key {key!r}")
        try:
            kind = IndenterKind(cp.get(sec, "kind", fallback="sphere").strip())
        except ValueError:
            fail(sec, "kind", f"kind must be one of {[k.value for k in IndenterKind]}")
        kw = {"kind": kind}
        for key in ("size", "width"):
            if cp.has_option(sec, key):
                kw[key] = number(sec, key)
        if cp.has_option(sec, "text"):
            kw["text"] = cp.get(sec, "text").strip()
        try:
            return IndenterShape(**kw)
        except ValueError as e:
            fail(sec, None, str(e))

    objects = []
    shapes = {}
    for sec in cp.sections():
        if not sec.startswith("object."):
            continue
        name = sec.split(".", 1)[1]
        shape = shape_from(sec)
        shapes[name] = shape
        role = cp.get(sec, "role", fallback="train").strip()
        if role not in ROLE_SPLIT:
            fail(sec, "role", f"role must be one of {sorted(ROLE_SPLIT)}, got {role!r}")
        max_press = number(sec, "max_press") if cp.has_option(sec, "max_press") else 1.0
        if max_press <= 0:
            fail(sec, "max_press", "max_press must be > 0")
        objects.append(LabeledScene(_with(base, indenter=shape, name=name), name, role, max_press))

    keyframes = []
    for sec in sorted((s for s in cp.sections() if s.startswith("keyframe.")),
                      key=lambda s: _keyframe_index(s, fail)):
        for key in cp.options(sec):
            if key not in KEYFRAME_KEYS:
                fail(sec, key, f"unknown keyframe key {key!r}")
        press = number(sec, "press") if cp.has_option(sec, "press") else 0.0
        if press < 0:
            fail(sec, "press", "press must be >= 0")
        shear = pair(sec, "shear") if cp.has_option(sec, "shear") else (0.0, 0.0)
        center = pair(sec, "center") if cp.has_option(sec, "center") else None
        keyframes.append(Keyframe(press, shear, center))

    sequence = None
    if cp.has_section("sequence") or keyframes:
        opts = cp.options("sequence") if cp.has_section("sequence") else []
        for key in opts:
            if key not in SEQUENCE_KEYS:
                fail("sequence", key, f"unknown sequence key {key!r}")
        obj = cp.get("sequence", "object", fallback=None) if opts else None
        if obj is not None and obj.strip() not in shapes:
            fail("sequence", "object", f"sequence object {obj!r} has no [object.{obj}] section")
        shape = shapes[obj.strip()] if obj is not None else base.indenter
        preset = cp.get("sequence", "preset", fallback=None) if opts else None
        seq_seed = number("sequence", "seed", int) if "seed" in opts else 0
        if preset is not None:
            preset = preset.strip()
            if preset not in PRESETS:
                fail("sequence", "preset", f"preset must be one of {list(PRESETS)}, got {preset!r}")
            if keyframes:
                fail("sequence", "preset", "give either a preset or [keyframe.N] sections, not both")
            if preset == "peg-wiggle":
                keyframes = [Keyframe(0.0)] + peg_wiggle_motion()
            else:
                keyframes = return_to_rest_motion(np.random.default_rng(seq_seed))
        if not keyframes:
            fail("sequence", None, "sequence has no keyframes")
        sequence = _with(base, indenter=shape, motion=tuple(keyframes), seed=seq_seed, name="sequence")

    return SceneFile(base, objects, sequence)


def _keyframe_index(sec, fail):
    tail = sec.split(".", 1)[1]
    if not tail.isdigit():
        fail(sec, None, f"keyframe sections are [keyframe.N] with integer N, got [{sec}]")
    return int(tail)


def _with(scene: SimScene, **kw) -> SimScene:
    return replace(scene, **kw)
