"""Shear-field quiver plots as standalone SVG."""
from __future__ import annotations

import base64
import io
import math
import xml.etree.ElementTree as ET

import numpy as np
from PIL import Image

from .core import ShearField, TactileFrame

SVG_NS = "http://www.w3.org/2000/svg"


def _png_data_uri(frame: TactileFrame) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(frame.pixels), "RGB").save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def quiver_svg(field: ShearField, frame: TactileFrame | None = None, scale: float = 3.0,
               color: str = "#00e000", head: float = 3.0, min_length: float = 0.0,
               size: tuple[int, int] | None = None) -> str:
    """One arrow per valid cell, drawn from its anchor to anchor + scale * u.

    Vectors no longer than ``min_length`` px on screen (by default only
    zero vectors) become dots. Invalid cells are left out. ``frame``, when given, is embedded as the background.
    """
    if frame is not None:
        w, h = frame.width, frame.height
    elif size is not None:
        w, h = size
    else:
        raise ValueError("need a background frame or an explicit size")
    field.check_bounds(w, h)

    out = [f'<svg xmlns="{SVG_NS}" xmlns:xlink="http://www.w3.org/1999/xlink" '
           f'width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    if frame is not None:
        out.append(f'<image x="0" y="0" width="{w}" height="{h}" xlink:href="{_png_data_uri(frame)}"/>')
    out.append(f'<g stroke="{color}" fill="{color}" stroke-width="1">')
    for i in range(field.grid_h):
        for j in range(field.grid_w):
            if not field.valid[i, j]:
                continue
            x0, y0 = (float(v) for v in field.anchors[i, j])
            dx, dy = scale * float(field.u_x[i, j]), scale * float(field.u_y[i, j])
            length = math.hypot(dx, dy)
            if length <= min_length:
                out.append(f'<circle class="dot" cx="{x0:.2f}" cy="{y0:.2f}" r="1.2"/>')
                continue
            x1, y1 = x0 + dx, y0 + dy
            ux, uy = dx / length, dy / length
            hl = min(head, 0.5 * length)
            bx, by = x1 - hl * ux, y1 - hl * uy
            px, py = -uy * hl * 0.5, ux * hl * 0.5
            out.append(f'<line class="arrow" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}"/>')
            out.append(f'<polygon class="head" points="{x1:.2f},{y1:.2f} {bx + px:.2f},{by + py:.2f} '
                       f'{bx - px:.2f},{by - py:.2f}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_quiver(path, field: ShearField, frame: TactileFrame | None = None, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(quiver_svg(field, frame, **kw))


def parse_quiver(svg_text: str) -> dict:
    """Read back arrows and dots: {'arrows': [(x1, y1, x2, y2), ...], 'dots': [(cx, cy), ...]}."""
    root = ET.fromstring(svg_text)
    arrows, dots = [], []
    for el in root.iter():
        tag = el.tag.split("}")[-1]
        cls = el.get("class")
        if tag == "line" and cls == "arrow":
            arrows.append(tuple(float(el.get(k)) for k in ("x1", "y1", "x2", "y2")))
        elif tag == "circle" and cls == "dot":
            dots.append((float(el.get("cx")), float(el.get("cy"))))
    return {"arrows": arrows, "dots": dots}
