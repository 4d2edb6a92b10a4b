"""Radial lens distortion: forward warp, rectification, straight lines.

    python3 demos/rectification.py
"""
import numpy as np

from tactile.core import TactileFrame
from tactile.depth import DistortionModel, distort, rectify
from tactile.sim import SimScene, render_frame

W, H = 288, 208
yy = np.mgrid[0:H, 0:W][0].astype(float)
rows = 255 - 200 * np.exp(-0.5 * ((yy - 40.0) / 1.5) ** 2)
line = TactileFrame(np.repeat(np.rint(rows)[..., None], 3, axis=2).astype(np.uint8))


def bow(frame):
    # intensity centroid of the dark line in each column, away from the borders
    g = 255.0 - frame.pixels[:, 30:-30, 1]
    g[g < 20] = 0
    ys = (g * np.arange(H)[:, None]).sum(0) / g.sum(0)
    return ys.max() - ys.min()


for k1 in (0.05, 0.1, 0.2):
    dm = DistortionModel.centered(W, H, k1)
    bent = distort(line, dm)
    print(f"k1={k1:.2f}: horizontal line bows by {bow(bent):.2f} px, {bow(rectify(bent, dm)):.2f} px after rectification")

f = render_frame(SimScene(seed=8), 0).frame
dm = DistortionModel.centered(W, H, 0.1)
inner = (slice(20, -20), slice(20, -20))
for order, name in ((1, "bilinear"), (3, "cubic")):
    back = rectify(distort(f, dm, order=order), dm, order=order)
    mae = np.abs(back.pixels.astype(int) - f.pixels)[inner].mean()
    print(f"marker frame round trip ({name}): mean abs error {mae:.2f} gray levels")
