"""Marker detection and block-matching flow on a simulated gel.

Renders a sphere pressed into the gel and dragged sideways, finds the dots,
then compares the estimated 13x18 displacement field with the imposed one.

    python3 demos/markers_and_flow.py [out_dir]
"""
import numpy as np

from tactile import flow
from tactile.flow import detect_markers, match_markers
from tactile.quiver import write_quiver
from tactile.sim import Keyframe, SimScene, render_frame

from _common import out_dir

out = out_dir("demo_out/flow")
scene = SimScene(motion=(Keyframe(0.0), Keyframe(0.8, (2.5, -1.0))), seed=3)
rest, pressed = render_frame(scene, 0), render_frame(scene, 1)

found = detect_markers(pressed.frame)
idx, dist = match_markers(found.centroids, pressed.markers, tol=3.0)
print(f"markers: {len(found)} found, {np.sum(idx >= 0)} of {len(pressed.markers)} matched, "
      f"median centroid error {np.median(dist[idx >= 0]):.3f} px")

est = flow(pressed.frame, rest.frame)
err = np.hypot(est.field.u_x - pressed.field.u_x, est.field.u_y - pressed.field.u_y)[est.valid_mask]
print(f"flow: {est.valid_mask.sum()} valid cells, peak |u| {est.field.max_magnitude():.2f} px, "
      f"error vs imposed: median {np.median(err):.3f} px, max {err.max():.3f} px")

write_quiver(out / "flow.svg", est.field, pressed.frame, scale=4.0)
print(f"wrote {out / 'flow.svg'}")
