"""Why the tracker fuses two estimates.

The shear walks out and comes straight back to zero. Chaining frame-to-frame
flow accumulates error; matching every frame against the rest frame does not
drift but loses track under large motion. The weighted mode follows the
chained estimate while the field is coherent and leans on the reference
estimate as it spreads.

    python3 demos/drift.py
"""
import numpy as np

from tactile.shear import Mode, track
from tactile.sim import render_sequence, return_to_rest_scene

print("seed  adjacent  reference  weighted   (mean |u| px on the final frame; truth is 0)")
finals = []
for seed in range(5):
    frames = [s.frame for s in render_sequence(return_to_rest_scene(seed))]
    row = [track(frames, mode)[-1][0].mean_magnitude() for mode in (Mode.ADJACENT, Mode.REFERENCE, Mode.WEIGHTED)]
    finals.append(row)
    print(f"{seed:4d}  {row[0]:8.3f}  {row[1]:9.3f}  {row[2]:8.3f}")
m = np.mean(finals, axis=0)
print(f"mean  {m[0]:8.3f}  {m[1]:9.3f}  {m[2]:8.3f}")

steps = track([s.frame for s in render_sequence(return_to_rest_scene(0))], Mode.WEIGHTED)
print("\nweighted run, seed 0:  step  d  omega")
for i, (_, st) in enumerate(steps[::4], start=1):
    print(f"  {4 * (i - 1) + 1:3d}  {st.d:.3f}  {st.omega:.3f}")
