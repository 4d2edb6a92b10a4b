"""Peg insertion: contact, exploratory wiggle, settled insertion.

Tracks the stream in weighted mode, splits the mean-magnitude trace into
phases, reports the slip score and writes a quiver SVG per phase.

    python3 demos/peg_wiggle.py [out_dir]
"""
from tactile.quiver import write_quiver
from tactile.shear import Mode, detect_phases, slip_score, track
from tactile.sim import peg_wiggle_scene, render_sequence

from _common import out_dir

out = out_dir("demo_out/peg")
sims = render_sequence(peg_wiggle_scene(0))
frames = [s.frame for s in sims]
steps = track(frames, Mode.WEIGHTED)
fields = [f for f, _ in steps]
mean_u = [0.0] + [st.mean_magnitude for _, st in steps]

phases = detect_phases(mean_u)
print("mean |u| per frame:")
print("  " + " ".join(f"{v:.1f}" for v in mean_u))
print(f"phases: contact ends at frame {phases[0]}, exploration ends at frame {phases[1]}")

slips = [slip_score(fields[i], fields[max(0, i - 5):i]) for i in range(1, len(fields))]
print(f"slip score: max during wiggle {max(slips[phases[0]:phases[1] - 1]):.3f}, "
      f"max while settled {max(slips[phases[1] + 3:]):.3f}")

for name, i in (("contact", phases[0] - 1), ("explore", (phases[0] + phases[1]) // 2), ("settled", len(frames) - 1)):
    write_quiver(out / f"{name}.svg", fields[i - 1], frames[i], scale=3.0)
    print(f"wrote {out / name}.svg (frame {i})")
