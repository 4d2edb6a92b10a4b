"""Simulated dataset, patch ridge depth model, evaluation.

Generates the five standard objects (four for fitting, a letter "T" held out
as an unseen shape), fits the model and scores every split. About a minute.

    python3 demos/depth_model.py [out_dir] [samples_per_object]
"""
import sys
from collections import Counter

from tactile.core import difference_image, write_depth_map
from tactile.depth import Dataset, evaluate, fit_depth_model, predict_depth, write_depth_model
from tactile.sim import IndenterKind, IndenterShape, Keyframe, SimScene, generate_dataset, render_frame, standard_objects

from _common import out_dir

out = out_dir("demo_out/depth")
n = int(sys.argv[2]) if len(sys.argv) > 2 else 50
rows = generate_dataset(standard_objects(), n, 0, out / "data")
print(f"dataset: {len(rows)} samples", dict(Counter(r.split for r in rows)))

ds = Dataset(out / "data")
model = fit_depth_model(ds)
write_depth_model(out / "model.gdm", model)
print(f"model: patch radius {model.patch_radius}, {model.weights.size} weights, lambda {model.metadata['lambda']}")

for split in ("train", "val", "test"):
    m = evaluate(model, ds, split)
    per = ", ".join(f"{k} {v:.3f}" for k, v in sorted(m.per_object.items()))
    print(f"{split:5s}: RMSE {m.rmse:.4f} mm, max error {m.max_error:.3f} mm, contact IoU {m.iou:.2f}  [{per}]")

sc = SimScene(indenter=IndenterShape(IndenterKind.SPHERE, 4.0), motion=(Keyframe(0.0), Keyframe(0.8)), seed=21)
rest, press = render_frame(sc, 0), render_frame(sc, 1)
pred = predict_depth(model, difference_image(press.frame, rest.frame))
write_depth_map(out / "sphere_pred.gsd", pred)
print(f"sphere pressed 0.8 mm: predicted peak {pred.depth.max():.3f} mm, true peak {press.depth.depth.max():.3f} mm")
