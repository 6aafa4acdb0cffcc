"""Flag targets foreign to the training library with a two-sample KS test.

A torus is screened against a model trained on blocks/cones/spheres/
cylinders: the classifier must assign it *some* label, but its patch
likelihoods look nothing like that class's reference distribution, so the
KS statistic clears the critical threshold and the image is flagged.

Run:  python demos/05_anomaly_screening.py   (a few minutes)
"""

import numpy as np

from pcs_sonar import SceneSpec, detect_anomaly, ks_critical, render_scene
from pcs_sonar.anomaly_detector import binned_frequencies
from pcs_sonar.config import loads_config
from pcs_sonar.pipeline import classify_image, train_pcs_model
from pcs_sonar.sas_synth import ANGLE_RANGES, max_offset

SHAPES = ("block", "cone", "sphere", "cylinder")

cfg = loads_config("""
[dfdl]
atoms_per_class = 32
outer_iters = 5
[cv]
trials = 5
""")


def scenes(shape, count, seed_base):
    out = []
    lo, hi = ANGLE_RANGES[shape]
    for i in range(count):
        rng = np.random.default_rng([seed_base, i])
        allowed = max_offset(shape, "narrow")
        out.append(render_scene(SceneSpec(
            shape, float(rng.uniform(lo, hi)),
            tuple(rng.uniform(-allowed, allowed, 2)),
            "narrow", background_seed=int(rng.integers(2**31)),
        )))
    return out


print("training on the four library shapes ...")
by_class = [(s, scenes(s, 8, seed_base=i)) for i, s in enumerate(SHAPES)]
model = train_pcs_model(by_class, cfg)
print("reference sample sizes:", [len(r) for r in model.reference_samples])
print(f"critical threshold at alpha=0.001 for (34, 17) samples: "
      f"{ks_critical(0.001, 34, 17):.3f}")

opts = cfg.solver_options()
print("\nscreening (alpha = 0.001):")
for kind, imgs in (("torus  ", scenes("torus", 3, 900)),
                   ("sphere ", scenes("sphere", 3, 901))):
    for i, img in enumerate(imgs):
        record = classify_image(img, model, opts, image_index=i)
        decision = detect_anomaly(record, model, alpha=0.001,
                                  min_reference=10, min_test_samples=5)
        print(f"  {kind} #{i}: assigned {decision.assigned_label:<8s} "
              f"D={decision.statistic:.3f} thr={decision.threshold:.3f} "
              f"-> {'FLAGGED' if decision.flagged else 'ok'}")

# the reference distribution the torus was compared against, as 32-bin counts
record = classify_image(scenes("torus", 1, 900)[0], model, opts)
k = record.predicted_index
print(f"\nreference histogram for {model.class_labels[k]!r} (32 bins on (0,1)):")
print(binned_frequencies(model.reference_samples[k]).tolist())
print("torus test histogram:")
print(binned_frequencies(record.normalized[:, k]).tolist())
