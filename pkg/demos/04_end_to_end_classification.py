"""Train a small model end to end and classify held-out scenes.

Covers the full path: scene generation -> patch pools -> discriminative
dictionary -> penalty cross-validation -> ensemble classification.

Run:  python demos/04_end_to_end_classification.py   (a few minutes)
"""

import numpy as np

from pcs_sonar import SceneSpec, evaluate, render_scene
from pcs_sonar.config import loads_config
from pcs_sonar.pipeline import train_pcs_model
from pcs_sonar.sas_synth import ANGLE_RANGES, max_offset

SHAPES = ("block", "cone", "sphere", "cylinder")
TRAIN_PER_CLASS = 8
TEST_PER_CLASS = 3

cfg = loads_config("""
[experiment]
train_size = 8
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


print(f"training on {TRAIN_PER_CLASS} scenes per class ...")
by_class = [(shape, scenes(shape, TRAIN_PER_CLASS, seed_base=i)) for i, shape in enumerate(SHAPES)]
model = train_pcs_model(by_class, cfg)
print("tuned per-class penalties:", np.array2string(model.params.xi, precision=2))

test = [img for i, shape in enumerate(SHAPES) for img in scenes(shape, TEST_PER_CLASS, 1000 + i)]
report = evaluate(model, test, regime="narrow", solver_opts=cfg.solver_options())

print("\nconfusion (rows true, columns predicted):")
print("            " + "  ".join(f"{s[:6]:>6s}" for s in SHAPES))
for label, row in zip(SHAPES, report.confusion):
    print(f"{label:>10s}  " + "  ".join(f"{v:>6d}" for v in row))
print(f"\nmean recall    {report.mean_recall:.3f}")
print(f"mean precision {report.mean_precision:.3f} "
      f"({report.undefined_precision_count} class(es) never predicted)")
