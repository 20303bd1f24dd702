"""Adapt to one held-out subject and look at the bias before and after.

Trains on nine subjects, evaluates on the tenth, runs the joint stage and
prints the error and the pred-vs-true line fits at a few checkpoints.
"""
import sys
import warnings

import numpy as np

from epcgaze.config import RunConfig
from epcgaze.evaluation import evaluate
from epcgaze.model import Model
from epcgaze.seeding import derive_rng
from epcgaze.synthetic import generate_world, leave_one_subject_out
from epcgaze.trainer import adapt, pretrain

subject = int(sys.argv[1]) if len(sys.argv) > 1 else 7
cfg = RunConfig()
world = generate_world(cfg.generator_config(), cfg.seed)
split = leave_one_subject_out(world, subject)

model = Model.create(cfg.model_config(), derive_rng(cfg.seed, "init", subject))
pretrain(model, split.source, cfg.train_config(), derive_rng(cfg.seed, "pretrain", subject))


def show(tag, m):
    r = evaluate(m, split.target.features, split.target_gt, subject)
    print(f"{tag:>10}  MAE {r.mae_degrees:6.2f} deg   yaw fit {r.yaw_fit.slope:5.2f}x{r.yaw_fit.intercept:+.3f}"
          f"   pitch fit {r.pitch_fit.slope:5.2f}x{r.pitch_fit.intercept:+.3f}")


show("baseline", model)
bias = next(p.bias_shift for p in world.profiles if p.subject_id == subject)
print(f"gaze-space bias of this subject: {np.round(bias, 3)} rad (not observable from appearance)")

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    adapt(model, split.source, split.target, cfg.train_config(), derive_rng(cfg.seed, "adapt", subject),
          on_step=lambda m, it: show(f"iter {it}", m) if it % 100 == 0 else None)
show("adapted", model)
