"""Full leave-one-subject-out run with the default configuration.

Prints the per-subject table and the summary.  With ``--write-fixture`` the
numbers are stored in ``tests/fixtures/baseline.json``, which the acceptance
suite compares against.

    python demos/03_loso_baseline.py --write-fixture
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from epcgaze.config import RunConfig, dump_config
from epcgaze.evaluation import run_loso
from epcgaze.synthetic import generate_world, leave_one_subject_out

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "baseline.json"


def probe_bias(world):
    """Mean signed error of a linear least-squares probe per held-out subject."""
    out = {}
    for s in world.subjects:
        split = leave_one_subject_out(world, s)
        X = np.column_stack([split.source.features, np.ones(len(split.source))])
        coef, *_ = np.linalg.lstsq(X, split.source.gaze, rcond=None)
        pred = np.column_stack([split.target.features, np.ones(len(split.target))]) @ coef
        out[s] = np.mean(pred - split.target_gt, axis=0).tolist()
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--write-fixture", action="store_true")
    args = ap.parse_args()

    cfg = RunConfig()
    world = generate_world(cfg.generator_config(), cfg.seed)
    t0 = time.perf_counter()
    summary = run_loso(world, cfg)
    elapsed = time.perf_counter() - t0

    print(f"{'subject':>7} {'baseline':>9} {'adapted':>8} {'pitch b':>8} {'pitch a':>8} {'iters':>6}")
    for r in summary.table_rows():
        print(f"{r['subject_id']:>7} {r['baseline_mae_deg']:9.2f} {r['adapted_mae_deg']:8.2f} "
              f"{r['baseline_pitch_intercept']:8.3f} {r['adapted_pitch_intercept']:8.3f} "
              f"{r['adapt_iterations']:>6}")
    stats = summary.stats()
    for k, v in stats.items():
        print(f"{k:32s} {v}")
    print(f"runtime {elapsed:.1f} s")

    if args.write_fixture:
        snap = FIXTURE.with_suffix(".ini")
        dump_config(cfg, snap)
        doc = {
            "seed": cfg.seed,
            "config_snapshot": snap.name,
            "stats": stats,
            "subjects": summary.table_rows(),
            "probe_mean_signed_error_rad": probe_bias(world),
            "bias_shift": {p.subject_id: p.bias_shift.tolist() for p in world.profiles},
        }
        FIXTURE.write_text(json.dumps(doc, indent=1))
        print(f"wrote {FIXTURE}")


if __name__ == "__main__":
    main()
