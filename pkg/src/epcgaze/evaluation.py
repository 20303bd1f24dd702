"""Error metrics, per-subject bias fits, leave-one-subject-out runs and ablations."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .errors import InvalidInput, TooFewSamples
from .geometry import angular_error, clamp_angles
from .model import Model
from .seeding import derive_rng
from .synthetic import World, leave_one_subject_out
from .trainer import TrainLog, adapt, pretrain

log = logging.getLogger(__name__)

ABLATION_AXES = {
    "mu": "mu",
    "k": "k",
    "fg": "embedding_dim",
    "pretrain_flags": "pretrain_epochs",
    "da_target": "llr_source",
}


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float


@dataclass(frozen=True)
class EvalReport:
    mae_degrees: float
    yaw_fit: LinearFit
    pitch_fit: LinearFit
    n_samples: int
    subject_id: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def ols_fit(x, y) -> LinearFit:
    """Least-squares line ``y = slope * x + intercept``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise TooFewSamples("a line fit needs at least 2 samples")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = dx @ dx
    slope = 0.0 if sxx == 0 else float(dx @ (y - ym) / sxx)
    return LinearFit(slope, float(ym - slope * xm))


def report_from_predictions(pred, gt, subject_id=None) -> EvalReport:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if len(gt) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(gt)}")
    mae = float(np.degrees(np.mean(angular_error(pred, gt))))
    return EvalReport(mae, ols_fit(gt[:, 0], pred[:, 0]), ols_fit(gt[:, 1], pred[:, 1]),
                      len(gt), subject_id)


def evaluate(model: Model, features, gt, subject_id=None) -> EvalReport:
    """Mean angular error (degrees) and predicted-vs-true line fits per angle."""
    if len(gt) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(gt)}")
    return report_from_predictions(model.predict(features), gt, subject_id)


@dataclass
class SubjectRun:
    subject_id: int
    baseline: EvalReport
    adapted: EvalReport
    baseline_pred: np.ndarray
    adapted_pred: np.ndarray
    target_gt: np.ndarray
    pretrain_log: TrainLog
    adapt_log: TrainLog
    model: Model | None = None


@dataclass
class CrossValidationSummary:
    runs: list[SubjectRun] = field(default_factory=list)

    @property
    def subjects(self) -> list[int]:
        return [r.subject_id for r in self.runs]

    def _mae(self, which: str) -> np.ndarray:
        return np.array([getattr(r, which).mae_degrees for r in self.runs])

    @property
    def baseline_mae(self) -> np.ndarray:
        return self._mae("baseline")

    @property
    def adapted_mae(self) -> np.ndarray:
        return self._mae("adapted")

    @property
    def per_subject_improvement(self) -> np.ndarray:
        b = self.baseline_mae
        return (b - self.adapted_mae) / b

    @property
    def improvement_pct(self) -> float:
        """Relative improvement of the mean MAE, in percent."""
        return relative_improvement(self.baseline_mae.mean(), self.adapted_mae.mean())

    def mean_abs_intercept(self, which: str, angle: str = "pitch") -> float:
        return float(np.mean([abs(getattr(getattr(r, which), f"{angle}_fit").intercept)
                              for r in self.runs]))

    def stats(self) -> dict:
        b, a = self.baseline_mae, self.adapted_mae
        return {
            "n_subjects": len(self.runs),
            "baseline_mae_mean": float(b.mean()),
            "baseline_mae_std": float(b.std()),
            "adapted_mae_mean": float(a.mean()),
            "adapted_mae_std": float(a.std()),
            "improvement_pct": self.improvement_pct,
            "mean_subject_improvement_pct": float(100 * self.per_subject_improvement.mean()),
            "subjects_improved": int(np.sum(a < b)),
            "baseline_abs_pitch_intercept": self.mean_abs_intercept("baseline", "pitch"),
            "adapted_abs_pitch_intercept": self.mean_abs_intercept("adapted", "pitch"),
            "baseline_abs_yaw_intercept": self.mean_abs_intercept("baseline", "yaw"),
            "adapted_abs_yaw_intercept": self.mean_abs_intercept("adapted", "yaw"),
        }

    def table_rows(self) -> list[dict]:
        rows = []
        for r in self.runs:
            rows.append({
                "subject_id": r.subject_id,
                "baseline_mae_deg": r.baseline.mae_degrees,
                "adapted_mae_deg": r.adapted.mae_degrees,
                "baseline_pitch_slope": r.baseline.pitch_fit.slope,
                "baseline_pitch_intercept": r.baseline.pitch_fit.intercept,
                "adapted_pitch_slope": r.adapted.pitch_fit.slope,
                "adapted_pitch_intercept": r.adapted.pitch_fit.intercept,
                "baseline_yaw_slope": r.baseline.yaw_fit.slope,
                "baseline_yaw_intercept": r.baseline.yaw_fit.intercept,
                "adapted_yaw_slope": r.adapted.yaw_fit.slope,
                "adapted_yaw_intercept": r.adapted.yaw_fit.intercept,
                "participating_mean": float(np.mean(r.adapt_log.column("participating")))
                if r.adapt_log.steps else 0.0,
                "adapt_iterations": len(r.adapt_log.steps),
            })
        return rows


def relative_improvement(baseline: float, adapted: float) -> float:
    """``100 * (baseline - adapted) / baseline``."""
    if baseline <= 0:
        raise InvalidInput("baseline error must be positive")
    return 100.0 * (baseline - adapted) / baseline


def run_subject(world: World, subject_id: int, cfg: RunConfig, keep_model: bool = False,
                on_stage: Callable | None = None) -> SubjectRun:
    """Pretrain on the other subjects, evaluate, adapt to this one, evaluate again."""
    split = leave_one_subject_out(world, subject_id)
    model = Model.create(cfg.model_config(), derive_rng(cfg.seed, "init", subject_id))
    tcfg = cfg.train_config()
    model, pre_log = pretrain(model, split.source, tcfg, derive_rng(cfg.seed, "pretrain", subject_id))
    if on_stage:
        on_stage("pretrained", subject_id, model)
    base_pred = model.predict(split.target.features)
    baseline = report_from_predictions(base_pred, split.target_gt, subject_id)

    model, ad_log = adapt(model, split.source, split.target, tcfg,
                          derive_rng(cfg.seed, "adapt", subject_id))
    if on_stage:
        on_stage("adapted", subject_id, model)
    ad_pred = model.predict(split.target.features)
    adapted = report_from_predictions(ad_pred, split.target_gt, subject_id)
    log.info("subject %s: baseline %.2f deg -> adapted %.2f deg",
             subject_id, baseline.mae_degrees, adapted.mae_degrees)
    return SubjectRun(subject_id, baseline, adapted, base_pred, ad_pred, split.target_gt,
                      pre_log, ad_log, model if keep_model else None)


def run_loso(world: World, cfg: RunConfig, subjects: Sequence[int] | None = None,
             keep_models: bool = False, on_stage: Callable | None = None) -> CrossValidationSummary:
    """Leave-one-subject-out over ``subjects`` (default: every subject in the world)."""
    subjects = list(subjects) if subjects is not None else world.subjects
    if len(world.subjects) < 3:
        raise InvalidInput("leave-one-subject-out needs at least 3 subjects")
    summary = CrossValidationSummary()
    for sid in subjects:
        summary.runs.append(run_subject(world, sid, cfg, keep_models, on_stage))
    return summary


def ablation_sweep(world: World, axis: str, values: Sequence, cfg: RunConfig,
                   subjects: Sequence[int] | None = None) -> list[tuple[object, CrossValidationSummary]]:
    """One leave-one-subject-out run per value of ``axis``.

    Axes: ``mu``, ``k``, ``fg`` (embedding size), ``pretrain_flags``
    (number of source pretraining epochs; 0 disables pretraining) and
    ``da_target`` (``"groundtruth"`` or ``"prediction"`` anchors for the
    reconstruction).
    """
    if axis not in ABLATION_AXES:
        raise InvalidInput(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    if not values:
        raise InvalidInput("ablation needs at least one value")
    key = ABLATION_AXES[axis]
    out = []
    for v in values:
        run_cfg = replace(cfg, **{key: v})
        log.info("ablation %s=%s", axis, v)
        out.append((v, run_loso(world, run_cfg, subjects)))
    return out


def ablation_table(axis: str, results) -> list[dict]:
    rows = []
    for value, summary in results:
        s = summary.stats()
        rows.append({"axis": axis, "value": value, **s})
    return rows


# ---------------------------------------------------------------- writers

def _write_rows(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        writer = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path


def write_summary_table(summary: CrossValidationSummary, path) -> Path:
    return _write_rows(path, summary.table_rows())


def write_ablation_table(axis: str, results, path) -> Path:
    return _write_rows(path, ablation_table(axis, results))


def write_report(report: EvalReport, path, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**report.to_dict(), **extra}, indent=1))
    return path


def write_scatter(path, gt, pred) -> Path:
    """Ground truth vs (clamped) predicted angles for external plotting."""
    pred = clamp_angles(pred)
    rows = [{"gt_yaw": float(g[0]), "gt_pitch": float(g[1]),
             "pred_yaw": float(p[0]), "pred_pitch": float(p[1])} for g, p in zip(gt, pred)]
    return _write_rows(path, rows)


def write_loso_outputs(summary: CrossValidationSummary, out_dir) -> dict:
    """Per-subject report documents and scatter files plus the summary table."""
    out_dir = Path(out_dir)
    paths = {"reports": [], "scatter": []}
    for r in summary.runs:
        for which, rep, pred in (("baseline", r.baseline, r.baseline_pred),
                                 ("adapted", r.adapted, r.adapted_pred)):
            paths["reports"].append(write_report(rep, out_dir / f"subject{r.subject_id:02d}_{which}.json",
                                                 model=which))
            paths["scatter"].append(write_scatter(out_dir / f"subject{r.subject_id:02d}_{which}_scatter.csv",
                                                  r.target_gt, pred))
    paths["table"] = write_summary_table(summary, out_dir / "summary.csv")
    stats_path = out_dir / "summary.json"
    stats_path.write_text(json.dumps(summary.stats(), indent=1))
    paths["stats"] = stats_path
    return paths
