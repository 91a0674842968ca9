"""Experiment harness: the lower-baseline / upper-baseline / DIFL protocol.

For an ordered dataset pair (source, target) and trial t with seed
base_seed + t, both datasets are split 80:20 and three models are trained:

  lower  baseline trained on the source train split
  upper  baseline trained on the target train split
  difl   adversarial training on labeled source + unlabeled target

All three are evaluated on the target test split; the DIFL model is also
evaluated on the source test split (features should not have been traded
away). Results are aggregated across trials as mean and sample standard
deviation. Reports are written deterministically: equal configs give
byte-identical metric files, whatever the trial parallelism.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__, kernels
from .data import load_manifest, split_80_20
from .errors import ConfigError, ContractError, DiflError
from .metrics import aggregate, evaluate_scores, roc_svg
from .models import ModelSpec, predict_label
from .training import TrainingConfig, train_baseline, train_difl

MODEL_KEYS = ("lower", "difl", "upper")
# target-test evaluations of the three models, plus source-test views of
# the DIFL model (features kept) and of the lower baseline (its reference)
REPORT_KEYS = (*MODEL_KEYS, "difl_source", "lower_source")
TABLE_LABELS = {
    "lower": "Lower Baseline Model",
    "difl": "DIFL Model",
    "upper": "Upper Baseline Model",
}

REPORT_VERSION = 1

_EVAL_CHUNK = 64


@dataclass(frozen=True)
class ExperimentConfig:
    """One source -> target experiment over several trials."""

    source: str
    target: str
    source_path: str
    target_path: str
    trials: int = 10
    base_seed: int = 0
    jobs: int = 1
    outdir: str = "runs"
    extent: int = 64
    threshold: float = 0.5
    model: ModelSpec = None
    lower: TrainingConfig = None
    upper: TrainingConfig = None
    difl: TrainingConfig = None
    snapshot: dict = None

    def __post_init__(self):
        if self.source == self.target:
            raise ConfigError("source and target must differ")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.base_seed < 0:
            raise ConfigError(f"base_seed must be >= 0, got {self.base_seed}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        for field in ("model", "lower", "upper", "difl"):
            if getattr(self, field) is None:
                raise ConfigError(f"experiment config is missing {field}")

    @property
    def pair_label(self):
        return f"{self.source} → {self.target}"


def evaluate_model(gen, clf, ds, threshold=0.5):
    """Score a dataset in order and compute the full metric bundle."""
    labels = ds.labels()
    if labels is None:
        raise ContractError(f"dataset {ds.name} has no labels to evaluate against")
    chunks = []
    for lo in range(0, len(ds), _EVAL_CHUNK):
        x = np.stack([ds.tensor(i) for i in range(lo, min(lo + _EVAL_CHUNK, len(ds)))])
        chunks.append(predict_label(gen, clf, x).data)
    return evaluate_scores(np.concatenate(chunks), labels, threshold)


@dataclass(frozen=True)
class TrialTask:
    trial: int
    seed: int
    source_path: str
    target_path: str
    extent: int
    threshold: float
    model: ModelSpec
    lower: TrainingConfig
    upper: TrainingConfig
    difl: TrainingConfig


@dataclass
class TrialResult:
    trial: int
    metrics: dict      # key -> TrialMetrics
    curves: dict       # key -> RocCurve
    difl_history: list
    converged: dict


_DATASET_CACHE = {}


def load_dataset_cached(path, extent):
    """load_manifest with a per-process cache keyed on path and file stat,
    so repeated trials in one worker decode each image once."""
    st = os.stat(path)
    key = (os.path.abspath(path), extent, st.st_mtime_ns, st.st_size)
    ds = _DATASET_CACHE.get(key)
    if ds is None:
        ds = load_manifest(path, extent=extent)
        _DATASET_CACHE[key] = ds
    return ds


def run_trial(task):
    """Train and evaluate all three models for one trial seed."""
    src = load_dataset_cached(task.source_path, task.extent)
    tgt = load_dataset_cached(task.target_path, task.extent)
    ssplit = split_80_20(src, task.seed)
    tsplit = split_80_20(tgt, task.seed)

    lower = train_baseline(ssplit.train, replace(task.lower, seed=task.seed),
                           task.model)
    upper = train_baseline(tsplit.train, replace(task.upper, seed=task.seed),
                           task.model)
    difl = train_difl(ssplit.train, tsplit.train,
                      replace(task.difl, seed=task.seed), task.model)

    metrics, curves = {}, {}
    for key, model, test in (("lower", lower, tsplit.test),
                             ("difl", difl, tsplit.test),
                             ("upper", upper, tsplit.test),
                             ("difl_source", difl, ssplit.test),
                             ("lower_source", lower, ssplit.test)):
        tm, curve = evaluate_model(model.generator, model.classifier, test,
                                   task.threshold)
        metrics[key] = tm
        curves[key] = curve
    return TrialResult(
        trial=task.trial,
        metrics=metrics,
        curves=curves,
        difl_history=list(difl.history),
        converged={"lower": lower.converged, "difl": difl.converged,
                   "upper": upper.converged},
    )


@dataclass
class ExperimentReport:
    source: str
    target: str
    pair_label: str
    trials: int
    base_seed: int
    reports: dict        # key -> MetricsReport (incl. difl_source)
    curves: dict         # key -> list of per-trial RocCurve
    histories: list      # (trial, difl history rows)
    converged: list      # per-trial dicts
    snapshot: dict


def run_pair(cfg):
    """Run every trial of one experiment; a failed trial aborts the pair."""
    tasks = [
        TrialTask(
            trial=t,
            seed=cfg.base_seed + t,
            source_path=cfg.source_path,
            target_path=cfg.target_path,
            extent=cfg.extent,
            threshold=cfg.threshold,
            model=cfg.model,
            lower=cfg.lower,
            upper=cfg.upper,
            difl=cfg.difl,
        )
        for t in range(cfg.trials)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run_trial, tasks))
    else:
        results = [run_trial(t) for t in tasks]
    # merge in trial order regardless of completion order
    results.sort(key=lambda r: r.trial)
    reports = {
        key: aggregate([r.metrics[key] for r in results])
        for key in REPORT_KEYS
    }
    return ExperimentReport(
        source=cfg.source,
        target=cfg.target,
        pair_label=cfg.pair_label,
        trials=cfg.trials,
        base_seed=cfg.base_seed,
        reports=reports,
        curves={key: [r.curves[key] for r in results]
                for key in REPORT_KEYS},
        histories=[(r.trial, r.difl_history) for r in results],
        converged=[r.converged for r in results],
        snapshot=dict(cfg.snapshot or {}),
    )


def _metrics_payload(report):
    models = {}
    for key, rep in report.reports.items():
        models[key] = {
            name: {
                "mean": rep.means[name],
                "std": rep.stds[name],
                "per_trial": [t.get(name) for t in rep.trials],
            }
            for name in ("accuracy", "sensitivity", "specificity", "auc")
        }
    return {
        "pair": report.pair_label,
        "source": report.source,
        "target": report.target,
        "trials": report.trials,
        "base_seed": report.base_seed,
        "converged": report.converged,
        "models": models,
    }


def emit_report(report, outdir):
    """Write metrics.json, table.csv, per-model ROC SVGs, per-trial DIFL
    loss histories, and a run manifest. All files are deterministic
    functions of the report."""
    outdir = os.fspath(outdir)
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "metrics.json"), "w") as fh:
        json.dump(_metrics_payload(report), fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(outdir, "table.csv"), "w", newline="") as fh:
        fh.write("Type of Model,Accuracy\n")
        for key in MODEL_KEYS:
            fh.write(f"{TABLE_LABELS[key]},{report.reports[key].formatted('accuracy')}\n")

    for key in REPORT_KEYS:
        curves = [(f"trial {i}", c) for i, c in enumerate(report.curves[key])]
        auc = report.reports[key].formatted("auc")
        title = f"{report.pair_label} / {key} (AUC {auc})"
        with open(os.path.join(outdir, f"roc_{key}.svg"), "w") as fh:
            fh.write(roc_svg(curves, title=title))

    lossdir = os.path.join(outdir, "losses")
    os.makedirs(lossdir, exist_ok=True)
    for trial, rows in report.histories:
        path = os.path.join(lossdir, f"difl_trial_{trial:02d}.csv")
        with open(path, "w", newline="") as fh:
            fh.write("iteration,step_kind,loss_name,value\n")
            for it, kind, name, value in rows:
                fh.write(f"{it},{kind},{name},{value!r}\n")

    manifest = {
        "format_version": REPORT_VERSION,
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "pair": report.pair_label,
        "config": report.snapshot,
    }
    with open(os.path.join(outdir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def pair_dirname(source, target):
    return f"{source}__to__{target}"


def run_matrix(configs, outdir):
    """Run every configured pair; per-pair failures are recorded and do not
    stop the remaining pairs. Emits each pair's report plus a combined
    accuracy table, and returns (reports, failures)."""
    outdir = os.fspath(outdir)
    os.makedirs(outdir, exist_ok=True)
    reports, failures = [], []
    for cfg in configs:
        try:
            report = run_pair(cfg)
        except (DiflError, OSError) as exc:
            failures.append((cfg.pair_label, str(exc)))
            continue
        emit_report(report, os.path.join(outdir, pair_dirname(cfg.source, cfg.target)))
        reports.append(report)

    with open(os.path.join(outdir, "matrix_table.csv"), "w", newline="") as fh:
        fh.write("Pair,Type of Model,Accuracy\n")
        for report in reports:
            for key in MODEL_KEYS:
                fh.write(f"{report.pair_label},{TABLE_LABELS[key]},"
                         f"{report.reports[key].formatted('accuracy')}\n")
    if failures:
        with open(os.path.join(outdir, "failures.txt"), "w") as fh:
            for pair, msg in failures:
                fh.write(f"{pair}: {msg}\n")
    return reports, failures
