"""Classification and treatment-selection metrics plus the cross-validation
and leave-one-study-out harnesses."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import rankdata

from .dataio import Dataset, make_fold_plan
from .errors import DomainError, DpnnError
from .model import DpnnModel, Hyperparams, predict_dataset
from .numerics import RngStream
from .trainer import train

DEFAULT_BASELINE = 0.415
METRIC_NAMES = ("auc", "sensitivity", "specificity", "ppv", "npv", "f1", "rri_rate")


class UndefinedMetricError(DomainError):
    pass


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


class ThresholdMetrics(NamedTuple):
    sensitivity: Optional[float]
    specificity: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    f1: Optional[float]


def _ratio(a: int, b: int) -> Optional[float]:
    return a / b if b > 0 else None


def threshold_metrics(scores, labels, threshold: float = 0.5) -> ThresholdMetrics:
    """Confusion-matrix rates at ``score >= threshold``; zero denominators give ``None``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    sens = _ratio(tp, tp + fn)
    ppv = _ratio(tp, tp + fp)
    if sens is None or ppv is None or sens + ppv == 0:
        f1 = None
    else:
        f1 = 2 * ppv * sens / (ppv + sens)
    return ThresholdMetrics(sens, _ratio(tn, tn + fp), ppv, _ratio(tn, tn + fn), f1)


def rri(prob_matrix, received, remission) -> tuple[Optional[float], int]:
    """Remission rate among patients who got the treatment the model ranks first.

    Argmax ties resolve to the earliest treatment in canonical order.
    """
    probs = np.asarray(prob_matrix, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise DomainError("need at least one patient")
    best = np.argmax(probs, axis=1)
    matched = best == np.asarray(received)
    n = int(matched.sum())
    if n == 0:
        return None, 0
    return float(np.mean(np.asarray(remission)[matched])), n


def improvement(rate: float, baseline: float = DEFAULT_BASELINE) -> tuple[float, float]:
    if not baseline > 0:
        raise DomainError("baseline must be positive")
    absolute = rate - baseline
    return absolute, absolute / baseline


@dataclass
class MetricsRecord:
    auc: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    f1: Optional[float]
    rri_rate: Optional[float]
    rri_n: int
    baseline_rate: float
    n: int = 0
    repeat: Optional[int] = None
    fold: Optional[int] = None

    def to_json(self) -> dict:
        return asdict(self)


def received_scores(model: DpnnModel, dataset: Dataset) -> np.ndarray:
    probs = predict_dataset(model, dataset.complete_features())
    return probs[np.arange(len(dataset)), dataset.treatments]


def evaluate(model: DpnnModel, dataset: Dataset, threshold: float = 0.5) -> MetricsRecord:
    """Score a dataset; the per-patient score is the received treatment's probability."""
    probs = predict_dataset(model, dataset.complete_features())
    scores = probs[np.arange(len(dataset)), dataset.treatments]
    y = dataset.remission
    try:
        auc = roc_auc(scores, y)
    except UndefinedMetricError:
        auc = None
    tm = threshold_metrics(scores, y, threshold)
    rate, n_matched = rri(probs, dataset.treatments, y)
    return MetricsRecord(auc, *tm, rate, n_matched, float(np.mean(y)), len(dataset))


@dataclass
class MetricStat:
    mean: Optional[float]
    sd: Optional[float]
    n: int


@dataclass
class MetricsSummary:
    stats: dict[str, MetricStat]
    n_samples: int
    n_failed: int
    baseline: float
    samples: list[MetricsRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def rri_improvement(self) -> Optional[tuple[float, float]]:
        m = self.stats["rri_rate"].mean
        return None if m is None else improvement(m, self.baseline)

    def to_json(self) -> dict:
        imp = self.rri_improvement
        return {
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "baseline": self.baseline,
            "metrics": {k: asdict(v) for k, v in self.stats.items()},
            "rri_improvement": None if imp is None else {"absolute": imp[0], "relative": imp[1]},
            "samples": [s.to_json() for s in self.samples],
            "failures": self.failures,
        }


def summarize(records: list[MetricsRecord], baseline: float = DEFAULT_BASELINE, failures=None) -> MetricsSummary:
    """Mean and sample SD per metric; undefined values are dropped per metric."""
    records = sorted(records, key=lambda r: (r.repeat or 0, r.fold or 0))
    stats = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
        mean = float(np.mean(vals)) if vals else None
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
        stats[name] = MetricStat(mean, sd, len(vals))
    failures = list(failures or [])
    return MetricsSummary(stats, len(records), len(failures), baseline, records, failures)


def _cv_fold(args):
    dataset, h, train_idx, test_idx, seed, repeat, fold = args
    try:
        report = train(dataset.subset(train_idx), h, rng=RngStream(seed, "cv", repeat, fold))
        rec = evaluate(report.model, dataset.subset(test_idx))
    except DpnnError as exc:
        return {"repeat": repeat, "fold": fold, "error": str(exc)}
    rec.repeat, rec.fold = repeat, fold
    return rec


def run_cv(dataset: Dataset, h: Hyperparams, k: int = 10, repeats: int = 50, seed: Optional[int] = None,
           baseline: float = DEFAULT_BASELINE, jobs: int = 1) -> MetricsSummary:
    """Repeated stratified k-fold evaluation.

    Each (repeat, fold) trains on an independent stream derived from the
    seed, so parallel and serial runs agree exactly.
    """
    seed = h.seed if seed is None else seed
    dataset.complete_features()
    plan = make_fold_plan(dataset.remission, k, repeats, seed)
    tasks = []
    for r in range(repeats):
        for f, (tr, te) in enumerate(plan.folds(r)):
            tasks.append((dataset, h, tr, te, seed, r, f))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cv_fold, tasks))
    else:
        results = [_cv_fold(t) for t in tasks]
    records = [r for r in results if isinstance(r, MetricsRecord)]
    failures = [r for r in results if isinstance(r, dict)]
    return summarize(records, baseline, failures)


def loso(dataset: Dataset, h: Hyperparams, held_out_study: str, seed: Optional[int] = None) -> MetricsRecord:
    """Train on every other study and evaluate on ``held_out_study``."""
    studies = np.asarray(dataset.studies)
    test = studies == held_out_study
    if not test.any():
        raise DomainError(f"unknown study {held_out_study!r}; have {dataset.study_names}")
    seed = h.seed if seed is None else seed
    report = train(dataset.subset(~test), h, rng=RngStream(seed, "loso", held_out_study))
    return evaluate(report.model, dataset.subset(test))


def _fmt(stat: MetricStat, digits: int = 3) -> str:
    if stat.mean is None:
        return "n/a"
    sd = "n/a" if stat.sd is None else f"{stat.sd:.{digits}f}"
    return f"{stat.mean:.{digits}f} ({sd})"


def format_summary_table(rows: dict[str, MetricsSummary]) -> str:
    """Fixed-width table; one row per label (e.g. prototype count), cells "mean (SD)"."""
    headers = ["Prototypes", "AUC", "Sensitivity", "Specificity", "PPV", "NPV", "F1", "Remission rate"]
    keys = ["auc", "sensitivity", "specificity", "ppv", "npv", "f1", "rri_rate"]
    body = [[label] + [_fmt(s.stats[k]) for k in keys] for label, s in rows.items()]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(headers), line(["-" * w for w in widths])] + [line(r) for r in body]
    return "\n".join(out) + "\n"


def format_record_table(rec: MetricsRecord) -> str:
    keys = ["auc", "sensitivity", "specificity", "ppv", "npv", "f1", "rri_rate"]
    headers = ["AUC", "Sensitivity", "Specificity", "PPV", "NPV", "F1", "Remission rate"]
    cells = ["n/a" if getattr(rec, k) is None else f"{getattr(rec, k):.3f}" for k in keys]
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    return ("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip() + "\n"
            + "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip() + "\n")
