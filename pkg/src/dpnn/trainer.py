"""Mini-batch Adam training and hyperparameter grid search."""
from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dataio import Dataset, stratified_kfold
from .errors import DomainError, DpnnError, NumericError, ValidationError
from .model import Batch, DpnnModel, Hyperparams, LossBreakdown, init_model, loss, loss_and_gradients
from .numerics import AdamState, RngStream, adam_step

_BREAKDOWN_FIELDS = ("total", "cls_term", "ae_term", "pv_term", "between_variance", "within_variance")


@dataclass
class TrainReport:
    model: DpnnModel
    trace: list[LossBreakdown]
    seed: int
    wall_time: float
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.trace)


def scaling_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def make_batch(model: DpnnModel, dataset: Dataset, idx=None) -> Batch:
    if idx is None:
        idx = np.arange(len(dataset))
    return Batch(model.scale(dataset.complete_features()[idx]), dataset.treatments[idx], dataset.remission[idx])


def _mean_breakdown(parts: list[LossBreakdown], weights: list[int]) -> LossBreakdown:
    w = np.asarray(weights, dtype=float)
    vals = {f: float(np.dot([getattr(p, f) for p in parts], w) / w.sum()) for f in _BREAKDOWN_FIELDS}
    return LossBreakdown(**vals)


def train(dataset: Dataset, h: Hyperparams, *, rng: Optional[RngStream] = None,
          on_epoch: Optional[Callable[[int, DpnnModel, LossBreakdown], None]] = None) -> TrainReport:
    """Fit a model on an imputed dataset.

    Runs ``epochs`` passes of shuffled mini-batches (last partial batch
    kept). With ``h.patience`` set, a stratified slice of the data is held
    out and training stops once its loss has not improved for that many
    epochs; the best-scoring weights are returned. ``on_epoch`` is called
    after every epoch with the epoch index, the live model and the epoch's
    mean loss breakdown; it must not modify the model.
    """
    h.validate()
    started = time.perf_counter()
    X = dataset.complete_features()
    y = dataset.remission
    if len(np.unique(y)) < 2:
        raise DomainError("training data must contain both remission classes")
    rng = rng if rng is not None else RngStream(h.seed, "train")

    train_idx = np.arange(len(dataset))
    val_idx = None
    if h.patience is not None:
        n_val_folds = max(2, int(round(1.0 / h.validation_fraction)))
        folds = stratified_kfold(y, n_val_folds, rng.derive("validation"))
        val_idx = np.flatnonzero(folds == 0)
        train_idx = np.flatnonzero(folds != 0)

    mean, std = scaling_stats(X[train_idx])
    Xs = (X - mean) / std
    model = init_model(h, dataset.schema, dataset.treatment_set, rng.derive("init"),
                       data=Xs[train_idx], scale_mean=mean, scale_std=std)
    params = model.params
    state = AdamState.zeros_like(params)
    T = dataset.treatments
    shuffle_rng = rng.derive("shuffle")

    trace: list[LossBreakdown] = []
    best = (math.inf, None)
    stale = 0
    stopped = False
    n = train_idx.size
    for epoch in range(h.epochs):
        order = train_idx[shuffle_rng.permutation(n)]
        parts, sizes = [], []
        for b, start in enumerate(range(0, n, h.batch_size)):
            idx = order[start:start + h.batch_size]
            batch = Batch(Xs[idx], T[idx], y[idx])
            breakdown, grads = loss_and_gradients(model, batch)
            if not math.isfinite(breakdown.total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            try:
                params, state = adam_step(params, grads, state, h.learning_rate, h.adam_beta1, h.adam_beta2, h.adam_eps)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            model.params = params
            parts.append(breakdown)
            sizes.append(idx.size)
        trace.append(_mean_breakdown(parts, sizes))
        if on_epoch is not None:
            on_epoch(epoch, model, trace[-1])

        if val_idx is not None:
            v = loss(model, Batch(Xs[val_idx], T[val_idx], y[val_idx])).total
            if v < best[0] - 1e-12:
                best = (v, {k: a.copy() for k, a in params.items()})
                stale = 0
            else:
                stale += 1
                if stale >= h.patience:
                    stopped = True
                    break
    if val_idx is not None and best[1] is not None:
        model.params = best[1]
    return TrainReport(model, trace, h.seed, time.perf_counter() - started, stopped)


# --------------------------------------------------------------------------
# Grid search


@dataclass
class GridSpec:
    """Candidate values per hyperparameter; cells are the cartesian product in
    the order the fields are listed."""

    values: dict[str, list]
    folds: int = 3
    base: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        if not self.values or any(len(v) == 0 for v in self.values.values()):
            problems.append("grid must have at least one value per listed field")
        known = set(Hyperparams.__dataclass_fields__)
        for name in list(self.values) + list(self.base):
            if name not in known:
                problems.append(f"unknown hyperparameter {name!r}")
        if self.folds < 2:
            problems.append("folds must be >= 2")
        if problems:
            raise ValidationError(problems)

    def cells(self) -> list[dict]:
        names = list(self.values)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.values[n] for n in names))]

    def to_json(self) -> dict:
        return {"values": self.values, "folds": self.folds, "base": self.base}

    @classmethod
    def from_json(cls, doc: dict) -> "GridSpec":
        unknown = sorted(set(doc) - {"values", "folds", "base"})
        if unknown:
            raise ValidationError([f"unknown grid field {u!r}" for u in unknown])
        return cls(doc["values"], doc.get("folds", 3), doc.get("base", {}))

    @classmethod
    def load(cls, path) -> "GridSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class GridCell:
    index: int
    overrides: dict
    hyperparams: Hyperparams
    mean_auc: Optional[float]
    fold_aucs: list[Optional[float]]
    n_parameters: int
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "overrides": self.overrides,
            "mean_auc": self.mean_auc,
            "fold_aucs": self.fold_aucs,
            "n_parameters": self.n_parameters,
            "error": self.error,
        }


def _evaluate_cell(args) -> GridCell:
    from .evalsuite import roc_auc, received_scores

    dataset, index, overrides, h, folds_k, seed = args
    aucs: list[Optional[float]] = []
    n_params = 0
    try:
        h.validate()
        assign = stratified_kfold(dataset.remission, folds_k, RngStream(seed, "grid", index, "folds"))
        for f in range(folds_k):
            tr, te = np.flatnonzero(assign != f), np.flatnonzero(assign == f)
            report = train(dataset.subset(tr), h, rng=RngStream(seed, "grid", index, f))
            n_params = report.model.n_parameters()
            test = dataset.subset(te)
            aucs.append(roc_auc(received_scores(report.model, test), test.remission))
    except DpnnError as exc:
        return GridCell(index, overrides, h, None, aucs, n_params, str(exc))
    return GridCell(index, overrides, h, float(np.mean(aucs)), aucs, n_params)


def grid_search(dataset: Dataset, grid: GridSpec, seed: int = 0, jobs: int = 1) -> tuple[Hyperparams, list[GridCell]]:
    """Score every cell by mean inner-fold validation AUC and pick the best.

    Ties go to the smaller model, then to the earlier cell. Cells whose
    training fails are kept in the table with their error and skipped.
    """
    tasks = []
    for i, overrides in enumerate(grid.cells()):
        doc = dict(grid.base)
        doc.update(overrides)
        try:
            h = Hyperparams(**doc)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None
        tasks.append((dataset, i, overrides, h, grid.folds, seed))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_evaluate_cell, tasks))
    else:
        cells = [_evaluate_cell(t) for t in tasks]
    cells.sort(key=lambda c: c.index)
    ok = [c for c in cells if c.mean_auc is not None]
    if not ok:
        raise DpnnError("every grid cell failed: " + "; ".join(f"cell {c.index}: {c.error}" for c in cells))
    best = min(ok, key=lambda c: (-c.mean_auc, c.n_parameters, c.index))
    return best.hyperparams, cells
