"""Greedy Gini CART used as a readable surrogate for prototype clusters."""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..dataio import Dataset
from ..errors import DpnnError
from ..model import Hyperparams
from ..numerics import RngStream


@dataclass
class CartNode:
    depth: int
    counts: dict[int, int]
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["CartNode"] = None
    right: Optional["CartNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def prediction(self) -> int:
        # majority label, ties to the smallest label
        return min(self.counts, key=lambda c: (-self.counts[c], c))

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    def predict_one(self, x) -> int:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.prediction

    def predict(self, X) -> np.ndarray:
        return np.array([self.predict_one(x) for x in np.asarray(X)], dtype=np.int64)

    def max_depth(self) -> int:
        if self.is_leaf:
            return self.depth
        return max(self.left.max_depth(), self.right.max_depth())

    def split_features(self, max_depth: Optional[int] = None) -> set[int]:
        if self.is_leaf or (max_depth is not None and self.depth > max_depth):
            return set()
        return {self.feature} | self.left.split_features(max_depth) | self.right.split_features(max_depth)

    def to_json(self, feature_names: Optional[Sequence[str]] = None) -> dict:
        counts = {str(k): v for k, v in sorted(self.counts.items())}
        if self.is_leaf:
            return {"depth": self.depth, "leaf": True, "prediction": self.prediction, "counts": counts}
        name = feature_names[self.feature] if feature_names else self.feature
        return {
            "depth": self.depth, "leaf": False, "feature": name, "threshold": self.threshold, "counts": counts,
            "left": self.left.to_json(feature_names), "right": self.right.to_json(feature_names),
        }

    def render(self, feature_names: Optional[Sequence[str]] = None, labels: Optional[Sequence[str]] = None) -> str:
        lines: list[str] = []
        self._render(lines, feature_names, labels, "")
        return "\n".join(lines) + "\n"

    def _render(self, lines, names, labels, indent):
        label = lambda c: labels[c] if labels else str(c)
        counts = ", ".join(f"{label(k)}={v}" for k, v in sorted(self.counts.items()))
        if self.is_leaf:
            lines.append(f"{indent}-> {label(self.prediction)}  [{counts}]")
            return
        fname = names[self.feature] if names else f"x{self.feature}"
        lines.append(f"{indent}{fname} <= {self.threshold:.4g}  [{counts}]")
        self.left._render(lines, names, labels, indent + "  ")
        lines.append(f"{indent}{fname} > {self.threshold:.4g}")
        self.right._render(lines, names, labels, indent + "  ")


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def best_split(X: np.ndarray, y: np.ndarray, classes: np.ndarray, min_leaf: int = 1):
    """Lowest weighted child Gini over all features and midpoint thresholds.

    Returns ``(feature, threshold, impurity)`` or ``None`` when no split
    leaves ``min_leaf`` samples on both sides. Ties keep the earliest
    feature, then the lowest threshold.
    """
    n, p = X.shape
    onehot = (y[:, None] == classes[None, :]).astype(float)
    total = onehot.sum(axis=0)
    best = None
    for f in range(p):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]  # left counts after i+1 samples
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        right = total[None, :] - left
        nl = n_left[:, None].astype(float)
        nr = (n - n_left)[:, None].astype(float)
        g_left = 1.0 - np.sum((left / nl) ** 2, axis=1)
        g_right = 1.0 - np.sum((right / nr) ** 2, axis=1)
        weighted = (n_left * g_left + (n - n_left) * g_right) / n
        weighted[~valid] = np.inf
        i = int(np.argmin(weighted))
        if best is None or weighted[i] < best[2] - 1e-12:
            best = (f, float(0.5 * (xs[i] + xs[i + 1])), float(weighted[i]))
    return best


def fit_cart(features, labels, max_depth: int = 4, min_leaf: int = 10) -> tuple[CartNode, float]:
    """Grow a depth-limited tree and report its training accuracy."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    root = _grow(X, y, classes, 0, max_depth, min_leaf)
    acc = float(np.mean(root.predict(X) == y)) if y.size else 1.0
    return root, acc


def _grow(X, y, classes, depth, max_depth, min_leaf) -> CartNode:
    counts = Counter(int(v) for v in y)
    node = CartNode(depth, dict(sorted(counts.items())))
    if depth >= max_depth or len(counts) <= 1 or y.size < 2 * min_leaf:
        return node
    split = best_split(X, y, classes, min_leaf)
    if split is None or split[2] >= gini(list(counts.values())) - 1e-12:
        return node
    f, thr, _ = split
    mask = X[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = _grow(X[mask], y[mask], classes, depth + 1, max_depth, min_leaf)
    node.right = _grow(X[~mask], y[~mask], classes, depth + 1, max_depth, min_leaf)
    return node


@dataclass
class FeatureFrequency:
    frequencies: dict[str, float]
    runs: int
    failures: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        ranked = sorted(self.frequencies.items(), key=lambda kv: (-kv[1], kv[0]))
        return {"runs": self.runs, "frequencies": dict(ranked), "failures": self.failures}


def _stability_run(args):
    from ..trainer import train
    from .clusters import assign_clusters

    dataset, h, seed, run, max_depth, min_leaf, top_depth = args
    try:
        report = train(dataset, h, rng=RngStream(seed, "tree-stability", run))
        clusters = assign_clusters(report.model, dataset)
        tree, _ = fit_cart(dataset.complete_features(), clusters, max_depth, min_leaf)
    except DpnnError as exc:
        return run, None, str(exc)
    return run, sorted(tree.split_features(top_depth)), None


def tree_feature_frequency(dataset: Dataset, h: Hyperparams, runs: int = 100, max_depth: int = 4,
                           min_leaf: int = 10, top_depth: int = 2, seed: Optional[int] = None,
                           jobs: int = 1) -> FeatureFrequency:
    """Share of retrained models whose surrogate tree splits on each feature
    at depth <= ``top_depth``."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seed = h.seed if seed is None else seed
    tasks = [(dataset, h, seed, r, max_depth, min_leaf, top_depth) for r in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_stability_run, tasks))
    else:
        results = [_stability_run(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    names = dataset.schema.names
    counts = Counter()
    ok = 0
    failures = []
    for run, feats, err in results:
        if err is not None:
            failures.append({"run": run, "error": err})
            continue
        ok += 1
        counts.update(names[f] for f in feats)
    freqs = {name: (counts[name] / ok if ok else 0.0) for name in names if counts[name] > 0}
    return FeatureFrequency(freqs, ok, failures)
