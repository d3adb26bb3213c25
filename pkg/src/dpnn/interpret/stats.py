"""Kruskal-Wallis and Dunn post-hoc tests with mid-rank tie handling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ..errors import DomainError
from ..numerics import chi_square_sf, normal_sf


def _prepare(groups: Sequence[Sequence[float]]) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    arrays = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(arrays) < 2:
        raise DomainError("need at least two groups")
    if any(a.size == 0 for a in arrays):
        raise DomainError("every group must be nonempty")
    pooled = np.concatenate(arrays)
    if pooled.size < 3:
        raise DomainError("need at least three observations in total")
    if not np.all(np.isfinite(pooled)):
        raise DomainError("values must be finite")
    return arrays, pooled, rankdata(pooled, method="average")


def _tie_sum(pooled: np.ndarray) -> float:
    _, t = np.unique(pooled, return_counts=True)
    t = t.astype(float)
    return float(np.sum(t ** 3 - t))


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Tie-corrected H statistic and its chi-square (k-1 df) p-value."""
    arrays, pooled, ranks = _prepare(groups)
    n = pooled.size
    ties = _tie_sum(pooled)
    correction = 1.0 - ties / (n ** 3 - n)
    if correction <= 0:
        return 0.0, 1.0
    h = 0.0
    start = 0
    for a in arrays:
        r = ranks[start:start + a.size]
        h += r.sum() ** 2 / a.size
        start += a.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    h = max(h / correction, 0.0)
    return float(h), chi_square_sf(h, len(arrays) - 1)


@dataclass
class DunnResult:
    z: np.ndarray
    p: np.ndarray
    mean_ranks: np.ndarray
    undefined: bool = False

    def pairs(self, labels: Optional[Sequence[str]] = None) -> list[dict]:
        k = self.z.shape[0]
        names = list(labels) if labels is not None else [str(i) for i in range(k)]
        out = []
        for i in range(k):
            for j in range(i + 1, k):
                out.append({"a": names[i], "b": names[j],
                            "z": None if self.undefined else float(self.z[i, j]),
                            "p": None if self.undefined else float(self.p[i, j])})
        return out


def dunn_test(groups: Sequence[Sequence[float]]) -> DunnResult:
    """Pairwise mean-rank z tests with the tie-adjusted variance.

    Two-sided p-values are left uncorrected for multiple comparisons.
    When every value is tied the variance vanishes and the result is
    flagged ``undefined`` with NaN entries.
    """
    arrays, pooled, ranks = _prepare(groups)
    n = pooled.size
    k = len(arrays)
    sizes = np.array([a.size for a in arrays], dtype=float)
    bounds = np.concatenate([[0], np.cumsum(sizes).astype(int)])
    mean_ranks = np.array([ranks[bounds[i]:bounds[i + 1]].mean() for i in range(k)])
    var = n * (n + 1) / 12.0 - _tie_sum(pooled) / (12.0 * (n - 1))
    z = np.zeros((k, k))
    p = np.ones((k, k))
    if var <= 0:
        z[:] = np.nan
        p[:] = np.nan
        return DunnResult(z, p, mean_ranks, undefined=True)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            se = math.sqrt(var * (1.0 / sizes[i] + 1.0 / sizes[j]))
            z[i, j] = (mean_ranks[i] - mean_ranks[j]) / se
            p[i, j] = min(1.0, 2.0 * normal_sf(abs(z[i, j])))
    return DunnResult(z, p, mean_ranks)


def feature_tests(features: np.ndarray, clusters, names: Sequence[str], n_clusters: Optional[int] = None) -> list[dict]:
    """Kruskal-Wallis plus Dunn for every feature across clusters.

    Clusters without members are skipped.
    """
    clusters = np.asarray(clusters, dtype=np.int64)
    k = n_clusters if n_clusters is not None else int(clusters.max()) + 1
    present = [c for c in range(k) if np.any(clusters == c)]
    labels = [chr(ord("A") + c) for c in present]
    out = []
    for j, name in enumerate(names):
        groups = [features[clusters == c, j] for c in present]
        try:
            h, p = kruskal_wallis(groups)
            dunn = dunn_test(groups)
        except DomainError as exc:
            out.append({"feature": name, "error": str(exc)})
            continue
        out.append({"feature": name, "H": h, "p": p, "dunn": dunn.pairs(labels),
                    "dunn_undefined": dunn.undefined})
    return out
