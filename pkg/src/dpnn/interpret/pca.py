"""Principal component analysis for checking whether merged studies separate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..dataio import Dataset
from ..errors import DomainError
from ..numerics import symmetric_eigen

RACE_FEATURE = "race_ethnicity"
REMISSION_VARIABLE = "remission"


@dataclass
class PcaResult:
    variables: list[str]
    loadings: np.ndarray  # (p, p); column c is component c
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    projections: np.ndarray  # (n, 2)
    studies: list[str]
    mean: np.ndarray
    scale: np.ndarray

    def top_loadings(self, n_components: int = 2) -> dict[str, list[float]]:
        return {v: [float(x) for x in self.loadings[i, :n_components]] for i, v in enumerate(self.variables)}

    def to_json(self, include_projections: bool = True) -> dict:
        out = {
            "variables": self.variables,
            "loadings": self.top_loadings(min(2, len(self.variables))),
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "explained_variance_ratio": [float(e) for e in self.explained_variance_ratio],
            "cumulative_explained_variance": [float(e) for e in np.cumsum(self.explained_variance_ratio)],
        }
        if include_projections:
            out["projections"] = [
                {"study": s, "pc1": float(p[0]), "pc2": float(p[1]) if p.size > 1 else 0.0}
                for s, p in zip(self.studies, self.projections)
            ]
        return out


def pca_matrix(X, variables: Sequence[str], studies: Optional[Sequence[str]] = None,
               standardize: bool = True) -> PcaResult:
    """PCA of the sample covariance (or correlation, when standardizing).

    Each loading vector is signed so its largest-magnitude entry is
    positive. Projections are the centered (and scaled) data times the
    loadings.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p < 2:
        raise DomainError("need at least two variables")
    if n < 3:
        raise DomainError("need at least three records")
    if len(variables) != p:
        raise DomainError("one name per variable required")
    mean = X.mean(axis=0)
    Xc = X - mean
    scale = np.ones(p)
    if standardize:
        sd = Xc.std(axis=0, ddof=1)
        flat = [variables[j] for j in range(p) if not sd[j] > 1e-12]
        if flat:
            raise DomainError(f"zero variance in column(s): {', '.join(flat)}")
        scale = sd
        Xc = Xc / sd
    cov = Xc.T @ Xc / (n - 1)
    cov = 0.5 * (cov + cov.T)
    w, v = symmetric_eigen(cov)
    w = np.clip(w, 0.0, None)
    for c in range(p):
        i = int(np.argmax(np.abs(v[:, c])))
        if v[i, c] < 0:
            v[:, c] = -v[:, c]
    total = w.sum()
    evr = w / total if total > 0 else np.full(p, 1.0 / p)
    proj = Xc @ v[:, :2]
    tags = list(studies) if studies is not None else [""] * n
    return PcaResult(list(variables), v, w, evr, proj, tags, mean, scale)


def pca(dataset: Dataset, variables: Optional[Sequence[str]] = None, standardize: bool = True,
        include_race: bool = False, include_remission: bool = True) -> PcaResult:
    """PCA over dataset features, optionally adding race and the outcome."""
    X = dataset.complete_features()
    names = list(dataset.schema.names)
    if variables is None:
        variables = [v for v in names if v != RACE_FEATURE]
    variables = list(variables)
    if include_race and RACE_FEATURE not in variables:
        variables.append(RACE_FEATURE)
    if not include_race and RACE_FEATURE in variables:
        variables.remove(RACE_FEATURE)
    cols = []
    for v in variables:
        if v not in names:
            raise DomainError(f"unknown variable {v!r}")
        cols.append(X[:, names.index(v)])
    if include_remission:
        variables.append(REMISSION_VARIABLE)
        cols.append(dataset.remission.astype(float))
    return pca_matrix(np.column_stack(cols), variables, dataset.studies, standardize)
