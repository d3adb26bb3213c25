"""Prototype clusters, their outcome tables, feature histograms and
per-patient similarity reports."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..dataio import DEFAULT_TREATMENTS, Dataset, TreatmentSet
from ..errors import DomainError
from ..model import DpnnModel, encode, proto_distances

LOW_CONFIDENCE_N = 25


def assign_clusters(model: DpnnModel, dataset: Dataset) -> np.ndarray:
    """Index of the nearest prototype (squared Euclidean, latent space) per patient.

    ``argmin`` returns the first minimum, so ties go to the lowest index.
    """
    z = encode(model, model.scale(dataset.complete_features()))
    s = proto_distances(model, np.atleast_2d(z))
    return np.argmin(s, axis=1).astype(np.int64)


def cluster_letter(c: int) -> str:
    return chr(ord("A") + c) if c < 26 else f"C{c}"


@dataclass
class TreatmentCell:
    treatment: str
    n: int
    remitted: int
    rate: Optional[float]
    low_confidence: bool

    def to_json(self) -> dict:
        return {"treatment": self.treatment, "n": self.n, "remitted": self.remitted,
                "rate": self.rate, "low_confidence": self.low_confidence}


@dataclass
class ClusterProfile:
    cluster_id: int
    member_ids: list[str]
    size: int
    remission_rate: Optional[float]
    cells: list[TreatmentCell]
    feature_summary: dict[str, dict] = field(default_factory=dict)

    def cell(self, treatment: str) -> TreatmentCell:
        for c in self.cells:
            if c.treatment == treatment:
                return c
        raise KeyError(treatment)

    def to_json(self, include_members: bool = True) -> dict:
        out = {
            "cluster_id": self.cluster_id,
            "label": cluster_letter(self.cluster_id),
            "size": self.size,
            "remission_rate": self.remission_rate,
            "treatments": [c.to_json() for c in self.cells],
            "ranking": [c.treatment for c in rank_treatments(self)],
            "feature_summary": self.feature_summary,
        }
        if include_members:
            out["member_ids"] = self.member_ids
        return out


def cluster_treatment_table(dataset: Dataset, clusters, n_clusters: Optional[int] = None,
                            min_n: int = LOW_CONFIDENCE_N) -> list[ClusterProfile]:
    """Observed remission by (cluster, treatment) plus per-feature summaries.

    Cells with fewer than ``min_n`` patients are flagged low-confidence;
    empty cells have no rate.
    """
    clusters = np.asarray(clusters, dtype=np.int64)
    if clusters.shape != (len(dataset),):
        raise DomainError("need one cluster id per patient")
    if clusters.size and clusters.min() < 0:
        raise DomainError("cluster ids must be non-negative")
    k = n_clusters if n_clusters is not None else (int(clusters.max()) + 1 if clusters.size else 0)
    hist = feature_histograms(dataset, clusters, k) if not dataset.has_missing else {}
    profiles = []
    for c in range(k):
        members = np.flatnonzero(clusters == c)
        y = dataset.remission[members]
        t = dataset.treatments[members]
        cells = []
        for ti, name in enumerate(dataset.treatment_set):
            sel = t == ti
            n = int(sel.sum())
            r = int(y[sel].sum())
            cells.append(TreatmentCell(name, n, r, r / n if n else None, n < min_n))
        summary = {}
        for j, spec in enumerate(dataset.schema):
            col = dataset.features[members, j][~dataset.missing[members, j]]
            summary[spec.name] = {
                "mean": float(col.mean()) if col.size else None,
                "histogram": hist.get(spec.name, {}).get(str(c), {}),
            }
        profiles.append(ClusterProfile(c, [dataset.patient_ids[i] for i in members], int(members.size),
                                       float(y.mean()) if members.size else None, cells, summary))
    return profiles


def profile_from_rates(rates: dict[str, float], treatments: TreatmentSet = DEFAULT_TREATMENTS,
                       cluster_id: int = 0) -> ClusterProfile:
    """Build a profile from published per-treatment rates (counts unknown)."""
    cells = []
    for name in treatments:
        if name in rates:
            cells.append(TreatmentCell(name, 0, 0, float(rates[name]), False))
        else:
            cells.append(TreatmentCell(name, 0, 0, None, True))
    return ClusterProfile(cluster_id, [], 0, None, cells)


def rank_treatments(profile: ClusterProfile) -> list[TreatmentCell]:
    """Rated treatments by descending remission rate; ties keep canonical order."""
    rated = [(i, c) for i, c in enumerate(profile.cells) if c.rate is not None]
    rated.sort(key=lambda ic: (-ic[1].rate, ic[0]))
    return [c for _, c in rated]


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def feature_histograms(dataset: Dataset, clusters, n_clusters: Optional[int] = None) -> dict[str, dict[str, dict[str, float]]]:
    """Per feature, per cluster: relative frequency of each rounded value.

    Values are rounded half away from zero before counting, so rescaled
    non-integer scores fall into integer bins.
    """
    X = dataset.complete_features()
    clusters = np.asarray(clusters, dtype=np.int64)
    k = n_clusters if n_clusters is not None else int(clusters.max()) + 1
    out: dict[str, dict[str, dict[str, float]]] = {}
    for j, spec in enumerate(dataset.schema):
        binned = _round_half_away(X[:, j]).astype(np.int64)
        per_cluster = {}
        for c in range(k):
            vals = binned[clusters == c]
            if vals.size == 0:
                per_cluster[str(c)] = {}
                continue
            uniq, counts = np.unique(vals, return_counts=True)
            per_cluster[str(c)] = {str(int(u)): float(n / vals.size) for u, n in zip(uniq, counts)}
        out[spec.name] = per_cluster
    return out


def _invert_minmax(d: np.ndarray) -> np.ndarray:
    lo, hi = d.min(), d.max()
    if hi - lo <= 0:
        return np.ones_like(d)
    return 1.0 - (d - lo) / (hi - lo)


def cluster_feature_means(dataset: Dataset, clusters, n_clusters: Optional[int] = None,
                          weights: Optional[np.ndarray] = None) -> np.ndarray:
    """(k, p) matrix of per-cluster feature averages.

    ``weights`` optionally weights patients (e.g. by closeness to their
    prototype); the default is the plain mean.
    """
    X = dataset.complete_features()
    clusters = np.asarray(clusters, dtype=np.int64)
    k = n_clusters if n_clusters is not None else int(clusters.max()) + 1
    w = np.ones(len(dataset)) if weights is None else np.asarray(weights, dtype=float)
    means = np.full((k, X.shape[1]), np.nan)
    for c in range(k):
        sel = clusters == c
        if w[sel].sum() > 0:
            means[c] = np.average(X[sel], axis=0, weights=w[sel])
    return means


def patient_feature_similarity(x, cluster_means) -> np.ndarray:
    """Per-feature similarity of a patient to each cluster, shape (p, k).

    For each feature the absolute gaps to the cluster averages are min-max
    normalized across clusters and inverted, so the closest cluster scores
    1 and the farthest 0. Equal gaps give 1 everywhere.
    """
    x = np.asarray(x, dtype=float)
    means = np.asarray(cluster_means, dtype=float)
    if means.ndim != 2 or means.shape[0] < 2:
        raise DomainError("need at least two clusters")
    if means.shape[1] != x.shape[0]:
        raise DomainError("patient and cluster means have different feature counts")
    gaps = np.abs(means - x[None, :])
    return np.stack([_invert_minmax(gaps[:, f]) for f in range(x.shape[0])])


def patient_latent_similarity(model: DpnnModel, x_scaled) -> np.ndarray:
    """Inverted min-max-normalized Euclidean distance to each prototype."""
    z = encode(model, np.asarray(x_scaled, dtype=float))
    d = np.sqrt(proto_distances(model, z))
    return _invert_minmax(d)


def patient_report(model: DpnnModel, dataset: Dataset, clusters, patient_id: str,
                   weights: Optional[np.ndarray] = None) -> dict:
    """Everything needed to draw the patient-vs-cluster radar charts."""
    try:
        i = dataset.patient_ids.index(patient_id)
    except ValueError:
        raise DomainError(f"unknown patient {patient_id!r}") from None
    k = model.hyperparams.n_prototypes
    means = cluster_feature_means(dataset, clusters, k, weights)
    x = dataset.complete_features()[i]
    present = ~np.isnan(means).any(axis=1)
    feat_sim = patient_feature_similarity(x, means[present]) if present.sum() >= 2 else None
    latent = patient_latent_similarity(model, model.scale(x))
    from ..model import predict_probs

    probs = predict_probs(model, model.scale(x))
    clusters_present = [int(c) for c in np.flatnonzero(present)]
    return {
        "patient_id": patient_id,
        "cluster": int(np.asarray(clusters)[i]),
        "feature_similarity": None if feat_sim is None else {
            name: {cluster_letter(c): float(feat_sim[j, n]) for n, c in enumerate(clusters_present)}
            for j, name in enumerate(dataset.schema.names)
        },
        "latent_similarity": {cluster_letter(c): float(v) for c, v in enumerate(latent)},
        "treatment_probabilities": {t: float(p) for t, p in zip(model.treatments, probs)},
    }
