"""Patient dataset schema, CSV I/O, harmonization helpers, fold plans and a
planted-structure synthetic generator."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, ParseError, ValidationError
from .numerics import RngStream

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"

RACE_CATEGORIES = ("caucasian", "asian", "african", "other")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    low: float
    high: float

    def validate(self, value: float) -> Optional[str]:
        if not math.isfinite(value):
            return f"{self.name}: non-finite value {value!r}"
        if value < self.low or value > self.high:
            return f"{self.name}: value {value!r} outside [{self.low}, {self.high}]"
        if self.kind != CONTINUOUS and value != int(value):
            return f"{self.name}: {self.kind} feature needs an integer code, got {value!r}"
        return None


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValidationError("feature names must be unique")

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def kinds(self) -> tuple[str, ...]:
        return tuple(f.kind for f in self.features)

    def to_json(self) -> list[dict]:
        return [asdict(f) for f in self.features]

    @classmethod
    def from_json(cls, items: Sequence[dict]) -> "FeatureSchema":
        return cls(tuple(FeatureSpec(d["name"], d["kind"], float(d["low"]), float(d["high"])) for d in items))


_SYMPTOMS = (
    "total_severity",
    "suicidal_ideation_planning",
    "guilt",
    "worthlessness",
    "psychomotor_agitation",
    "genital_symptoms",
    "anhedonia",
    "sadness",
    "fatigue",
    "overall_suicidal_ideation",
)
_BINARY_SYMPTOMS = (
    "guilt_bin",
    "anhedonia_bin",
    "negative_thoughts_v1",
    "negative_thoughts_v2",
    "worthlessness_bin",
    "excessive_guilt_bin",
)

DEFAULT_SCHEMA = FeatureSchema(
    tuple(FeatureSpec(n, CONTINUOUS, 0.0, 3.0) for n in _SYMPTOMS)
    + tuple(FeatureSpec(n, BINARY, 0.0, 1.0) for n in _BINARY_SYMPTOMS)
    + (
        FeatureSpec("age", CONTINUOUS, 18.0, 93.0),
        FeatureSpec("sex", BINARY, 0.0, 1.0),
        FeatureSpec("race_ethnicity", CATEGORICAL, 0.0, float(len(RACE_CATEGORIES) - 1)),
    )
)


@dataclass(frozen=True)
class TreatmentSet:
    names: tuple[str, ...]

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __getitem__(self, i):
        return self.names[i]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DomainError(f"unknown treatment {name!r}") from None


# Canonical order doubles as the tie-break order everywhere.
DEFAULT_TREATMENTS = TreatmentSet(
    (
        "citalopram",
        "sertraline",
        "mirtazapine",
        "mirtazapine+sertraline",
        "venlafaxine",
        "escitalopram",
        "mirtazapine+venlafaxine",
        "bupropion+escitalopram",
    )
)

# Patients per treatment in the pooled six-study sample (n = 5438).
REFERENCE_TREATMENT_COUNTS = (2477, 726, 559, 536, 402, 311, 214, 213)

ID_COLUMNS = ("patient_id", "study", "treatment", "remission")


@dataclass
class PatientRecord:
    patient_id: str
    study: str
    treatment: str
    remission: int
    features: tuple[Optional[float], ...]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented patient table.

    ``features`` holds values only where ``missing`` is False; entries under
    the mask carry no meaning and are zero-filled.
    """

    patient_ids: tuple[str, ...]
    studies: tuple[str, ...]
    treatments: np.ndarray
    remission: np.ndarray
    features: np.ndarray
    missing: np.ndarray
    schema: FeatureSchema = DEFAULT_SCHEMA
    treatment_set: TreatmentSet = DEFAULT_TREATMENTS

    def __post_init__(self):
        n = len(self.patient_ids)
        problems = []
        if len(self.studies) != n or self.treatments.shape != (n,) or self.remission.shape != (n,):
            problems.append("column lengths differ")
        if self.features.shape != (n, len(self.schema)) or self.missing.shape != self.features.shape:
            problems.append(f"feature matrix shape {self.features.shape} does not match {n} x {len(self.schema)}")
        if problems:
            raise ValidationError(problems)
        for arr in (self.treatments, self.remission, self.features, self.missing):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.patient_ids)

    @property
    def has_missing(self) -> bool:
        return bool(self.missing.any())

    def complete_features(self) -> np.ndarray:
        if self.has_missing:
            raise DomainError("dataset has missing feature values; impute first")
        return self.features

    @property
    def study_names(self) -> list[str]:
        return sorted(set(self.studies))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            tuple(self.patient_ids[i] for i in idx),
            tuple(self.studies[i] for i in idx),
            self.treatments[idx].copy(),
            self.remission[idx].copy(),
            self.features[idx].copy(),
            self.missing[idx].copy(),
            self.schema,
            self.treatment_set,
        )

    def records(self) -> Iterator[PatientRecord]:
        for i, pid in enumerate(self.patient_ids):
            feats = tuple(None if self.missing[i, j] else float(self.features[i, j]) for j in range(len(self.schema)))
            yield PatientRecord(pid, self.studies[i], self.treatment_set[int(self.treatments[i])], int(self.remission[i]), feats)

    @classmethod
    def from_records(
        cls,
        records: Iterable[PatientRecord],
        schema: FeatureSchema = DEFAULT_SCHEMA,
        treatment_set: TreatmentSet = DEFAULT_TREATMENTS,
    ) -> "Dataset":
        records = list(records)
        n, p = len(records), len(schema)
        feats = np.zeros((n, p))
        miss = np.zeros((n, p), dtype=bool)
        for i, r in enumerate(records):
            if len(r.features) != p:
                raise ValidationError(f"record {r.patient_id}: expected {p} features, got {len(r.features)}")
            for j, v in enumerate(r.features):
                if v is None:
                    miss[i, j] = True
                else:
                    feats[i, j] = v
        return cls(
            tuple(r.patient_id for r in records),
            tuple(r.study for r in records),
            np.array([treatment_set.index(r.treatment) for r in records], dtype=np.int64),
            np.array([r.remission for r in records], dtype=np.int64),
            feats,
            miss,
            schema,
            treatment_set,
        )

    def with_features(self, features: np.ndarray, missing: Optional[np.ndarray] = None) -> "Dataset":
        if missing is None:
            missing = np.zeros(features.shape, dtype=bool)
        return Dataset(self.patient_ids, self.studies, self.treatments.copy(), self.remission.copy(),
                       np.array(features, dtype=np.float64), np.array(missing, dtype=bool),
                       self.schema, self.treatment_set)


# --------------------------------------------------------------------------
# CSV


def _format_value(spec: FeatureSpec, value: float) -> str:
    if spec.kind == CONTINUOUS:
        return repr(float(value))
    return str(int(value))


def write_csv(dataset: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(ID_COLUMNS) + list(dataset.schema.names))
    for i, pid in enumerate(dataset.patient_ids):
        row = [pid, dataset.studies[i], dataset.treatment_set[int(dataset.treatments[i])], str(int(dataset.remission[i]))]
        for j, spec in enumerate(dataset.schema):
            row.append("" if dataset.missing[i, j] else _format_value(spec, dataset.features[i, j]))
        w.writerow(row)
    return buf.getvalue()


def load_csv(path, schema: FeatureSchema = DEFAULT_SCHEMA, treatment_set: TreatmentSet = DEFAULT_TREATMENTS) -> Dataset:
    """Read a patient CSV. Empty feature cells become missing values."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        expected = list(ID_COLUMNS) + list(schema.names)
        if sorted(header) != sorted(expected) or len(header) != len(expected):
            missing = sorted(set(expected) - set(header))
            extra = sorted(set(header) - set(expected))
            raise ParseError(f"header mismatch (missing: {missing}, unexpected: {extra})", line=1)
        col = {name: header.index(name) for name in expected}
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            treatment = row[col["treatment"]]
            if treatment not in treatment_set.names:
                raise ParseError(f"unknown treatment {treatment!r}", line=lineno)
            rem = row[col["remission"]].strip()
            if rem not in ("0", "1"):
                raise ParseError(f"remission must be 0 or 1, got {rem!r}", line=lineno)
            feats: list[Optional[float]] = []
            for spec in schema:
                cell = row[col[spec.name]].strip()
                if cell == "":
                    feats.append(None)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(f"{spec.name}: not a number: {cell!r}", line=lineno) from None
                problem = spec.validate(value)
                if problem:
                    raise ParseError(problem, line=lineno)
                feats.append(value)
            records.append(PatientRecord(row[col["patient_id"]], row[col["study"]], treatment, int(rem), tuple(feats)))
    return Dataset.from_records(records, schema, treatment_set)


def write_labels_csv(patient_ids: Sequence[str], labels: Sequence[int], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", "cluster"])
    for pid, c in zip(patient_ids, labels):
        w.writerow([pid, int(c)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_labels_csv(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["patient_id", "cluster"]:
            raise ParseError("labels header must be patient_id,cluster", line=1)
        out = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["patient_id"]] = int(row["cluster"])
            except (TypeError, ValueError):
                raise ParseError(f"bad cluster id {row['cluster']!r}", line=lineno) from None
        return out


# --------------------------------------------------------------------------
# Harmonization primitives


def binarize(values, threshold: float) -> list[Optional[int]]:
    """1 where value >= threshold, 0 below it; ``None`` stays ``None``."""
    if not math.isfinite(threshold):
        raise DomainError("threshold must be finite")
    return [None if v is None else int(v >= threshold) for v in values]


def rate_matching_threshold(values, reference) -> float:
    """Cutoff on ``values`` whose binarized positive rate best matches ``reference``.

    Candidates are the distinct observed values; ties keep the lowest cutoff.
    """
    obs = np.array([v for v in values if v is not None], dtype=float)
    ref = np.array([r for r in reference if r is not None], dtype=float)
    if obs.size == 0 or ref.size == 0:
        raise DomainError("need observed values in both samples")
    target = ref.mean()
    best, best_gap = None, math.inf
    for cut in np.unique(obs):
        gap = abs(np.mean(obs >= cut) - target)
        if gap < best_gap:
            best, best_gap = float(cut), gap
    return best


def _plotting_positions(sample) -> tuple[np.ndarray, np.ndarray]:
    s = np.sort(np.asarray(sample, dtype=float))
    if s.size == 0:
        raise DomainError("empty sample")
    p = (np.arange(1, s.size + 1) - 0.5) / s.size
    return s, p


def equipercentile_map(source_sample, target_sample, x):
    """Map ``x`` from the source scale onto the target scale by matching percentiles.

    Percentile ranks use plotting positions (i - 0.5)/n with linear
    interpolation; tied source values share their mean rank. Results are
    clamped to the observed target range.
    """
    s, p = _plotting_positions(source_sample)
    t, q = _plotting_positions(target_sample)
    uniq, inverse = np.unique(s, return_inverse=True)
    p_uniq = np.bincount(inverse, weights=p) / np.bincount(inverse)
    ranks = np.interp(np.asarray(x, dtype=float), uniq, p_uniq) if uniq.size > 1 else np.full(np.shape(x), p_uniq[0])
    out = np.interp(ranks, q, t)
    out = np.clip(out, t[0], t[-1])
    return float(out) if np.ndim(out) == 0 else out


def rescale(values, src_range, dst_range):
    lo, hi = map(float, src_range)
    dlo, dhi = map(float, dst_range)
    if hi == lo:
        raise DomainError(f"degenerate source range [{lo}, {hi}]")
    arr = np.asarray(values, dtype=float)
    out = dlo + (arr - lo) * (dhi - dlo) / (hi - lo)
    return float(out) if np.ndim(out) == 0 else out


def impute(dataset: Dataset, strategy: Optional[str] = None) -> Dataset:
    """Single imputation: column mean for continuous features, mode otherwise.

    ``strategy`` forces one rule for every column when given.
    """
    if strategy not in (None, "mean", "mode"):
        raise DomainError(f"unknown imputation strategy {strategy!r}")
    if not dataset.has_missing:
        return dataset
    feats = dataset.features.copy()
    for j, spec in enumerate(dataset.schema):
        miss = dataset.missing[:, j]
        if not miss.any():
            continue
        observed = feats[~miss, j]
        if observed.size == 0:
            raise DomainError(f"feature {spec.name!r} has no observed values")
        rule = strategy or ("mean" if spec.kind == CONTINUOUS else "mode")
        if rule == "mean":
            fill = observed.mean()
        else:
            vals, counts = np.unique(observed, return_counts=True)
            fill = vals[np.argmax(counts)]
        feats[miss, j] = fill
    return dataset.with_features(feats)


# --------------------------------------------------------------------------
# Fold plans


@dataclass
class FoldPlan:
    """Fold index per record, one row per repeat."""

    k: int
    assignments: np.ndarray  # shape (repeats, n)

    @property
    def repeats(self) -> int:
        return self.assignments.shape[0]

    def folds(self, repeat: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        a = self.assignments[repeat]
        for f in range(self.k):
            yield np.flatnonzero(a != f), np.flatnonzero(a == f)


def stratified_kfold(labels, k: int, rng: RngStream) -> np.ndarray:
    """Fold id per label for one repeat.

    Each class is shuffled and dealt round-robin; negatives continue the deal
    where positives stopped so overall fold sizes stay balanced too.
    """
    y = np.asarray(labels).astype(int)
    if k < 2:
        raise DomainError("k must be at least 2")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size + neg.size != y.size:
        raise DomainError("labels must be binary")
    if pos.size == 0 or neg.size == 0:
        raise DomainError("both classes must be present")
    if k > min(pos.size, neg.size):
        raise DomainError(f"k={k} exceeds the size of the smaller class ({min(pos.size, neg.size)})")
    out = np.empty(y.size, dtype=np.int64)
    pos = pos[rng.permutation(pos.size)]
    neg = neg[rng.permutation(neg.size)]
    out[pos] = np.arange(pos.size) % k
    out[neg] = (np.arange(neg.size) + pos.size) % k
    return out


def make_fold_plan(labels, k: int, repeats: int, seed: int) -> FoldPlan:
    root = RngStream(seed, "folds")
    rows = [stratified_kfold(labels, k, root.derive(r)) for r in range(repeats)]
    return FoldPlan(k, np.vstack(rows) if rows else np.empty((0, len(labels)), dtype=np.int64))


# --------------------------------------------------------------------------
# Synthetic generator


# Observed remission rate per (cluster, treatment), clusters A/B/C, canonical treatment order.
TABLE2_REMISSION = (
    (0.45, 0.34, 0.18, 0.19, 0.40, 0.35, 0.43, 0.42),
    (0.50, 0.36, 0.47, 0.47, 0.59, 0.39, 0.49, 0.62),
    (0.36, 0.34, 0.15, 0.18, 0.49, 0.39, 0.33, 0.34),
)
TABLE2_CLUSTER_SIZES = (1742, 2459, 1237)

_BASE_MEANS = {
    "total_severity": 1.7, "suicidal_ideation_planning": 0.8, "guilt": 1.2, "worthlessness": 1.3,
    "psychomotor_agitation": 0.9, "genital_symptoms": 1.2, "anhedonia": 1.5, "sadness": 1.8,
    "fatigue": 1.7, "overall_suicidal_ideation": 0.8,
    "guilt_bin": 0.45, "anhedonia_bin": 0.6, "negative_thoughts_v1": 0.5, "negative_thoughts_v2": 0.3,
    "worthlessness_bin": 0.45, "excessive_guilt_bin": 0.3,
    "age": 43.5, "sex": 0.61, "race_ethnicity": 0.0,
}
# Cluster A: younger, more fatigue, more severe. B: older, more female, milder.
# C: more agitation, suicidality and genital symptoms, more ethnically diverse.
_CLUSTER_SHIFTS = (
    {"age": -9.0, "fatigue": 0.6, "total_severity": 0.4, "anhedonia": 0.3, "sadness": 0.2, "sex": -0.06},
    {"age": 7.0, "sex": 0.14, "total_severity": -0.5, "fatigue": -0.4, "anhedonia": -0.3, "sadness": -0.3,
     "guilt": -0.2, "worthlessness": -0.3, "suicidal_ideation_planning": -0.3, "overall_suicidal_ideation": -0.3},
    {"age": 5.0, "psychomotor_agitation": 0.9, "suicidal_ideation_planning": 0.6, "overall_suicidal_ideation": 0.6,
     "genital_symptoms": 0.7, "total_severity": 0.4, "fatigue": -0.2, "sex": -0.08},
)
_DEFAULT_RACE_PROBS = ((0.72, 0.18, 0.06, 0.04), (0.70, 0.20, 0.06, 0.04), (0.45, 0.22, 0.18, 0.15))

# Which studies contributed each treatment arm, with patient weights.
DEFAULT_TREATMENT_STUDIES = {
    "citalopram": {"STARD": 1.0},
    "sertraline": {"REVAMP": 612 / 726, "EMBARC": 114 / 726},
    "mirtazapine": {"SUND": 1.0},
    "mirtazapine+sertraline": {"SUND": 1.0},
    "venlafaxine": {"IRL-GREY": 372 / 402, "REVAMP": 30 / 402},
    "escitalopram": {"REVAMP": 155 / 311, "COMED": 156 / 311},
    "mirtazapine+venlafaxine": {"COMED": 1.0},
    "bupropion+escitalopram": {"COMED": 1.0},
}


@dataclass
class SynthConfig:
    """Generating process for planted-cluster patient data.

    ``feature_means`` and ``feature_sds`` are per-cluster maps keyed by
    feature name: location/scale of a truncated normal for continuous
    features, the success probability for binary ones (sd ignored).
    Race is drawn from ``race_probs`` unless the patient's study has an
    entry in ``race_by_study``.
    """

    n_patients: int
    cluster_weights: list[float]
    feature_means: list[dict[str, float]]
    feature_sds: list[dict[str, float]]
    race_probs: list[list[float]]
    remission_table: list[list[float]]
    treatment_probs: Optional[list[float]] = None
    treatment_counts: Optional[list[int]] = None
    treatment_studies: dict[str, dict[str, float]] = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_TREATMENT_STUDIES.items()})
    race_by_study: dict[str, list[float]] = field(default_factory=dict)
    separation: float = 1.0
    missing_rate: float = 0.0
    decimals: int = 4
    seed: int = 0

    def violations(self, schema: FeatureSchema = DEFAULT_SCHEMA, treatments: TreatmentSet = DEFAULT_TREATMENTS) -> list[str]:
        v = []
        m, T = len(self.cluster_weights), len(treatments)
        if self.n_patients < 1:
            v.append("n_patients must be >= 1")
        if m < 1:
            v.append("need at least one cluster")
        if any(w < 0 for w in self.cluster_weights) or abs(sum(self.cluster_weights) - 1.0) > 1e-9:
            v.append("cluster_weights must be non-negative and sum to 1")
        for name, tbl in (("feature_means", self.feature_means), ("feature_sds", self.feature_sds), ("race_probs", self.race_probs)):
            if len(tbl) != m:
                v.append(f"{name} needs one entry per cluster ({m})")
        if len(self.remission_table) != m or any(len(row) != T for row in self.remission_table):
            v.append(f"remission_table must be {m} x {T}")
        elif any(not 0.0 <= p <= 1.0 for row in self.remission_table for p in row):
            v.append("remission probabilities must lie in [0, 1]")
        for c, means in enumerate(self.feature_means):
            for spec in schema:
                if spec.kind == CATEGORICAL:
                    continue
                if spec.name not in means:
                    v.append(f"cluster {c}: no mean for {spec.name}")
                elif spec.kind == BINARY and not 0.0 <= means[spec.name] <= 1.0:
                    v.append(f"cluster {c}: probability for {spec.name} outside [0, 1]")
        for c, sds in enumerate(self.feature_sds):
            for spec in schema:
                if spec.kind == CONTINUOUS and not sds.get(spec.name, 0.0) > 0.0:
                    v.append(f"cluster {c}: sd for {spec.name} must be positive")
        for c, probs in enumerate(self.race_probs):
            if len(probs) != len(RACE_CATEGORIES) or any(p < 0 for p in probs) or abs(sum(probs) - 1) > 1e-9:
                v.append(f"cluster {c}: race_probs must be {len(RACE_CATEGORIES)} probabilities summing to 1")
        for study, probs in self.race_by_study.items():
            if len(probs) != len(RACE_CATEGORIES) or any(p < 0 for p in probs) or abs(sum(probs) - 1) > 1e-9:
                v.append(f"race_by_study[{study}] must be {len(RACE_CATEGORIES)} probabilities summing to 1")
        if (self.treatment_probs is None) == (self.treatment_counts is None):
            v.append("give exactly one of treatment_probs or treatment_counts")
        elif self.treatment_probs is not None:
            tp = self.treatment_probs
            if len(tp) != T or any(p < 0 for p in tp) or abs(sum(tp) - 1) > 1e-9:
                v.append(f"treatment_probs must be {T} probabilities summing to 1")
        else:
            tc = self.treatment_counts
            if len(tc) != T or any(c < 0 for c in tc) or sum(tc) != self.n_patients:
                v.append(f"treatment_counts must be {T} non-negative counts summing to n_patients")
        for t in treatments:
            studies = self.treatment_studies.get(t)
            if not studies or any(w < 0 for w in studies.values()) or abs(sum(studies.values()) - 1) > 1e-9:
                v.append(f"treatment_studies[{t}] must be study weights summing to 1")
        if not 0.0 <= self.missing_rate < 1.0:
            v.append("missing_rate must lie in [0, 1)")
        if self.separation < 0:
            v.append("separation must be non-negative")
        if not 0 <= self.seed < 2**64:
            v.append("seed must be a 64-bit unsigned integer")
        return v

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError([f"unknown field {u!r}" for u in unknown])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SynthConfig":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def default_synth_config(n_patients: int = 5438, seed: int = 0, separation: float = 1.0,
                         exact_counts: bool = False) -> SynthConfig:
    """Three clusters sized and outcome-tabled after the reference analysis."""
    total = sum(TABLE2_CLUSTER_SIZES)
    weights = [s / total for s in TABLE2_CLUSTER_SIZES]
    means, sds = [], []
    for shift in _CLUSTER_SHIFTS:
        mu = {k: v + shift.get(k, 0.0) for k, v in _BASE_MEANS.items() if k != "race_ethnicity"}
        means.append(mu)
        sds.append({k: (11.0 if k == "age" else 0.6) for k, spec in zip(DEFAULT_SCHEMA.names, DEFAULT_SCHEMA) if spec.kind == CONTINUOUS})
    ref_total = sum(REFERENCE_TREATMENT_COUNTS)
    cfg = SynthConfig(
        n_patients=n_patients,
        cluster_weights=weights,
        feature_means=means,
        feature_sds=sds,
        race_probs=[list(r) for r in _DEFAULT_RACE_PROBS],
        remission_table=[list(r) for r in TABLE2_REMISSION],
        treatment_probs=None if exact_counts else [c / ref_total for c in REFERENCE_TREATMENT_COUNTS],
        treatment_counts=_apportion(REFERENCE_TREATMENT_COUNTS, n_patients) if exact_counts else None,
        race_by_study={"SUND": [0.0, 1.0, 0.0, 0.0]},
        separation=separation,
        seed=seed,
    )
    return cfg


def _apportion(weights: Sequence[int], n: int) -> list[int]:
    """Largest-remainder split of ``n`` proportional to ``weights``."""
    total = sum(weights)
    raw = [w * n / total for w in weights]
    out = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - out[i]), i))
    for i in order[: n - sum(out)]:
        out[i] += 1
    return out


def _truncated_normal(rng: RngStream, mean, sd, low, high, size):
    a = special.ndtr((low - mean) / sd)
    b = special.ndtr((high - mean) / sd)
    u = a + (b - a) * rng.random(size)
    x = mean + sd * special.ndtri(np.clip(u, 1e-300, 1 - 1e-16))
    return np.clip(x, low, high)


def generate_synthetic(cfg: SynthConfig, schema: FeatureSchema = DEFAULT_SCHEMA,
                       treatments: TreatmentSet = DEFAULT_TREATMENTS) -> tuple[Dataset, np.ndarray]:
    """Draw a dataset with planted clusters; returns it with the true cluster per patient."""
    problems = cfg.violations(schema, treatments)
    if problems:
        raise ValidationError(problems)
    rng = RngStream(cfg.seed, "synth")
    n, m = cfg.n_patients, len(cfg.cluster_weights)

    clusters = rng.derive("cluster").choice(m, size=n, p=np.asarray(cfg.cluster_weights))

    t_rng = rng.derive("treatment")
    if cfg.treatment_counts is not None:
        treat = np.repeat(np.arange(len(treatments)), cfg.treatment_counts)
        treat = treat[t_rng.permutation(n)]
    else:
        treat = t_rng.choice(len(treatments), size=n, p=np.asarray(cfg.treatment_probs))

    s_rng = rng.derive("study")
    studies = [""] * n
    for t, name in enumerate(treatments):
        idx = np.flatnonzero(treat == t)
        opts = sorted(cfg.treatment_studies[name])
        w = np.array([cfg.treatment_studies[name][s] for s in opts])
        picks = s_rng.choice(len(opts), size=idx.size, p=w / w.sum())
        for i, k in zip(idx, picks):
            studies[i] = opts[k]

    feats = np.zeros((n, len(schema)))
    f_rng = rng.derive("features")
    for j, spec in enumerate(schema):
        col_rng = f_rng.derive(spec.name)
        if spec.kind == CATEGORICAL:
            continue
        if spec.kind == CONTINUOUS:
            centre = np.mean([cfg.feature_means[c][spec.name] for c in range(m)])
            mu = centre + cfg.separation * (np.array([cfg.feature_means[c][spec.name] for c in range(m)]) - centre)
            sd = np.array([cfg.feature_sds[c][spec.name] for c in range(m)])
            vals = _truncated_normal(col_rng, mu[clusters], sd[clusters], spec.low, spec.high, n)
            feats[:, j] = np.round(vals, 0 if spec.name == "age" else cfg.decimals)
        else:
            p = np.array([cfg.feature_means[c][spec.name] for c in range(m)])
            feats[:, j] = (col_rng.random(n) < p[clusters]).astype(float)

    race_rng = rng.derive("race")
    race_j = [j for j, s in enumerate(schema) if s.kind == CATEGORICAL]
    if race_j:
        j = race_j[0]
        u = race_rng.random(n)
        for i in range(n):
            probs = cfg.race_by_study.get(studies[i], cfg.race_probs[clusters[i]])
            feats[i, j] = float(np.searchsorted(np.cumsum(probs), u[i], side="right").clip(0, len(probs) - 1))

    table = np.asarray(cfg.remission_table)
    remission = (rng.derive("remission").random(n) < table[clusters, treat]).astype(np.int64)

    missing = np.zeros(feats.shape, dtype=bool)
    if cfg.missing_rate > 0:
        missing = rng.derive("missing").random(feats.shape) < cfg.missing_rate
        feats[missing] = 0.0

    ds = Dataset(
        tuple(f"P{i:05d}" for i in range(n)),
        tuple(studies),
        treat.astype(np.int64),
        remission,
        feats,
        missing,
        schema,
        treatments,
    )
    return ds, clusters.astype(np.int64)
