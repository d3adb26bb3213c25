"""Prototype-latent autoencoder-classifier.

Patients are encoded into a latent space holding ``m`` learned prototypes.
The classifier sees only the squared distances from an encoding to each
prototype and emits one sigmoid remission probability per treatment.
Training minimizes a weighted sum of classification, reconstruction and
(negated) prototype outcome-variance terms; gradients are derived by hand.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .dataio import DEFAULT_SCHEMA, DEFAULT_TREATMENTS, FeatureSchema, TreatmentSet
from .errors import DomainError, FormatError, ShapeError, ValidationError
from .numerics import RngStream

FORMAT_VERSION = 1
BCE_CLAMP = 1e-12
ACTIVATIONS = ("tanh", "identity")


@dataclass
class Hyperparams:
    latent_dim: int = 8
    n_prototypes: int = 3
    encoder_hidden: list[int] = field(default_factory=lambda: [16])
    decoder_hidden: Optional[list[int]] = None  # None mirrors the encoder
    classifier_hidden: list[int] = field(default_factory=lambda: [8])
    activation: str = "tanh"
    lambda_cls: float = 1.0
    lambda_ae: float = 0.5
    lambda_pv: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: Optional[int] = None
    validation_fraction: float = 0.1
    seed: int = 0

    def violations(self) -> list[str]:
        v = []
        if self.latent_dim < 1:
            v.append("latent_dim must be >= 1")
        if self.n_prototypes < 1:
            v.append("n_prototypes must be >= 1")
        for name in ("encoder_hidden", "classifier_hidden"):
            if any(int(s) < 1 for s in getattr(self, name)):
                v.append(f"{name} sizes must be >= 1")
        if self.decoder_hidden is not None and any(int(s) < 1 for s in self.decoder_hidden):
            v.append("decoder_hidden sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            v.append(f"activation must be one of {ACTIVATIONS}")
        for name in ("lambda_cls", "lambda_ae", "lambda_pv", "alpha", "beta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                v.append(f"{name} must be finite and >= 0")
        if self.epochs < 0:
            v.append("epochs must be >= 0")
        if self.batch_size < 1:
            v.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            v.append("learning_rate must be > 0")
        if self.patience is not None and self.patience < 1:
            v.append("patience must be >= 1 when set")
        if not 0.0 < self.validation_fraction < 1.0:
            v.append("validation_fraction must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            v.append("seed must be a 64-bit unsigned integer")
        return v

    def validate(self) -> "Hyperparams":
        problems = self.violations()
        if problems:
            raise ValidationError(problems)
        return self

    @property
    def decoder_sizes(self) -> list[int]:
        return list(reversed(self.encoder_hidden)) if self.decoder_hidden is None else list(self.decoder_hidden)

    def replace(self, **changes) -> "Hyperparams":
        d = asdict(self)
        d.update(changes)
        return Hyperparams(**d)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError([f"unknown hyperparameter {u!r}" for u in unknown])
        return cls(**doc).validate()

    @classmethod
    def load(cls, path) -> "Hyperparams":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class Batch(NamedTuple):
    x: np.ndarray          # (B, p) scaled features
    treatment: np.ndarray  # (B,) treatment index
    remission: np.ndarray  # (B,) 0/1


@dataclass
class LossBreakdown:
    total: float
    cls_term: float
    ae_term: float
    pv_term: float
    between_variance: float
    within_variance: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class DpnnModel:
    hyperparams: Hyperparams
    params: dict[str, np.ndarray]
    schema: FeatureSchema = DEFAULT_SCHEMA
    treatments: TreatmentSet = DEFAULT_TREATMENTS
    scale_mean: Optional[np.ndarray] = None
    scale_std: Optional[np.ndarray] = None

    def __post_init__(self):
        p = len(self.schema)
        if self.scale_mean is None:
            self.scale_mean = np.zeros(p)
        if self.scale_std is None:
            self.scale_std = np.ones(p)

    @property
    def prototypes(self) -> np.ndarray:
        return self.params["prototypes"]

    @property
    def n_inputs(self) -> int:
        return len(self.schema)

    def scale(self, features) -> np.ndarray:
        """Standardize raw feature rows with the stored training statistics."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.n_inputs:
            raise ShapeError(f"expected {self.n_inputs} features, got {x.shape[-1]}")
        return (x - self.scale_mean) / self.scale_std

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def copy(self) -> "DpnnModel":
        return DpnnModel(self.hyperparams.replace(), {k: v.copy() for k, v in self.params.items()},
                         self.schema, self.treatments, self.scale_mean.copy(), self.scale_std.copy())


# --------------------------------------------------------------------------
# Construction


def layer_sizes(h: Hyperparams, n_inputs: int, n_treatments: int) -> dict[str, list[int]]:
    return {
        "encoder": [n_inputs] + [int(s) for s in h.encoder_hidden] + [h.latent_dim],
        "decoder": [h.latent_dim] + [int(s) for s in h.decoder_sizes] + [n_inputs],
        "classifier": [h.n_prototypes] + [int(s) for s in h.classifier_hidden] + [n_treatments],
    }


def init_model(
    h: Hyperparams,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    treatments: TreatmentSet = DEFAULT_TREATMENTS,
    rng: Optional[RngStream] = None,
    data: Optional[np.ndarray] = None,
    scale_mean=None,
    scale_std=None,
) -> DpnnModel:
    """Glorot-uniform weights, zero biases.

    With ``data`` (already scaled rows), prototypes start at the encodings of
    ``m`` distinct randomly chosen rows; otherwise they are standard normal.
    """
    h.validate()
    rng = rng if rng is not None else RngStream(h.seed, "init")
    params: dict[str, np.ndarray] = {}
    w_rng = rng.derive("weights")
    for net, sizes in layer_sizes(h, len(schema), len(treatments)).items():
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[f"{net}.{i}.W"] = w_rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"{net}.{i}.b"] = np.zeros(fan_out)
    m, d = h.n_prototypes, h.latent_dim
    model = DpnnModel(h, params, schema, treatments,
                      None if scale_mean is None else np.asarray(scale_mean, dtype=float),
                      None if scale_std is None else np.asarray(scale_std, dtype=float))
    p_rng = rng.derive("prototypes")
    if data is not None:
        data = np.asarray(data, dtype=np.float64)
        if data.shape[0] < m:
            raise DomainError(f"need at least {m} rows to seed {m} prototypes")
        rows = p_rng.choice(data.shape[0], size=m, replace=False)
        params["prototypes"] = encode(model, data[rows])
    else:
        params["prototypes"] = p_rng.normal(size=(m, d))
    return model


# --------------------------------------------------------------------------
# Forward pieces


def _n_layers(params, net: str) -> int:
    n = 0
    while f"{net}.{n}.W" in params:
        n += 1
    return n


def _act(kind: str, a: np.ndarray) -> np.ndarray:
    return np.tanh(a) if kind == "tanh" else a


def _act_grad(kind: str, out: np.ndarray) -> np.ndarray:
    return 1.0 - out * out if kind == "tanh" else np.ones_like(out)


def _mlp_forward(params, net: str, x: np.ndarray, hidden_act: str, out_act: str):
    caches = []
    h = x
    n = _n_layers(params, net)
    for i in range(n):
        kind = out_act if i == n - 1 else hidden_act
        out = _act(kind, h @ params[f"{net}.{i}.W"] + params[f"{net}.{i}.b"])
        caches.append((h, out, kind))
        h = out
    return h, caches


def _mlp_backward(params, net: str, caches, grad_out: np.ndarray, grads: dict) -> np.ndarray:
    g = grad_out
    for i in reversed(range(len(caches))):
        h_in, out, kind = caches[i]
        g = g * _act_grad(kind, out)
        grads[f"{net}.{i}.W"] += h_in.T @ g
        grads[f"{net}.{i}.b"] += g.sum(axis=0)
        g = g @ params[f"{net}.{i}.W"].T
    return g


def _as_rows(model: DpnnModel, x, width: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = arr.reshape(1, -1) if single else arr
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"expected vectors of length {width}, got shape {np.shape(x)}")
    return arr, single


def encode(model: DpnnModel, x) -> np.ndarray:
    """Latent encoding of scaled feature vector(s)."""
    rows, single = _as_rows(model, x, model.n_inputs)
    act = model.hyperparams.activation
    z, _ = _mlp_forward(model.params, "encoder", rows, act, act)
    return z[0] if single else z


def decode(model: DpnnModel, z) -> np.ndarray:
    rows, single = _as_rows(model, z, model.hyperparams.latent_dim)
    out, _ = _mlp_forward(model.params, "decoder", rows, model.hyperparams.activation, "identity")
    return out[0] if single else out


def _sq_distances(z: np.ndarray, protos: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - protos[None, :, :]
    return np.einsum("imd,imd->im", diff, diff)


def proto_distances(model: DpnnModel, z) -> np.ndarray:
    """Squared Euclidean distance from latent vector(s) to every prototype."""
    rows, single = _as_rows(model, z, model.hyperparams.latent_dim)
    s = _sq_distances(rows, model.prototypes)
    return s[0] if single else s


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _classify(model: DpnnModel, s: np.ndarray) -> np.ndarray:
    logits, _ = _mlp_forward(model.params, "classifier", s, model.hyperparams.activation, "identity")
    return _sigmoid(logits)


def predict_probs(model: DpnnModel, x) -> np.ndarray:
    """Remission probability per treatment for scaled feature vector(s)."""
    rows, single = _as_rows(model, x, model.n_inputs)
    p = _classify(model, _sq_distances(encode(model, rows), model.prototypes))
    return p[0] if single else p


def predict_dataset(model: DpnnModel, features) -> np.ndarray:
    """Like :func:`predict_probs` but on raw (unscaled) feature rows."""
    return predict_probs(model, model.scale(features))


def prototype_outcome_matrix(model: DpnnModel) -> np.ndarray:
    """Classifier output at each prototype location, shape (m, T)."""
    P = model.prototypes
    return _classify(model, _sq_distances(P, P))


# --------------------------------------------------------------------------
# Loss and gradients


def _forward_backward(model: DpnnModel, batch: Batch, want_grads: bool):
    h = model.hyperparams
    params = model.params
    x = np.asarray(batch.x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ShapeError(f"batch features must be (B, {model.n_inputs}), got {x.shape}")
    B = x.shape[0]
    if B == 0:
        raise DomainError("empty batch")
    t_idx = np.asarray(batch.treatment, dtype=np.int64)
    y = np.asarray(batch.remission, dtype=np.float64)
    act = h.activation
    P = params["prototypes"]
    m, T = P.shape[0], len(model.treatments)

    z, enc_c = _mlp_forward(params, "encoder", x, act, act)
    xhat, dec_c = _mlp_forward(params, "decoder", z, act, "identity")
    diff = z[:, None, :] - P[None, :, :]
    s = np.einsum("imd,imd->im", diff, diff)
    logits, cls_c = _mlp_forward(params, "classifier", s, act, "identity")
    p_all = _sigmoid(logits)
    rows = np.arange(B)
    p = p_all[rows, t_idx]
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    cls = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))

    recon = xhat - x
    ae = float(np.mean(recon * recon))

    pdiff = P[:, None, :] - P[None, :, :]
    sq = np.einsum("jkd,jkd->jk", pdiff, pdiff)
    qlogits, q_c = _mlp_forward(params, "classifier", sq, act, "identity")
    Q = _sigmoid(qlogits)
    col_dev = Q - Q.mean(axis=0, keepdims=True)
    row_dev = Q - Q.mean(axis=1, keepdims=True)
    between = float(np.mean(np.mean(col_dev**2, axis=0)))
    within = float(np.mean(np.mean(row_dev**2, axis=1)))
    pv = -(h.alpha * between + h.beta * within)
    total = h.lambda_cls * cls + h.lambda_ae * ae + h.lambda_pv * pv
    breakdown = LossBreakdown(total, cls, ae, pv, between, within)
    if not want_grads:
        return breakdown, None

    grads = {k: np.zeros_like(v) for k, v in params.items()}

    # classification path
    d_logits = np.zeros_like(logits)
    unclipped = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    d_logits[rows, t_idx] = np.where(unclipped, p - y, 0.0) * (h.lambda_cls / B)
    d_s = _mlp_backward(params, "classifier", cls_c, d_logits, grads)
    d_z = 2.0 * np.einsum("im,imd->id", d_s, diff)
    grads["prototypes"] -= 2.0 * np.einsum("im,imd->md", d_s, diff)

    # reconstruction path
    d_xhat = recon * (2.0 * h.lambda_ae / recon.size)
    d_z += _mlp_backward(params, "decoder", dec_c, d_xhat, grads)
    _mlp_backward(params, "encoder", enc_c, d_z, grads)

    # prototype variance path
    if h.lambda_pv != 0.0:
        d_between = 2.0 * col_dev / (m * T)
        d_within = 2.0 * row_dev / (m * T)
        d_Q = -h.lambda_pv * (h.alpha * d_between + h.beta * d_within)
        d_ql = d_Q * Q * (1.0 - Q)
        d_sq = _mlp_backward(params, "classifier", q_c, d_ql, grads)
        # sq[j,k] = |P_j - P_k|^2 touches both P_j and P_k
        sym = d_sq + d_sq.T
        grads["prototypes"] += 2.0 * np.einsum("jk,jkd->jd", sym, pdiff)

    return breakdown, grads


def loss(model: DpnnModel, batch: Batch) -> LossBreakdown:
    return _forward_backward(model, batch, want_grads=False)[0]


def loss_gradients(model: DpnnModel, batch: Batch) -> dict[str, np.ndarray]:
    return _forward_backward(model, batch, want_grads=True)[1]


def loss_and_gradients(model: DpnnModel, batch: Batch) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    return _forward_backward(model, batch, want_grads=True)


# --------------------------------------------------------------------------
# Serialization


def _payload(model: DpnnModel) -> dict:
    weights = {k: v.tolist() for k, v in sorted(model.params.items()) if k != "prototypes"}
    return {
        "format_version": FORMAT_VERSION,
        "hyperparams": model.hyperparams.to_json(),
        "feature_schema": model.schema.to_json(),
        "treatments": list(model.treatments.names),
        "scaling": {"mean": model.scale_mean.tolist(), "std": model.scale_std.tolist()},
        "weights": weights,
        "prototypes": model.prototypes.tolist(),
    }


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def model_to_json(model: DpnnModel) -> str:
    payload = _payload(model)
    payload["checksum"] = _checksum(payload)
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def save_model(model: DpnnModel, path) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def model_from_json(text: str) -> DpnnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError("model file must hold a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {doc.get('format_version')!r} (expected {FORMAT_VERSION})")
    required = {"hyperparams", "feature_schema", "treatments", "scaling", "weights", "prototypes", "checksum"}
    absent = sorted(required - set(doc))
    if absent:
        raise FormatError(f"model file lacks fields {absent}")
    checksum = doc.pop("checksum")
    if _checksum(doc) != checksum:
        raise FormatError("model checksum mismatch; file was modified or corrupted")
    try:
        h = Hyperparams.from_json(doc["hyperparams"])
        schema = FeatureSchema.from_json(doc["feature_schema"])
        treatments = TreatmentSet(tuple(doc["treatments"]))
        params = {k: np.array(v, dtype=np.float64) for k, v in doc["weights"].items()}
        params["prototypes"] = np.array(doc["prototypes"], dtype=np.float64)
        mean = np.array(doc["scaling"]["mean"], dtype=np.float64)
        std = np.array(doc["scaling"]["std"], dtype=np.float64)
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from None

    sizes = layer_sizes(h, len(schema), len(treatments))
    expected = {"prototypes": (h.n_prototypes, h.latent_dim)}
    for net, sz in sizes.items():
        for i, (a, b) in enumerate(zip(sz[:-1], sz[1:])):
            expected[f"{net}.{i}.W"] = (a, b)
            expected[f"{net}.{i}.b"] = (b,)
    if set(expected) != set(params):
        raise FormatError("weight names do not match the hyperparameters")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise FormatError(f"weight {k!r} has shape {params[k].shape}, expected {shape}")
        if not np.all(np.isfinite(params[k])):
            raise FormatError(f"weight {k!r} has non-finite entries")
    if mean.shape != (len(schema),) or std.shape != (len(schema),) or not np.all(std > 0):
        raise FormatError("scaling parameters are malformed")
    return DpnnModel(h, params, schema, treatments, mean, std)


def load_model(path) -> DpnnModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise FormatError("model file is not UTF-8 text") from None
    return model_from_json(text)
