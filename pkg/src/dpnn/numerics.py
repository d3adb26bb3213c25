"""Dense numerics used throughout the package.

Everything here is float64. Random streams are Philox-backed numpy
generators so that a seed gives the same draws on every platform.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import special

from .errors import DomainError, NumericError, ShapeError

__all__ = [
    "RngStream",
    "AdamState",
    "adam_step",
    "symmetric_eigen",
    "grad_check",
    "chi_square_sf",
    "normal_sf",
]


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


class RngStream:
    """Seeded random stream built on the counter-based Philox4x64 generator.

    A stream is owned by one consumer. Independent sub-streams are obtained
    with :meth:`derive`, which depends only on the root seed and the keys,
    never on how many draws the parent has made.
    """

    def __init__(self, seed: int, *keys):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.keys = tuple(keys)
        entropy = [self.seed] + [_key_to_int(k) for k in keys]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def derive(self, *keys) -> "RngStream":
        return RngStream(self.seed, *self.keys, *keys)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if not lr > 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    if set(params) != set(grads):
        raise ShapeError("parameter and gradient names differ")
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")

    if not state.m:
        state = AdamState.zeros_like(params)
    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


def symmetric_eigen(m, tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=tol * scale):
        raise ShapeError("matrix is not symmetric")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-15 * max(np.sqrt(np.sum(a * a)), 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericError("Jacobi eigensolver did not converge")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def grad_check(
    loss_fn: Callable,
    params,
    eps: float = 1e-6,
    value_fn: Optional[Callable] = None,
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(value, grads)`` where ``grads`` has the
    same structure as ``params`` (a single array or a mapping of arrays).
    ``value_fn(params)``, when given, returns the loss alone and is used for
    the perturbed evaluations.
    """
    if not 0.0 < eps <= 1e-2:
        raise DomainError(f"eps must lie in (0, 1e-2], got {eps}")
    single = isinstance(params, np.ndarray) or not isinstance(params, Mapping)
    work = {"_": np.array(params, dtype=np.float64)} if single else {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def call(p):
        value, grads = loss_fn(p["_"] if single else p)
        return finite(value), grads

    def value(p):
        if value_fn is None:
            return call(p)[0]
        return finite(value_fn(p["_"] if single else p))

    def finite(v):
        v = float(v)
        if not math.isfinite(v):
            raise NumericError("loss is not finite")
        return v

    _, analytic = call(work)
    if single:
        analytic = {"_": analytic}

    worst = 0.0
    for name, arr in work.items():
        a_grad = np.asarray(analytic[name], dtype=np.float64)
        flat = arr.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = value(work)
            flat[i] = orig - eps
            f_minus = value(work)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a_flat[i] - numeric) / max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


def chi_square_sf(x: float, df: float) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if df < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {df}")
    if x < 0:
        raise DomainError(f"chi-square statistic must be non-negative, got {x}")
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))
