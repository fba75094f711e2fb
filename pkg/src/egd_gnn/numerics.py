"""Dense float64 primitives with analytic backward rules.

Every differentiable function ``f`` here has a companion ``f_backward`` that
maps an upstream gradient to input gradients. Arrays are plain numpy
``float64`` arrays; nothing in this module keeps state between calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

MASK_VALUE = -1e9
LAYER_NORM_EPS = 1e-8


class NumericsError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- softmax


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = as_tensor(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``y``."""
    return y * (dy - np.sum(y * dy, axis=axis, keepdims=True))


# ---------------------------------------------------------------- tanh


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)


# ---------------------------------------------------------------- l2 normalize


def l2_normalize(x: np.ndarray, axis: int = -1, eps: float = 1e-12) -> np.ndarray:
    """Scale slices along ``axis`` to unit l2 norm.

    Slices whose norm is below ``eps`` are returned unchanged.
    """
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    small = norm < eps
    return np.where(small, x, x / np.where(small, 1.0, norm))


def l2_normalize_backward(
    x: np.ndarray, dy: np.ndarray, axis: int = -1, eps: float = 1e-12
) -> np.ndarray:
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    small = norm < eps
    safe = np.where(small, 1.0, norm)
    y = x / safe
    dx = (dy - y * np.sum(y * dy, axis=axis, keepdims=True)) / safe
    return np.where(small, dy, dx)


# ---------------------------------------------------------------- layer norm


@dataclass
class LayerNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    floored: np.ndarray
    gain: np.ndarray


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LAYER_NORM_EPS
) -> tuple[np.ndarray, LayerNormCache]:
    """Normalize the last axis to zero mean and unit population variance.

    The variance is floored at ``eps`` (not shifted by it), so rows with
    variance above the floor come out with variance exactly one before the
    affine map.
    """
    x = as_tensor(x)
    if x.shape[-1] < 2:
        raise NumericsError("layer_norm needs a last axis of extent >= 2")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    floored = var < eps
    inv_std = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = centered * inv_std
    return xhat * gain + bias, LayerNormCache(xhat, inv_std, floored, gain)


def layer_norm_backward(
    cache: LayerNormCache, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std = cache.xhat, cache.inv_std
    lead = tuple(range(dy.ndim - 1))
    dgain = np.sum(dy * xhat, axis=lead)
    dbias = np.sum(dy, axis=lead)
    dxhat = dy * cache.gain
    mean_d = dxhat.mean(axis=-1, keepdims=True)
    # below the floor the std is a constant, so only the centering is differentiated
    proj = np.where(cache.floored, 0.0, np.mean(dxhat * xhat, axis=-1, keepdims=True))
    dx = inv_std * (dxhat - mean_d - xhat * proj)
    return dx, dgain, dbias


# ---------------------------------------------------------------- attention


@dataclass
class AttentionCache:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    weights: np.ndarray
    scale: float


def scaled_dot_attention(
    Q: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    mask: np.ndarray | None = None,
    query_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, AttentionCache]:
    """softmax(Q K^T / sqrt(d) + mask) V over the last two axes.

    ``mask`` is boolean, True where a key is *disallowed* for a query; it
    broadcasts against the ``(..., n_q, n_k)`` logits. A query whose keys are
    all disallowed is an error unless ``query_mask`` (True = ignore this
    query) marks it, in which case its weights are all zero.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    d = Q.shape[-1]
    scale = 1.0 / np.sqrt(d)
    logits = np.matmul(Q, np.swapaxes(K, -1, -2)) * scale
    if mask is not None:
        mask = np.broadcast_to(mask, logits.shape)
        dead = np.all(mask, axis=-1)
        if query_mask is not None:
            dead = dead & ~np.broadcast_to(query_mask, dead.shape)
        if np.any(dead):
            raise NumericsError("attention query has every key masked")
        logits = np.where(mask, logits + MASK_VALUE, logits)
    weights = softmax(logits, axis=-1)
    if query_mask is not None:
        weights = np.where(np.broadcast_to(query_mask, weights.shape[:-1])[..., None], 0.0, weights)
    if mask is not None:
        # exp underflow already gives 0 here; make it exact regardless of logit scale
        weights = np.where(mask, 0.0, weights)
    return np.matmul(weights, V), AttentionCache(Q, K, V, weights, scale)


def scaled_dot_attention_backward(
    cache: AttentionCache, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = cache.weights
    dV = np.matmul(np.swapaxes(A, -1, -2), dout)
    dA = np.matmul(dout, np.swapaxes(cache.V, -1, -2))
    # masked entries and ignored queries have A == 0, so they drop out here
    dlogits = softmax_backward(A, dA, axis=-1) * cache.scale
    dQ = np.matmul(dlogits, cache.K)
    dK = np.matmul(np.swapaxes(dlogits, -1, -2), cache.Q)
    return dQ, dK, dV


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class GaussianSample:
    """Standard-normal draws tagged with the (seed, stream) that produced them."""

    epsilon: np.ndarray
    seed: int | None = None
    stream: int | None = None

    @classmethod
    def draw(cls, shape, seed: int, stream: int = 0) -> "GaussianSample":
        rng = np.random.default_rng([seed, stream])
        return cls(rng.standard_normal(shape), seed, stream)

    @classmethod
    def zeros(cls, shape) -> "GaussianSample":
        return cls(np.zeros(shape))


def reparameterize(mu: np.ndarray, log_var: np.ndarray, sample: GaussianSample) -> np.ndarray:
    """z = mu + sigma * eps with sigma = exp(log_var / 2)."""
    mu, log_var = as_tensor(mu), as_tensor(log_var)
    if mu.shape != log_var.shape or mu.shape != sample.epsilon.shape:
        raise NumericsError(
            f"shape mismatch: mu {mu.shape}, log_var {log_var.shape}, eps {sample.epsilon.shape}"
        )
    return mu + np.exp(0.5 * log_var) * sample.epsilon


def reparameterize_backward(
    log_var: np.ndarray, sample: GaussianSample, dz: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    sigma = np.exp(0.5 * log_var)
    return dz, dz * sample.epsilon * sigma * 0.5


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    if rate >= 1.0:
        raise NumericsError("dropout rate must be < 1")
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    step: float
    per_param: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max((float(e.max()) for e in self.per_param.values() if e.size), default=0.0)

    @property
    def mean_error(self) -> float:
        errs = [e.ravel() for e in self.per_param.values() if e.size]
        return float(np.concatenate(errs).mean()) if errs else 0.0

    def worst(self) -> dict[str, float]:
        return {k: float(v.max()) if v.size else 0.0 for k, v in self.per_param.items()}

    def failing(self, tol: float) -> list[str]:
        return [k for k, v in self.worst().items() if v >= tol]

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_diff_check(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Compare ``analytic`` gradients of ``f`` against central differences.

    ``params`` is perturbed in place one entry at a time and restored.
    """
    if not 1e-6 <= h <= 1e-4:
        raise NumericsError(f"step {h} outside [1e-6, 1e-4]")
    report = GradCheckReport(step=h)
    for name in names if names is not None else list(params):
        p = params[name]
        if not p.flags.c_contiguous:
            raise NumericsError(f"parameter {name} must be C-contiguous to perturb in place")
        flat = p.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(params)
            flat[i] = orig - h
            fm = f(params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericsError(f"non-finite objective while perturbing {name}[{i}]")
            numeric[i] = (fp - fm) / (2.0 * h)
        report.per_param[name] = relative_error(np.asarray(analytic[name]).reshape(-1), numeric)
    return report
