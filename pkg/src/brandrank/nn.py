"""Dense float64 kernels, AdaGrad and a central-difference gradient checker.

Matrices are plain ``numpy.float64`` arrays; nothing here allocates a
custom container type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ContractError, NumericDomainError

DTYPE = np.float64


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericDomainError(f"{what}: input contains NaN or Inf")


def as_float(x) -> np.ndarray:
    """``x`` as an array, keeping float dtypes (incl. extended precision) and
    promoting everything else to float64."""
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(DTYPE)


def sigmoid(x):
    """Logistic function, evaluated in the overflow-free two-branch form."""
    x = as_float(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x):
    return np.tanh(as_float(x))


def softmax(x, axis: int = -1):
    """Softmax along ``axis`` with the row maximum subtracted first."""
    x = as_float(x)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


_KINDS = {"sigmoid": sigmoid, "tanh": tanh, "softmax": softmax}


def activations(v, kind: str) -> np.ndarray:
    """Apply one of ``sigmoid``, ``tanh`` or ``softmax`` to a nonempty vector."""
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise ContractError("activations: empty input")
    _require_finite(v, f"activations({kind})")
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown activation kind {kind!r}") from None
    return fn(v)


@dataclass
class OptimizerState:
    """AdaGrad hyperparameters plus one squared-gradient accumulator per parameter."""

    lr: float = 0.01
    eps: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if self.eps < 0:
            raise ContractError(f"epsilon must be nonnegative, got {self.eps}")


def adagrad_step(param: np.ndarray, grad: np.ndarray, accumulator: np.ndarray,
                 lr: float = 0.01, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """One in-place AdaGrad update; returns ``(param, accumulator)``.

    ``accumulator += grad**2`` then ``param -= lr * grad / (sqrt(accumulator) + eps)``.
    Entries whose accumulator is still zero (hence zero gradient) are left as is,
    which also makes ``eps = 0`` safe.
    """
    if param.shape != grad.shape or param.shape != accumulator.shape:
        raise ContractError(
            f"adagrad_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"accumulator {accumulator.shape}")
    accumulator += grad * grad
    denom = np.sqrt(accumulator) + eps
    np.subtract(param, lr * np.divide(grad, denom, out=np.zeros_like(grad), where=denom > 0),
                out=param)
    return param, accumulator


class AdaGrad:
    """Applies :func:`adagrad_step` to every entry of a parameter dict."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float = 0.01, eps: float = 1e-8):
        self.state = OptimizerState(lr=lr, eps=eps, accumulators={
            name: np.zeros_like(p) for name, p in params.items()})

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        acc = self.state.accumulators
        for name in sorted(params):
            adagrad_step(params[name], grads[name], acc[name], self.state.lr, self.state.eps)


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def weighted_log_loss(p, label, w: float = 1.0, eps: float = 1e-7):
    """Per-instance loss ``-log p`` (label 1) or ``-w log(1-p)`` (label 0).

    ``p`` is clamped into ``[eps, 1-eps]`` first. Returns ``(loss, dloss_dp)``;
    the derivative is zero where the clamp is active.
    """
    p = as_float(p)
    label = np.asarray(label)
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p >= eps) & (p <= 1.0 - eps)
    loss = np.where(label == 1, -np.log(pc), -w * np.log1p(-pc))
    dp = np.where(label == 1, -1.0 / pc, w / (1.0 - pc)) * inside
    return loss, dp


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = as_float(analytic)
    numeric = as_float(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_gradient(f: Callable[[], float], params: Mapping[str, np.ndarray],
                     step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of ``f`` w.r.t. every entry of every array in ``params``.

    ``f`` takes no arguments and must read the arrays in ``params``, which are
    perturbed in place and restored afterwards. ``f`` may return an array of
    shape ``S``, in which case each gradient has shape ``S + param.shape``;
    this checks several independent objectives with one sweep.
    """
    if not step > 0:
        raise ContractError("finite difference step must be positive")
    out_shape = np.shape(f())
    out = {}
    for name, p in params.items():
        g = np.zeros((int(np.prod(out_shape, dtype=int)), p.size), dtype=p.dtype)
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ContractError(f"parameter {name} must be contiguous to be perturbed in place")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = np.asarray(f())
            flat[i] = orig - step
            fm = np.asarray(f())
            flat[i] = orig
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise NumericDomainError(f"objective is not finite when perturbing {name}[{i}]")
            g[:, i] = ((fp - fm) / (2 * step)).reshape(-1)
        out[name] = g.reshape(out_shape + p.shape)
    return out


def finite_diff_check(f: Callable[[], float], params: Mapping[str, np.ndarray],
                      analytic: Mapping[str, np.ndarray], step: float = 1e-5,
                      per_param: bool = False):
    """Max relative error between ``analytic`` gradients and central differences.

    The error for one entry is ``|a - n| / max(1e-8, |a| + |n|)``. With
    ``per_param=True`` a dict of per-parameter maxima is returned as well.
    """
    base = np.asarray(f())
    if not np.all(np.isfinite(base)):
        raise NumericDomainError("objective is not finite at the base point")
    numeric = numeric_gradient(f, params, step)
    errs = {}
    for name in params:
        a = np.asarray(analytic[name])
        if a.shape != numeric[name].shape:
            raise ContractError(f"gradient for {name} has shape {a.shape}, "
                                f"expected {numeric[name].shape}")
        errs[name] = float(np.max(relative_error(a, numeric[name]), initial=0.0))
    worst = max(errs.values(), default=0.0)
    return (worst, errs) if per_param else worst
