"""Dense float64 kernels with hand-written backward passes.

Everything downstream (attention blocks, transport fusion, label attention,
losses) is composed from the forward/backward pairs in this module.  All
carriers are 2-D row-major float64 arrays; operations are pure functions and
numpy's fixed reduction order keeps runs bit-reproducible per seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DeterminismError,
    DimensionError,
    NumericalError,
)

Matrix = np.ndarray

# Below this magnitude, gradient-check errors are reported absolutely.
GRAD_ABS_FLOOR = 1e-8


class DegenerateRowWarning(UserWarning):
    """A zero-norm row was mapped to similarity 0 in a cosine computation."""


def as_matrix(data, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D C-contiguous float64 array, rejecting non-finite input."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericalError(f"{name} contains non-finite entries")
    return arr


def check_finite(arr: np.ndarray, context: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values produced by {context}")
    return arr


# ---------------------------------------------------------------------------
# forward kernels
# ---------------------------------------------------------------------------


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with explicit shape checking."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) x "
            f"({b.shape[0]}x{b.shape[1]})"
        )
    return check_finite(a @ b, "matmul")


def matmul_backward(dout: Matrix, a: Matrix, b: Matrix) -> tuple[Matrix, Matrix]:
    return dout @ b.T, a.T @ dout


def softmax_rows(x: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction for overflow safety."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(dout: Matrix, out: Matrix) -> Matrix:
    return out * (dout - (dout * out).sum(axis=1, keepdims=True))


def layer_norm_forward(x: Matrix, gamma: Matrix, beta: Matrix, eps: float):
    if gamma.shape != (1, x.shape[1]) or beta.shape != (1, x.shape[1]):
        raise DimensionError(
            f"layer_norm scale/shift must be 1x{x.shape[1]}, "
            f"got {gamma.shape} and {beta.shape}"
        )
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dout: Matrix, cache) -> tuple[Matrix, Matrix, Matrix]:
    xhat, inv, gamma = cache
    dgamma = (dout * xhat).sum(axis=0, keepdims=True)
    dbeta = dout.sum(axis=0, keepdims=True)
    dxhat = dout * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def layer_norm(x: Matrix, gamma: Matrix, beta: Matrix, eps: float = 1e-5) -> Matrix:
    """Per-row normalization to zero mean / unit variance, then scale and shift."""
    if eps < 0.0:
        raise ConfigurationError("layer_norm eps must be >= 0")
    out, _ = layer_norm_forward(x, gamma, beta, eps)
    return check_finite(out, "layer_norm")


# tanh keeps the composed loss smooth, so finite-difference gradient checks
# are limited only by truncation error, never by activation kinks.
def tanh_forward(x: Matrix) -> Matrix:
    return np.tanh(x)


def tanh_backward(dout: Matrix, out: Matrix) -> Matrix:
    return dout * (1.0 - out * out)


def affine_forward(x: Matrix, w: Matrix, b: Matrix):
    return x @ w + b, (x, w)


def affine_backward(dout: Matrix, cache) -> tuple[Matrix, Matrix, Matrix]:
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0, keepdims=True)


def _normalize_rows(x: Matrix) -> tuple[Matrix, np.ndarray, bool]:
    norms = np.sqrt((x * x).sum(axis=1))
    degenerate = bool((norms == 0.0).any())
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe[:, None], norms, degenerate


def cosine_rows_flagged(a: Matrix, b: Matrix) -> tuple[Matrix, bool]:
    """Pairwise row cosine similarities plus a flag for zero-norm rows.

    Zero-norm rows contribute similarity 0 instead of NaN so downstream
    losses stay total.  The similarity matrix is built by an elementwise
    product reduced over the feature axis, which makes cosine_rows(a, b)
    bitwise equal to cosine_rows(b, a).T.
    """
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"cosine_rows feature widths differ: {a.shape} vs {b.shape}"
        )
    ya, _, dega = _normalize_rows(a)
    yb, _, degb = _normalize_rows(b)
    sim = (ya[:, None, :] * yb[None, :, :]).sum(axis=2)
    return np.clip(sim, -1.0, 1.0), dega or degb


def cosine_rows(a: Matrix, b: Matrix) -> Matrix:
    sim, degenerate = cosine_rows_flagged(a, b)
    if degenerate:
        warnings.warn(
            "zero-norm row in cosine similarity mapped to 0", DegenerateRowWarning
        )
    return sim


def cosine_gram_forward(x: Matrix):
    """Self cosine-similarity matrix of the rows of x, with backward cache."""
    y, norms, degenerate = _normalize_rows(x)
    sim = (y[:, None, :] * y[None, :, :]).sum(axis=2)
    return np.clip(sim, -1.0, 1.0), (y, norms, degenerate)


def cosine_gram_backward(dsim: Matrix, cache) -> Matrix:
    y, norms, _ = cache
    dy = (dsim + dsim.T) @ y
    dx = (dy - (dy * y).sum(axis=1, keepdims=True) * y) / np.where(
        norms == 0.0, 1.0, norms
    )[:, None]
    return np.where((norms == 0.0)[:, None], 0.0, dx)


def mean_rows_forward(x: Matrix):
    return x.mean(axis=0, keepdims=True), x.shape[0]


def mean_rows_backward(dout: Matrix, n_rows: int) -> Matrix:
    return np.repeat(dout / n_rows, n_rows, axis=0)


# ---------------------------------------------------------------------------
# trainable state
# ---------------------------------------------------------------------------


@dataclass
class Parameter:
    """A trainable matrix paired with its gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise DimensionError(f"parameter {self.name} must be 2-D")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"parameter {self.name} grad shape mismatch")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


ParamDict = dict[str, Parameter]


def zero_grads(params: ParamDict) -> None:
    for p in params.values():
        p.zero_grad()


class Rng:
    """Counter-based random source: identical seeds give identical sequences."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, rows: int, cols: int, scale: float = 1.0) -> Matrix:
        return self._gen.normal(0.0, scale, size=(rows, cols))

    def uniform(self, low: float, high: float, rows: int, cols: int) -> Matrix:
        return self._gen.uniform(low, high, size=(rows, cols))

    def glorot(self, rows: int, cols: int) -> Matrix:
        limit = np.sqrt(6.0 / (rows + cols))
        return self._gen.uniform(-limit, limit, size=(rows, cols))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def grad_check(loss_fn, params: ParamDict, eps: float = 1e-5) -> float:
    """Worst relative error between stored analytic grads and central differences.

    `loss_fn(params)` must be a deterministic pure function of the parameter
    values; every `Parameter.grad` must already hold the analytic gradient at
    the current values.  Entries where both gradients are below
    ``GRAD_ABS_FLOOR`` are compared absolutely instead of relatively.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ConfigurationError(f"grad_check eps must be in [1e-7, 1e-3], got {eps}")
    first = float(loss_fn(params))
    second = float(loss_fn(params))
    if first != second:
        raise DeterminismError(
            f"loss_fn returned {first!r} then {second!r} on identical inputs"
        )
    worst = 0.0
    for p in params.values():
        flat_value = p.value.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        for i in range(flat_value.size):
            orig = flat_value[i]
            flat_value[i] = orig + eps
            f_plus = float(loss_fn(params))
            flat_value[i] = orig - eps
            f_minus = float(loss_fn(params))
            flat_value[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            g = flat_grad[i]
            scale = max(abs(g), abs(fd))
            err = abs(g - fd) if scale < GRAD_ABS_FLOOR else abs(g - fd) / scale
            if err > worst:
                worst = err
    return worst
