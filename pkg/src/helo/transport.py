"""Entropic optimal transport between physiological and behavioral tokens.

The coupling between the two token sets is found by Sinkhorn iterations run
in the log domain (scaling vectors stored as log-potentials, marginal sums
via log-sum-exp), which stays stable for small regularization strengths.
The resulting plan is treated as a constant during backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericalError
from .linalg import Matrix, check_finite, cosine_rows_flagged


@dataclass(frozen=True)
class TransportPlan:
    """Solved coupling plus its convergence record."""

    t: Matrix                      # coupling, rows sum to u, columns to v
    u: np.ndarray                  # source marginal
    v: np.ndarray                  # target marginal
    cost: Matrix
    wd: float                      # <T, cost> transport estimate
    epsilon: float
    iterations: int
    converged: bool
    marginal_violation: float
    violation_history: tuple[float, ...] = ()


def cost_matrix(x_phy: Matrix, x_v: Matrix) -> Matrix:
    """Cosine-distance cost between two token sets, entries in [0, 2]."""
    sim, _ = cosine_rows_flagged(x_phy, x_v)
    return 1.0 - sim


def _logsumexp(m: np.ndarray, axis: int) -> np.ndarray:
    peak = m.max(axis=axis, keepdims=True)
    out = np.log(np.exp(m - peak).sum(axis=axis, keepdims=True)) + peak
    return np.squeeze(out, axis=axis)


def _marginal_violation(t: Matrix, u: np.ndarray, v: np.ndarray) -> float:
    row_err = np.abs(t.sum(axis=1) - u).max()
    col_err = np.abs(t.sum(axis=0) - v).max()
    return float(max(row_err, col_err))


def sinkhorn(
    cost: Matrix,
    u: np.ndarray,
    v: np.ndarray,
    epsilon: float,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> TransportPlan:
    """Solve the entropy-regularized coupling with marginals (u, v).

    Alternates the two log-domain scaling updates until the worst marginal
    violation of the reconstructed plan drops below `tol` or `max_iter`
    update pairs have run.  The returned plan records the violation after
    every iteration so convergence behaviour can be audited.
    """
    if epsilon <= 0.0:
        raise ConfigurationError(f"sinkhorn epsilon must be > 0, got {epsilon}")
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DimensionError(f"cost must be 2-D, got shape {cost.shape}")
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape[0] != cost.shape[0] or v.shape[0] != cost.shape[1]:
        raise DimensionError(
            f"marginals ({u.shape[0]}, {v.shape[0]}) do not match cost {cost.shape}"
        )
    if (cost < 0.0).any():
        raise ConfigurationError("sinkhorn cost must be nonnegative")
    if (u <= 0.0).any() or (v <= 0.0).any():
        raise ConfigurationError("sinkhorn marginals must be strictly positive")

    kernel = -cost / epsilon
    log_u = np.log(u)
    log_v = np.log(v)
    alpha = np.zeros_like(u)
    beta = np.zeros_like(v)

    history: list[float] = []
    violation = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        alpha = log_u - _logsumexp(kernel + beta[None, :], axis=1)
        beta = log_v - _logsumexp(kernel + alpha[:, None], axis=0)
        t = np.exp(kernel + alpha[:, None] + beta[None, :])
        if not np.isfinite(t).all():
            raise NumericalError(
                f"sinkhorn kernel lost finiteness at epsilon={epsilon}"
            )
        violation = _marginal_violation(t, u, v)
        history.append(violation)
        if violation <= tol:
            break

    t = np.exp(kernel + alpha[:, None] + beta[None, :])
    check_finite(t, "sinkhorn plan")
    wd = float((t * cost).sum())
    return TransportPlan(
        t=t,
        u=u,
        v=v,
        cost=cost,
        wd=wd,
        epsilon=float(epsilon),
        iterations=iterations,
        converged=violation <= tol,
        marginal_violation=float(violation),
        violation_history=tuple(history),
    )


def uniform_marginal(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def transport_tokens(x_phy: Matrix, plan: TransportPlan, rescale: bool = True) -> Matrix:
    """Mix source tokens through the coupling: (n*T) @ x_phy.

    With uniform marginals every row of T sums to 1/n, so the n factor
    restores unit row mass; the unscaled literal product is kept behind
    `rescale=False`.
    """
    t = plan.t
    if t.shape[1] != x_phy.shape[0]:
        raise DimensionError(
            f"plan {t.shape} cannot transport tokens of shape {x_phy.shape}"
        )
    scale = float(t.shape[0]) if rescale else 1.0
    return (scale * t) @ x_phy


def othm_fuse(
    x_phy: Matrix,
    x_v: Matrix,
    plan: TransportPlan,
    enc_phy,
    enc_v,
    rescale: bool = True,
) -> Matrix:
    """Encode the transported physiological stream and the behavioral stream,
    stacked along the token axis.  The plan is a constant here: gradients
    never flow through the Sinkhorn iterations."""
    from .attention import transformer_encode

    if x_phy.shape[1] != x_v.shape[1]:
        raise DimensionError(
            f"token widths differ: {x_phy.shape[1]} vs {x_v.shape[1]}"
        )
    transported = transport_tokens(x_phy, plan, rescale=rescale)
    return np.concatenate(
        [transformer_encode(transported, enc_phy), transformer_encode(x_v, enc_v)],
        axis=0,
    )


def write_violation_csv(plan: TransportPlan, path) -> None:
    """Dump the per-iteration marginal violations as (iteration, violation)."""
    lines = ["iteration,violation"]
    for i, violation in enumerate(plan.violation_history, start=1):
        lines.append(f"{i},{violation!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
