"""Entropically regularized multi-marginal solver (log-domain Sinkhorn).

Alternates exact coordinate-wise potential updates: with potentials f_k in
cost units, the implied coupling is exp((sum_k f_k - cost)/eps) weighted by
the marginals, and each update matches one axis marginal exactly. All
reductions run through log-sum-exp, so small eps never underflows; masked
(infinite-cost) entries carry -inf log-mass and drop out of every
reduction. The reported value excludes the entropy term and is directly
comparable to the exact LP objective.

The update order is fixed (axis 0..N-1, cyclic), so identical inputs give
bit-identical potential tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .measures import CouplingTensor

__all__ = [
    "EntropicState",
    "SinkhornResult",
    "solve_sinkhorn",
    "epsilon_schedule_solve",
    "entropic_coupling",
]


@dataclass
class EntropicState:
    """Per-axis dual potentials (cost units) plus convergence bookkeeping."""

    potentials: list
    epsilon: float
    iterations: int = 0
    error_history: list = field(default_factory=list)


@dataclass
class SinkhornResult:
    value: float
    state: EntropicState
    marginal_error: float
    status: str  # "converged" | "max_iter" | "infeasible"

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _log_weights(marginals):
    out = []
    for m in marginals:
        with np.errstate(divide="ignore"):
            out.append(np.log(m.weights))
    return out


def _log_coupling(neg_cost_over_eps, potentials, eps, shape):
    log_gamma = neg_cost_over_eps.copy()
    for k, f in enumerate(potentials):
        view = [1] * len(shape)
        view[k] = shape[k]
        log_gamma = log_gamma + (f / eps).reshape(view)
    return log_gamma


def _axis_log_marginals(log_gamma, n_axes):
    return [
        logsumexp(log_gamma, axis=tuple(i for i in range(n_axes) if i != k))
        for k in range(n_axes)
    ]


def solve_sinkhorn(cost, marginals, epsilon: float, tol: float = 1e-8,
                   max_iter: int = 100_000, potentials=None) -> SinkhornResult:
    """Solve the eps-regularized problem by alternating potential updates.

    Convergence is measured after every full sweep as the max over axes of
    the L1 gap between the implied coupling's marginal and the target; the
    sweep count is ``state.iterations``. ``potentials`` warm-starts the
    dual tables (used by the epsilon schedule). Non-convergence within
    ``max_iter`` sweeps is a status, not an exception.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    marginals = tuple(marginals)
    cost = np.asarray(cost, dtype=float)
    shape = tuple(m.size for m in marginals)
    if cost.shape != shape:
        raise ValueError(f"cost shape {cost.shape} does not match supports {shape}")
    n_axes = len(shape)

    finite = np.isfinite(cost)
    for k, m in enumerate(marginals):
        other = tuple(i for i in range(n_axes) if i != k)
        has_finite = finite.any(axis=other) if other else finite
        if np.any((m.weights > 0) & ~has_finite):
            state = EntropicState([np.zeros(s) for s in shape], epsilon)
            return SinkhornResult(np.nan, state, np.nan, "infeasible")

    logw = _log_weights(marginals)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_cost = np.where(finite, -cost / epsilon, -np.inf)

    if potentials is None:
        f = [np.zeros(s) for s in shape]
    else:
        f = [np.asarray(p, dtype=float).copy() for p in potentials]
    # Zero-weight atoms carry no mass: pin their potential at -inf once.
    for k in range(n_axes):
        f[k] = np.where(np.isneginf(logw[k]), -np.inf, f[k])

    state = EntropicState(f, epsilon)
    error = np.inf
    for sweep in range(1, max_iter + 1):
        for k in range(n_axes):
            log_gamma = _log_coupling(neg_cost, f, epsilon, shape)
            lm = logsumexp(log_gamma, axis=tuple(i for i in range(n_axes) if i != k))
            live = ~np.isneginf(logw[k])
            f[k] = np.where(live, f[k] + epsilon * (logw[k] - np.where(live, lm, 0.0)), -np.inf)
            if not np.all(np.isfinite(f[k][live])):
                # Positive mass can only route through masked tuples.
                return SinkhornResult(np.nan, state, np.nan, "infeasible")
        log_gamma = _log_coupling(neg_cost, f, epsilon, shape)
        error = max(
            float(np.abs(np.exp(lm) - m.weights).sum())
            for lm, m in zip(_axis_log_marginals(log_gamma, n_axes), marginals)
        )
        state.iterations = sweep
        state.error_history.append(error)
        if error <= tol:
            break
    status = "converged" if error <= tol else "max_iter"

    gamma = np.exp(_log_coupling(neg_cost, f, epsilon, shape))
    value = float(np.sum(gamma * np.where(finite, cost, 0.0)))
    return SinkhornResult(value, state, error, status)


def epsilon_schedule_solve(cost, marginals, epsilons, tol: float = 1e-8,
                           max_iter: int = 100_000):
    """Warm-started solves along a decreasing epsilon schedule.

    Returns ``(final_result, trace)`` where the trace records one dict per
    epsilon (value, marginal error, sweeps, status). The value trend along
    the schedule is recorded, not enforced.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ValueError("epsilon schedule must be non-empty")
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")

    result = None
    trace = []
    warm = None
    for eps in epsilons:
        result = solve_sinkhorn(cost, marginals, eps, tol=tol, max_iter=max_iter,
                                potentials=warm)
        trace.append({
            "epsilon": eps,
            "value": result.value,
            "marginal_error": result.marginal_error,
            "sweeps": result.state.iterations,
            "status": result.status,
        })
        if result.status == "infeasible":
            break
        warm = result.state.potentials
    return result, trace


def entropic_coupling(cost, marginals, state: EntropicState) -> CouplingTensor:
    """Materialize the coupling implied by a converged state.

    The tensor is renormalized to unit mass (the raw implied mass differs
    from one by at most the marginal error).
    """
    marginals = tuple(marginals)
    cost = np.asarray(cost, dtype=float)
    shape = tuple(m.size for m in marginals)
    finite = np.isfinite(cost)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_cost = np.where(finite, -cost / state.epsilon, -np.inf)
    gamma = np.exp(_log_coupling(neg_cost, state.potentials, state.epsilon, shape))
    return CouplingTensor(marginals, gamma / gamma.sum())
