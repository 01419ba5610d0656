"""
Entropic optimal transport and the fused Gromov-Wasserstein objective.

Notation used throughout:
  S     transport plan (n1 x n2), marginals mu1 / mu2
  lam   sampling shift; S_n = S - lam (entrywise)
  M     cross-network cost (dense), C1 / C2 intra-network costs (sparse, on edges)

The objective is
  J = (1 - alpha) <M, S_n> + alpha * sum |C1(x,x') - C2(y,y')|^2 S_n(x,y) S_n(x',y')
and the quadratic part equals <L(S_n), S_n> with L the GW linearization below,
for any S_n (no marginal assumption), so nothing here loops over quadruples.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .errors import ConvergenceError, NonFiniteError, ShapeError
from .log import log_event

logger = logging.getLogger(__name__)

DEFAULT_PROX_ITERS = 10
DEFAULT_SINKHORN_ITERS = 50
DEFAULT_TOL = 1e-6
DESCENT_SLACK = 1e-8
# a step that raises J is retried with the proximal weight doubled, at most this often
MAX_WEIGHT_DOUBLINGS = 30


@dataclass(frozen=True, eq=False)
class TransportPlan:
    values: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    # log of values when the plan came out of the log-domain solver
    log_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.values.shape[0]), int(self.values.shape[1])

    def log(self) -> np.ndarray:
        if self.log_values is not None:
            return self.log_values
        with np.errstate(divide="ignore"):
            return np.log(self.values)

    def marginal_violation(self) -> float:
        row = float(np.abs(self.values.sum(axis=1) - self.mu1).sum())
        col = float(np.abs(self.values.sum(axis=0) - self.mu2).sum())
        return max(row, col)


@dataclass(frozen=True, eq=False)
class CostSet:
    M: np.ndarray
    C1: sp.csr_array
    C2: sp.csr_array

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.M.shape[0]), int(self.M.shape[1])


@dataclass(frozen=True)
class SamplingShift:
    lam: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam):
            raise NonFiniteError(f"sampling shift must be finite, got {self.lam}")


def uniform_marginals(n1: int, n2: int) -> tuple[np.ndarray, np.ndarray]:
    return np.full(n1, 1.0 / n1), np.full(n2, 1.0 / n2)


def uniform_plan(n1: int, n2: int) -> TransportPlan:
    mu1, mu2 = uniform_marginals(n1, n2)
    return TransportPlan(np.outer(mu1, mu2), mu1, mu2, np.full((n1, n2), -math.log(n1 * n2)))


def _as_csr(c: sp.sparray | sp.spmatrix | np.ndarray) -> sp.csr_array:
    return c if isinstance(c, sp.csr_array) else sp.csr_array(c)


def _check_marginal(mu: np.ndarray, name: str) -> None:
    if mu.ndim != 1 or not (mu > 0).all():
        raise ValueError(f"{name} must be a strictly positive vector")
    if abs(float(mu.sum()) - 1.0) > 1e-10:
        raise ValueError(f"{name} must sum to 1, sums to {float(mu.sum())!r}")


# ---------- Sinkhorn ----------


@dataclass(frozen=True, eq=False)
class _SinkhornState:
    log_plan: np.ndarray
    f: np.ndarray
    g: np.ndarray
    violation: float
    iterations: int

    def converged(self, tol: float) -> bool:
        return self.violation <= tol


def _sinkhorn_log(
    cost: np.ndarray,
    log_mu1: np.ndarray,
    log_mu2: np.ndarray,
    reg: float,
    max_iter: int,
    tol: float,
) -> _SinkhornState:
    """Log-domain Sinkhorn with S = exp((f_i + g_j - cost_ij) / reg).

    Each sweep ends on the column update, so column sums are exact up to
    rounding and total mass equals sum(mu2).
    """
    mu1, mu2 = np.exp(log_mu1), np.exp(log_mu2)
    scaled = -cost / reg
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    violation = float("inf")
    log_plan = scaled
    it = 0
    for it in range(1, max_iter + 1):
        f = log_mu1 - logsumexp(scaled + g[None, :], axis=1)
        g = log_mu2 - logsumexp(scaled + f[:, None], axis=0)
        log_plan = scaled + f[:, None] + g[None, :]
        row_err = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - mu1).sum())
        col_err = float(np.abs(np.exp(logsumexp(log_plan, axis=0)) - mu2).sum())
        violation = max(row_err, col_err)
        if violation <= tol:
            break
    # duals reported on the cost scale
    return _SinkhornState(log_plan, reg * f, reg * g, violation, it)


def sinkhorn(
    cost: np.ndarray,
    mu1: np.ndarray,
    mu2: np.ndarray,
    reg: float,
    max_iter: int = 1000,
    tol: float = DEFAULT_TOL,
    strict: bool = True,
) -> TransportPlan:
    """argmin over Pi(mu1, mu2) of <cost, S> + reg * <log S, S>."""
    if reg <= 0:
        raise ValueError(f"reg must be positive, got {reg}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    if cost.shape != (mu1.size, mu2.size):
        raise ShapeError(f"cost shape {cost.shape} does not match marginals")
    if not np.isfinite(cost).all():
        raise NonFiniteError("cost matrix has non-finite entries")
    _check_marginal(mu1, "mu1")
    _check_marginal(mu2, "mu2")
    state = _sinkhorn_log(cost, np.log(mu1), np.log(mu2), reg, max_iter, tol)
    if not state.converged(tol):
        if strict:
            raise ConvergenceError(
                "Sinkhorn did not reach the marginal tolerance", state.violation, state.iterations
            )
        log_event(
            logger,
            "sinkhorn_not_converged",
            logging.WARNING,
            violation=state.violation,
            iterations=state.iterations,
        )
    return TransportPlan(np.exp(state.log_plan), mu1, mu2, state.log_plan)


# ---------- Objective ----------


def gw_linearization(
    C1: sp.sparray | np.ndarray, C2: sp.sparray | np.ndarray, S_n: np.ndarray
) -> np.ndarray:
    """L = C1^2 S_n 1 + 1 S_n (C2^2)^T - 2 C1 S_n C2^T, squares taken entrywise.

    The all-ones products reduce to row / column sum broadcasts.
    """
    c1, c2 = _as_csr(C1), _as_csr(C2)
    n1, n2 = S_n.shape
    if c1.shape != (n1, n1) or c2.shape != (n2, n2):
        raise ShapeError(f"cost shapes {c1.shape}, {c2.shape} do not fit plan {S_n.shape}")
    p1 = S_n.sum(axis=1)
    p2 = S_n.sum(axis=0)
    left = c1.power(2) @ p1
    right = c2.power(2) @ p2
    cross = c2 @ (c1 @ S_n).T
    return left[:, None] + right[None, :] - 2.0 * cross.T


def wasserstein_term(M: np.ndarray, S_n: np.ndarray) -> float:
    return float((M * S_n).sum())


def gw_term(C1: sp.sparray | np.ndarray, C2: sp.sparray | np.ndarray, S_n: np.ndarray) -> float:
    return float((gw_linearization(C1, C2, S_n) * S_n).sum())


def fgw_objective(costs: CostSet, S: TransportPlan, shift: SamplingShift, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    S_n = S.values - shift.lam
    value = 0.0
    if alpha < 1.0:
        value += (1.0 - alpha) * wasserstein_term(costs.M, S_n)
    if alpha > 0.0:
        value += alpha * gw_term(costs.C1, costs.C2, S_n)
    return value


def node_ranking_terms(M: np.ndarray, S_n: np.ndarray) -> tuple[float, float]:
    """(positive, negative) node-pair losses; the Wasserstein term is their difference."""
    w = M * np.abs(S_n)
    pos = S_n >= 0
    return float(w[pos].sum()), float(w[~pos].sum())


def edge_ranking_terms(
    C1: sp.sparray | np.ndarray, C2: sp.sparray | np.ndarray, S_n: np.ndarray
) -> tuple[float, float]:
    """(positive, negative) edge-pair losses under the sign of S_n(x,y) S_n(x',y').

    With P = max(S_n, 0), N = max(-S_n, 0): same-sign pairs give
    <L P, P> + <L N, N>, mixed pairs give 2 <L P, N> (L is symmetric).
    """
    pos_part = np.maximum(S_n, 0.0)
    neg_part = np.maximum(-S_n, 0.0)
    lp = gw_linearization(C1, C2, pos_part)
    ln = gw_linearization(C1, C2, neg_part)
    pos = float((lp * pos_part).sum() + (ln * neg_part).sum())
    neg = float(2.0 * (lp * neg_part).sum())
    return pos, neg


# ---------- Proximal point ----------


def proximal_fgw(
    costs: CostSet,
    shift: SamplingShift,
    alpha: float,
    gamma_p: float,
    warm_start: TransportPlan,
    T: int = DEFAULT_PROX_ITERS,
    N: int = DEFAULT_SINKHORN_ITERS,
    tol: float = DEFAULT_TOL,
    strict: bool = True,
    slack: float = DESCENT_SLACK,
    trace: list[float] | None = None,
) -> TransportPlan:
    """T proximal steps, each an entropic OT solve with reg = gamma_p on
    C_total = (1 - alpha) M + alpha L(S^t - lam) - gamma_p log S^t.

    The constant <(1-alpha) M + alpha L, lam> is left out of the solve; the
    reported objective (appended to `trace`, warm start first) is the full J.

    A step whose objective exceeds the previous one by more than `slack` is
    redone with the proximal weight (solve cost and reg alike) doubled until it
    descends. If MAX_WEIGHT_DOUBLINGS retries all fail, S^t is returned and the
    trace is padded with its value, so the trace never rises.
    """
    if gamma_p <= 0:
        raise ValueError(f"gamma_p must be positive, got {gamma_p}")
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if warm_start.shape != costs.shape:
        raise ShapeError(f"warm start {warm_start.shape} does not match costs {costs.shape}")
    if not (warm_start.values > 0).all() and warm_start.log_values is None:
        raise ValueError("warm start must be strictly positive")
    if T == 0:
        return warm_start

    log_mu1, log_mu2 = np.log(warm_start.mu1), np.log(warm_start.mu2)
    log_s = warm_start.log()
    plan = warm_start
    previous = fgw_objective(costs, plan, shift, alpha)
    if trace is not None:
        trace.append(previous)
    base = (1.0 - alpha) * costs.M
    weight_cap = gamma_p * 2.0**MAX_WEIGHT_DOUBLINGS
    for t in range(1, T + 1):
        S_n = plan.values - shift.lam
        linear = base + alpha * gw_linearization(costs.C1, costs.C2, S_n) if alpha else base
        weight = gamma_p
        while True:
            state = _proximal_solve(linear, log_s, log_mu1, log_mu2, weight, N, tol, strict, t)
            candidate = TransportPlan(
                np.exp(state.log_plan), warm_start.mu1, warm_start.mu2, state.log_plan
            )
            current = fgw_objective(costs, candidate, shift, alpha)
            if current <= previous + slack or weight >= weight_cap:
                break
            weight *= 2.0
        if current > previous + slack:
            # S^t is a fixed point of every remaining step
            log_event(
                logger,
                "proximal_stalled",
                logging.WARNING,
                prox_iter=t,
                previous=previous,
                rejected=current,
                weight=weight,
            )
            if trace is not None:
                trace.extend([previous] * (T - t + 1))
            break
        if weight != gamma_p:
            log_event(
                logger,
                "proximal_weight_raised",
                logging.INFO,
                prox_iter=t,
                gamma_p=gamma_p,
                weight=weight,
            )
        log_s = state.log_plan
        plan = candidate
        if trace is not None:
            trace.append(current)
        log_event(
            logger,
            "proximal_iter",
            logging.DEBUG,
            iter=t,
            objective=current,
            weight=weight,
            violation=state.violation,
            sinkhorn_iters=state.iterations,
        )
        previous = current
    return plan


def _proximal_solve(
    linear: np.ndarray,
    log_s: np.ndarray,
    log_mu1: np.ndarray,
    log_mu2: np.ndarray,
    weight: float,
    N: int,
    tol: float,
    strict: bool,
    t: int,
) -> _SinkhornState:
    total = linear - weight * log_s
    if not np.isfinite(total).all():
        raise NonFiniteError(f"proximal cost became non-finite at iteration {t}")
    state = _sinkhorn_log(total, log_mu1, log_mu2, weight, N, tol)
    if not state.converged(tol):
        if strict:
            raise ConvergenceError(
                f"Sinkhorn did not converge in proximal iteration {t}",
                state.violation,
                state.iterations,
            )
        log_event(
            logger,
            "sinkhorn_not_converged",
            logging.WARNING,
            prox_iter=t,
            violation=state.violation,
            iterations=state.iterations,
        )
    return state


def write_trace(trace: list[float], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(v)])
