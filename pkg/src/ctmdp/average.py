"""Average-cost optimality by the vanishing-discount method.

For a decreasing grid of discount rates the discounted problem is solved
in relative form: ``m_alpha = min_x W_alpha(x)``, ``h_alpha = W_alpha - m_alpha``
and ``g_alpha = alpha * m_alpha``. The gain is estimated by the largest
``g_alpha`` over the final grid window and the relative value by the
pointwise minimum of ``h_alpha`` over the same window; on a finite state
space these are the upper and lower limits along the grid. The policy is a
selector attaining the minimum in the average-cost optimality inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .discounted import NonConvergenceError, relative_brackets, solve_relative
from .kernels import argmin_lowest
from .model import CtmdpModel, Policy, PolicyDeterministic, policy_generator
from .oracle import ENUMERATION_CAP, EnumerationCapError, brute_force_optimal_average, chain_structure

__all__ = [
    "AverageSolution",
    "CertificateReport",
    "NonConvergenceError",
    "TraceEntry",
    "check_condition1",
    "check_condition2",
    "extract_average_policy",
    "optimality_inequality_residual",
    "vanishing_discount",
    "verify_upper_bound",
]

TAIL_WINDOW = 3


@dataclass(frozen=True, eq=False)
class TraceEntry:
    alpha: float
    m_alpha: float
    g_alpha: float
    h_alpha: np.ndarray
    policy: PolicyDeterministic
    residual: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "m_alpha": self.m_alpha,
            "g_alpha": self.g_alpha,
            "h_alpha": self.h_alpha.tolist(),
        }


@dataclass(frozen=True, eq=False)
class AverageSolution:
    g: float
    h: np.ndarray
    policy: PolicyDeterministic
    alpha_grid: tuple[float, ...]
    trace: tuple[TraceEntry, ...]
    converged: bool
    g_last: float
    multichain: bool = False

    def to_dict(self, model: CtmdpModel) -> dict:
        return {
            "g": self.g,
            "g_last": self.g_last,
            "h": self.h.tolist(),
            "policy": self.policy.names(model),
            "converged": self.converged,
            # with several recurrent classes g is only the infimum over start states
            "multichain": self.multichain,
            "trace": [e.to_dict() for e in self.trace],
        }


@dataclass(frozen=True, eq=False)
class CertificateReport:
    kind: str
    slack: np.ndarray
    tol: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.slack.size == 0 or self.slack.min() >= -self.tol)

    @property
    def worst_state(self) -> int | None:
        return int(np.argmin(self.slack)) if self.slack.size else None

    def to_dict(self) -> dict:
        details = {}
        for k, v in self.details.items():
            details[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return {
            "kind": self.kind,
            "ok": self.ok,
            "tol": self.tol,
            "slack": self.slack.tolist(),
            "worst_state": self.worst_state,
            "details": details,
        }


def vanishing_discount(
    model: CtmdpModel,
    alpha0: float = 1.0,
    ratio: float = 0.5,
    steps: int = 30,
    vi_tol: float = 1e-11,
    tol_g: float = 1e-7,
    tol_h: float = 1e-6,
) -> AverageSolution:
    """Gain, relative value and policy from the discount grid ``alpha0 * ratio**k``.

    Each grid point is solved to Bellman residual ``vi_tol``; a failure raises
    :class:`NonConvergenceError` carrying the offending ``alpha``.
    ``converged`` requires successive ``g_alpha`` and ``h_alpha`` over the
    final window to agree within ``tol_g`` and ``tol_h``.
    """
    if not alpha0 > 0 or not 0 < ratio < 1:
        raise ValueError("need alpha0 > 0 and 0 < ratio < 1")
    if steps < 1:
        raise ValueError("steps must be positive")
    trace = []
    start = None
    for k in range(steps):
        alpha = alpha0 * ratio**k
        sol = solve_relative(model, alpha, tol=vi_tol, start=start)
        start = sol.policy
        trace.append(TraceEntry(alpha, sol.m, sol.gain, sol.h, sol.policy, sol.residual))
    tail = trace[-TAIL_WINDOW:]
    g = max(e.g_alpha for e in tail)
    h = np.min([e.h_alpha for e in tail], axis=0)
    converged = len(tail) == TAIL_WINDOW and all(
        abs(b.g_alpha - a.g_alpha) <= tol_g and np.abs(b.h_alpha - a.h_alpha).max() <= tol_h
        for a, b in zip(tail, tail[1:])
    )
    policy = extract_average_policy(model, g, h)
    multichain = not chain_structure(policy_generator(model, policy)[0]).is_unichain
    return AverageSolution(
        float(g),
        h,
        policy,
        tuple(e.alpha for e in trace),
        tuple(trace),
        bool(converged),
        trace[-1].g_alpha,
        multichain,
    )


def _check_h(model: CtmdpModel, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != (model.num_states,):
        raise ValueError("h must have one entry per state")
    if not np.all(np.isfinite(h)) or np.any(h < 0):
        raise ValueError("h must be finite and nonnegative")
    return h


def _inequality_brackets(model: CtmdpModel, h: np.ndarray) -> np.ndarray:
    # c + w * sum_y h(y) (q/w + I) == c + (Q_a h)(x) + w(x) h(x)
    return relative_brackets(model, h) + (model.weight * h)[:, None]


def optimality_inequality_residual(model: CtmdpModel, g: float, h, tol: float = 1e-6) -> CertificateReport:
    """Slack of ``g + w h >= min_a { c + w * sum_y h(y) (q/w + I) }`` at every state."""
    h = _check_h(model, h)
    rhs = _inequality_brackets(model, h).min(axis=1)
    slack = g + model.weight * h - rhs
    return CertificateReport("optimality_inequality", slack, tol)


def extract_average_policy(model: CtmdpModel, g: float, h) -> PolicyDeterministic:
    """Selector attaining the right-hand minimum of the optimality inequality.

    ``g`` does not affect the minimizer; it is accepted to mirror the inequality.
    """
    h = _check_h(model, h)
    return PolicyDeterministic(tuple(argmin_lowest(relative_brackets(model, h))))


def verify_upper_bound(
    model: CtmdpModel, policy: Policy, g: float, h, tol: float = 1e-12
) -> CertificateReport:
    """Check ``g + h(x) q_x^pi >= c^pi(x) + sum_{y != x} h(y) q^pi(y|x)`` at every state.

    When it holds, ``g`` bounds the long-run average cost of ``policy`` from
    every start state.
    """
    h = _check_h(model, h)
    Q, c = policy_generator(model, policy)
    exit_rate = -np.diag(Q)
    off = Q - np.diag(np.diag(Q))
    slack = g + h * exit_rate - c - off @ h
    return CertificateReport("upper_bound", slack, tol, {"g": float(g)})


def check_condition1(model: CtmdpModel, cap: int = ENUMERATION_CAP) -> CertificateReport:
    """Finite optimal average cost from some start state.

    Uses the enumeration oracle for a witness policy; above the enumeration
    cap falls back to the upper limit of ``alpha * m_alpha`` on a short grid.
    """
    try:
        res = brute_force_optimal_average(model, cap)
    except EnumerationCapError:
        sol = vanishing_discount(model, alpha0=1.0, ratio=0.5, steps=20)
        value = max(e.g_alpha for e in sol.trace[-TAIL_WINDOW:])
        finite = np.isfinite(value)
        slack = np.zeros(model.num_states) if finite else np.full(model.num_states, -np.inf)
        return CertificateReport("condition1", slack, 0.0, {"method": "discount_grid", "value": float(value)})
    per_start = np.array([row.per_start for row in res.table])
    flat = int(np.argmin(per_start))
    row, start = divmod(flat, model.num_states)
    witness = res.table[row]
    best = per_start.min(axis=0)
    slack = np.where(np.isfinite(best), 0.0, -np.inf)
    return CertificateReport(
        "condition1",
        slack,
        0.0,
        {
            "method": "enumeration",
            "value": float(per_start[row, start]),
            "witness_policy": witness.policy.names(model),
            "witness_state": start,
            "best_per_start": best,
        },
    )


def _h_rows(trace) -> np.ndarray:
    rows = [getattr(e, "h_alpha", e) for e in trace]
    return np.asarray(rows, dtype=float)


def check_condition2(
    trace: Sequence, threshold: float = 1e6, slope_tol: float = 1e-4
) -> CertificateReport:
    """Boundedness proxy for the lower limit of ``h_alpha`` as alpha decreases.

    ``H_k = min_{j >= k} h_j`` is the running tail infimum along the grid.
    Each state must keep ``H`` below ``threshold`` on the final window, and
    ``H`` must have levelled off: its mean per-step change across the last
    three grid points may not exceed ``slope_tol``.
    """
    H = _h_rows(trace)
    if H.ndim != 2 or H.shape[0] < 5:
        raise ValueError("condition 2 check needs at least 5 grid points")
    running = np.minimum.accumulate(H[::-1], axis=0)[::-1]
    window = running[-TAIL_WINDOW:]
    peak = window.max(axis=0)
    slope = (window[-1] - window[0]) / (TAIL_WINDOW - 1)
    slack = np.minimum(threshold - peak, slope_tol - slope)
    return CertificateReport(
        "condition2", slack, 0.0, {"tail_max": peak, "tail_slope": slope, "threshold": threshold}
    )
