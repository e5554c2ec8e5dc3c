"""Discounted-cost solvers.

``value_iteration`` is the certified path: it starts from zero, applies the
uniformized Bellman operator synchronously and checks, every sweep, that the
iterates increase and that successive differences contract by at least
``max_x w(x)/(w(x)+alpha)``.

``solve_relative`` targets small discount rates where value iteration would
need on the order of ``w/alpha`` sweeps. It alternates exact policy
evaluation with greedy improvement, working in the coordinates
``W_alpha = offset/alpha + k`` so the huge common level never mixes with the
relative values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .kernels import _check_alpha, argmin_lowest, t_brackets, uniformize
from .model import CtmdpModel, Policy, PolicyDeterministic, policy_generator

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000_000


class MonotonicityError(AssertionError):
    """Value iteration produced a decreasing or non-contracting sweep."""


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    alpha: float
    values: np.ndarray
    policy: PolicyDeterministic
    iterations: int
    residual: float
    converged: bool
    tol: float
    monotone_checked: bool = True
    contraction_factor: float = float("nan")

    def to_dict(self, model: CtmdpModel) -> dict:
        return {
            "alpha": self.alpha,
            "values": self.values.tolist(),
            "policy": self.policy.names(model),
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
        }


@numba.njit(cache=True)
def _vi_loop(P, stage, v0, beta, tol, max_iter, check):
    n, na, _ = P.shape
    v = v0.copy()
    tv = np.empty(n)
    prev = np.inf
    eps = np.finfo(np.float64).eps
    for it in range(max_iter + 1):
        resid = 0.0
        vmax = 0.0
        for x in range(n):
            best = np.inf
            for a in range(na):
                c = stage[x, a]
                if c == np.inf:
                    continue
                acc = c
                for y in range(n):
                    acc += P[x, a, y] * v[y]
                if acc < best:
                    best = acc
            tv[x] = best
            d = abs(best - v[x])
            if d > resid:
                resid = d
            if abs(best) > vmax:
                vmax = abs(best)
        if check:
            # rounding allowance: 64 ulps of the largest iterate
            slack = 64.0 * eps * max(1.0, vmax)
            for x in range(n):
                if tv[x] < v[x] - slack:
                    return v, it, resid, 1
            if it > 0 and resid > beta * prev + slack:
                return v, it, resid, 2
        if resid <= tol:
            return v, it, resid, 0
        if it == max_iter:
            return v, it, resid, 3
        prev = resid
        for x in range(n):
            v[x] = tv[x]
    return v, max_iter, resid, 3


def value_iteration(
    model: CtmdpModel,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm_start=None,
) -> DiscountedSolution:
    """Iterate ``v_n = T v_{n-1}`` until ``||T v_N - v_N||_inf <= tol``.

    Starting from ``v_0 = 0`` every sweep is checked for monotone increase
    and geometric contraction; a failed check raises
    :class:`MonotonicityError`. A ``warm_start`` skips those checks (the
    sequence need not be monotone) and relies on the final residual alone.
    Running out of ``max_iter`` returns the last iterate with
    ``converged=False``.
    """
    _check_alpha(alpha)
    if not tol > 0:
        raise ValueError("tol must be positive")
    kern = uniformize(model, alpha)
    beta = float(np.max(model.weight / (model.weight + alpha)))
    check = warm_start is None
    v0 = np.zeros(model.num_states) if check else np.asarray(warm_start, dtype=float).copy()
    v, its, resid, status = _vi_loop(kern.Q, kern.stage_cost, v0, beta, tol, max_iter, check)
    if status == 1:
        raise MonotonicityError(f"iterate decreased at sweep {its} (alpha={alpha})")
    if status == 2:
        raise MonotonicityError(f"sweep {its} failed to contract by {beta} (alpha={alpha})")
    v = np.asarray(v)
    policy = extract_greedy_policy(model, alpha, np.maximum(v, 0.0))
    return DiscountedSolution(
        float(alpha), v, policy, int(its), float(resid), status == 0, float(tol), check, beta
    )


def extract_greedy_policy(model: CtmdpModel, alpha: float, v) -> PolicyDeterministic:
    """Action attaining the Bellman minimum at ``v`` (lowest index on ties)."""
    _check_alpha(alpha)
    v = np.asarray(v, dtype=float)
    return PolicyDeterministic(tuple(argmin_lowest(t_brackets(model, alpha, v))))


def exact_discounted_value(model: CtmdpModel, policy: Policy, alpha: float) -> np.ndarray:
    """Solve ``(alpha I - Q_pi) v = c_pi`` by LU factorization."""
    _check_alpha(alpha)
    Q, c = policy_generator(model, policy)
    A = alpha * np.eye(model.num_states) - Q
    try:
        v = np.linalg.solve(A, c)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"policy evaluation failed at alpha={alpha}: {exc}") from None
    if v.min() < 0:
        if v.min() < -1e-10:
            warnings.warn(f"policy value {v.min():.3e} below -1e-10 clamped to zero", RuntimeWarning, stacklevel=2)
        v = np.maximum(v, 0.0)
    return v


# -- relative-coordinate solver for small alpha --------------------------------------


@dataclass(frozen=True, eq=False)
class RelativeSolution:
    """``W_alpha = m + h`` with ``h >= 0``, ``min h == 0`` and ``gain == alpha * m``.

    ``residual`` is ``||T W - W||_inf`` evaluated without forming ``W``.
    """

    alpha: float
    gain: float
    h: np.ndarray
    policy: PolicyDeterministic
    residual: float
    iterations: int

    @property
    def m(self) -> float:
        return self.gain / self.alpha

    @property
    def values(self) -> np.ndarray:
        return self.m + self.h


def relative_brackets(model: CtmdpModel, k: np.ndarray) -> np.ndarray:
    """``c(x,a) + sum_y q(y|x,a) k(y)``; ``inf`` at padding."""
    out = model.cost_matrix + model.rate_tensor @ k
    return np.where(model.action_mask, out, np.inf)


def _evaluate_relative(model: CtmdpModel, policy: PolicyDeterministic, alpha: float, ref: int):
    Q, c = policy_generator(model, policy)
    n = model.num_states
    A = alpha * np.eye(n) - Q
    A[:, ref] = 1.0
    try:
        sol = np.linalg.solve(A, c)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"relative evaluation failed at alpha={alpha}: {exc}") from None
    offset = sol[ref]
    k = sol.copy()
    k[ref] = 0.0
    return offset, k


def solve_relative(
    model: CtmdpModel,
    alpha: float,
    tol: float = 1e-11,
    max_iter: int = 200,
    start: PolicyDeterministic | None = None,
) -> RelativeSolution:
    """Discounted optimum via evaluation/improvement in relative coordinates.

    Raises :class:`NonConvergenceError` if the final Bellman residual exceeds
    ``tol`` or the policy keeps changing after ``max_iter`` rounds.
    """
    _check_alpha(alpha)
    n = model.num_states
    policy = start or PolicyDeterministic(tuple(argmin_lowest(model.cost_matrix)))
    seen = set()
    for it in range(1, max_iter + 1):
        offset, k = _evaluate_relative(model, policy, alpha, 0)
        B = relative_brackets(model, k)
        current = B[np.arange(n), policy.choice]
        best = B.min(axis=1)
        scale = np.where(np.isfinite(B), np.abs(B), 0.0).max(axis=1)
        improve = best < current - 1e-13 * np.maximum(scale, 1e-300)
        seen.add(policy.choice)
        if not improve.any():
            break
        greedy = argmin_lowest(B, rtol=1e-13)
        choice = np.where(improve, greedy, policy.choice)
        policy = PolicyDeterministic(tuple(choice))
        if policy.choice in seen:
            break
    else:
        raise NonConvergenceError(alpha, f"policy still changing after {max_iter} rounds")
    resid = float(np.max(np.abs(best - alpha * k - offset) / (alpha + model.weight)))
    if not resid <= tol:
        raise NonConvergenceError(alpha, f"Bellman residual {resid:.3e} exceeds {tol:.3e}")
    kmin = k.min()
    return RelativeSolution(float(alpha), float(offset + alpha * kmin), k - kmin, policy, resid, it)


class NonConvergenceError(RuntimeError):
    def __init__(self, alpha: float, message: str):
        self.alpha = alpha
        super().__init__(f"alpha={alpha}: {message}")


def contraction_factor(model: CtmdpModel, alpha: float) -> float:
    return float(np.max(model.weight / (model.weight + alpha)))

