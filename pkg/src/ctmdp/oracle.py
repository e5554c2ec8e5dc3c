"""Brute-force ground truth for small models.

Every deterministic stationary policy is enumerated; each induced chain is
split into recurrent classes (closed strongly connected components of the
jump graph) and transient states, and long-run average costs follow from the
class stationary distributions plus absorption probabilities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .model import CtmdpModel, Policy, PolicyDeterministic, policy_generator

ENUMERATION_CAP = 10**6


class EnumerationCapError(ValueError):
    pass


def policy_count(model: CtmdpModel) -> int:
    return math.prod(len(a) for a in model.actions)


def enumerate_policies(model: CtmdpModel, cap: int = ENUMERATION_CAP) -> Iterator[PolicyDeterministic]:
    """All deterministic stationary policies in lexicographic order of action indices."""
    count = policy_count(model)
    if count > cap:
        raise EnumerationCapError(f"{count} policies exceed the enumeration cap {cap}")
    for choice in itertools.product(*(range(len(a)) for a in model.actions)):
        yield PolicyDeterministic(choice)


@dataclass(frozen=True)
class ChainStructure:
    recurrent: tuple[tuple[int, ...], ...]
    transient: tuple[int, ...]

    @property
    def classification(self) -> str:
        if len(self.recurrent) > 1:
            return "multichain"
        if len(self.recurrent[0]) == 1:
            return "absorbing"
        return "unichain"

    @property
    def is_unichain(self) -> bool:
        return len(self.recurrent) == 1


def chain_structure(Q: np.ndarray) -> ChainStructure:
    """Recurrent classes and transient states of the chain with generator ``Q``."""
    n = Q.shape[0]
    adj = (Q > 0) & ~np.eye(n, dtype=bool)
    ncomp, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
    recurrent = []
    transient = []
    for comp in range(ncomp):
        members = np.flatnonzero(labels == comp)
        leaves = adj[members][:, labels != comp].any()
        if leaves:
            transient.extend(members.tolist())
        else:
            recurrent.append(tuple(members.tolist()))
    recurrent.sort()
    return ChainStructure(tuple(recurrent), tuple(sorted(transient)))


def _class_distribution(Q: np.ndarray, members: tuple[int, ...]) -> np.ndarray:
    idx = list(members)
    sub = Q[np.ix_(idx, idx)]
    k = len(idx)
    A = sub.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    mu_c = np.linalg.solve(A, b)
    mu = np.zeros(Q.shape[0])
    mu[idx] = mu_c
    return mu


@dataclass(frozen=True, eq=False)
class StationaryResult:
    """``mu`` is set for unichain policies; ``class_distributions`` always."""

    mu: np.ndarray | None
    structure: ChainStructure
    class_distributions: tuple[np.ndarray, ...]

    @property
    def classification(self) -> str:
        return self.structure.classification


def stationary_distribution(model: CtmdpModel, policy: Policy) -> StationaryResult:
    Q, _ = policy_generator(model, policy)
    return _stationary(Q)


def _stationary(Q: np.ndarray) -> StationaryResult:
    structure = chain_structure(Q)
    dists = tuple(_class_distribution(Q, cls) for cls in structure.recurrent)
    mu = dists[0] if structure.is_unichain else None
    return StationaryResult(mu, structure, dists)


def absorption_probabilities(Q: np.ndarray, structure: ChainStructure) -> np.ndarray:
    """``P[x, k]`` = probability that the chain started at ``x`` ends in class ``k``."""
    n = Q.shape[0]
    P = np.zeros((n, len(structure.recurrent)))
    for k, cls in enumerate(structure.recurrent):
        P[list(cls), k] = 1.0
    T = list(structure.transient)
    if T:
        QTT = Q[np.ix_(T, T)]
        for k, cls in enumerate(structure.recurrent):
            rhs = -Q[np.ix_(T, list(cls))].sum(axis=1)
            P[T, k] = np.linalg.solve(QTT, rhs)
    return P


@dataclass(frozen=True, eq=False)
class PolicyAverage:
    policy: PolicyDeterministic | Policy
    classification: str
    class_gains: tuple[float, ...]
    per_start: np.ndarray

    @property
    def worst(self) -> float:
        return float(self.per_start.max())


def _policy_average(model: CtmdpModel, policy: Policy) -> PolicyAverage:
    Q, c = policy_generator(model, policy)
    st = _stationary(Q)
    gains = tuple(float(mu @ c) for mu in st.class_distributions)
    if len(gains) == 1:
        per_start = np.full(model.num_states, gains[0])
    else:
        per_start = absorption_probabilities(Q, st.structure) @ np.array(gains)
    return PolicyAverage(policy, st.classification, gains, per_start)


def exact_average_cost(model: CtmdpModel, policy: Policy) -> np.ndarray:
    """Long-run average cost from every start state (constant when unichain)."""
    return _policy_average(model, policy).per_start


@dataclass(frozen=True, eq=False)
class OracleResult:
    best_g: float
    best_policy: PolicyDeterministic
    table: tuple[PolicyAverage, ...]

    @property
    def all_unichain(self) -> bool:
        return all(row.classification != "multichain" for row in self.table)

    @property
    def best_per_start(self) -> np.ndarray:
        return np.min([row.per_start for row in self.table], axis=0)

    def to_dict(self, model: CtmdpModel) -> dict:
        return {
            "best_g": self.best_g,
            "best_policy": self.best_policy.names(model),
            "all_unichain": self.all_unichain,
            "table": [
                {
                    "policy": row.policy.names(model),
                    "classification": row.classification,
                    "class_gains": list(row.class_gains),
                    "per_start": row.per_start.tolist(),
                }
                for row in self.table
            ],
        }


def brute_force_optimal_average(model: CtmdpModel, cap: int = ENUMERATION_CAP) -> OracleResult:
    """Minimize the worst-start average cost over all deterministic stationary policies."""
    table = tuple(_policy_average(model, p) for p in enumerate_policies(model, cap))
    best = table[0]
    for row in table[1:]:
        if row.worst < best.worst - 1e-12 * max(1.0, abs(best.worst)):
            best = row
    return OracleResult(best.worst, best.policy, table)


def best_discounted_values(model: CtmdpModel, alpha: float, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Pointwise minimum of the exact discounted value over every deterministic policy."""
    n = model.num_states
    policies = list(enumerate_policies(model, cap))
    A = np.empty((len(policies), n, n))
    C = np.empty((len(policies), n))
    for i, p in enumerate(policies):
        Q, c = policy_generator(model, p)
        A[i] = alpha * np.eye(n) - Q
        C[i] = c
    V = np.linalg.solve(A, C[..., None])[..., 0]
    return V.min(axis=0)
