"""Small named models and a random model generator used by tests and docs."""

from __future__ import annotations

import numpy as np

from .model import CtmdpModel


def single_state(cost: float = 2.0, weight: float = 1.0) -> CtmdpModel:
    return CtmdpModel.from_dicts([["stay"]], {}, {(0, "stay"): cost}, [weight])


def mm1_adm() -> CtmdpModel:
    """Two-state admission queue: idle at 0, slow/fast service at 1."""
    return CtmdpModel.from_dicts(
        [["idle"], ["slow", "fast"]],
        {
            (0, "idle"): [-1.0, 1.0],
            (1, "slow"): [1.0, -1.0],
            (1, "fast"): [3.0, -3.0],
        },
        {(0, "idle"): 0.0, (1, "slow"): 2.0, (1, "fast"): 5.0},
        [1.0, 3.0],
    )


def symmetric_two_state(rate: float = 1.0) -> CtmdpModel:
    return CtmdpModel.from_dicts(
        [["a"], ["a"]],
        {(0, "a"): [-rate, rate], (1, "a"): [rate, -rate]},
        {(0, "a"): 0.0, (1, "a"): 1.0},
        [rate, rate],
    )


def pure_birth(num_states: int = 51, cost: float = 1.0) -> CtmdpModel:
    """Birth rates (n+1)^2 on 0..N-1, the last state absorbing.

    The absorbing top state stands in for the cemetery of the untruncated
    explosive chain; its cost is zero.
    """
    n = num_states
    rates = {}
    costs = {}
    for x in range(n):
        row = np.zeros(n)
        if x < n - 1:
            lam = float((x + 1) ** 2)
            row[x], row[x + 1] = -lam, lam
        rates[(x, "go")] = row
        costs[(x, "go")] = cost if x < n - 1 else 0.0
    weight = [float((x + 1) ** 2) for x in range(n)]
    return CtmdpModel.from_dicts([["go"]] * n, rates, costs, weight)


def two_absorbing() -> CtmdpModel:
    """Two absorbing states with different costs: relative values diverge."""
    return CtmdpModel.from_dicts(
        [["stay"], ["stay"]],
        {},
        {(0, "stay"): 0.0, (1, "stay"): 1.0},
        [1.0, 1.0],
    )


def random_model(
    rng: np.random.Generator,
    num_states: int | None = None,
    max_actions: int = 4,
    max_rate: float = 5.0,
    max_cost: float = 10.0,
    sparsity: float = 0.3,
) -> CtmdpModel:
    """Random conservative model with ``w = qbar + U[0, 1]``.

    Each off-diagonal rate is zeroed with probability ``sparsity`` so that a
    fair share of draws are multichain.
    """
    n = int(rng.integers(2, 7)) if num_states is None else num_states
    actions, rates, costs = [], {}, {}
    for x in range(n):
        k = int(rng.integers(1, max_actions + 1))
        names = [f"a{i}" for i in range(k)]
        actions.append(names)
        for a in names:
            row = rng.uniform(0.0, max_rate, size=n)
            row[rng.random(n) < sparsity] = 0.0
            row[x] = 0.0
            row[x] = -row.sum()
            rates[(x, a)] = row
            costs[(x, a)] = float(rng.uniform(0.0, max_cost))
    qbar = np.array([max(-rates[(x, a)][x] for a in actions[x]) for x in range(n)])
    weight = qbar + rng.uniform(0.0, 1.0, size=n)
    # w must stay strictly positive
    weight = np.maximum(weight, 1e-3)
    return CtmdpModel.from_dicts(actions, rates, costs, weight)
