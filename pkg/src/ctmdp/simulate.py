"""Monte Carlo simulation of the controlled jump process under stationary policies.

Random numbers
--------------
Replication ``r`` of a run with seed ``s`` draws from numpy's
``Philox4x64-10`` counter-based generator with the 128-bit key
``s + 2**64 * r`` and counter starting at zero, consuming successive doubles
of ``Generator.random()``. Per jump two doubles are used, in order: ``u1``
for the sojourn ``-log1p(-u1) / rate`` and ``u2`` for the next state, the
first ``y`` whose cumulative jump probability exceeds ``u2``.

Randomized policies are simulated with the policy-averaged rates and jump
kernel rather than by drawing an action per sojourn; both give the same law.

A finite conservative model cannot explode. States listed in
``SimulationConfig.cemetery`` stand in for the post-explosion cemetery:
entering one stops the clock on cost and records the entry time as the
explosion time.
"""

from __future__ import annotations

import bisect
import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .model import CtmdpModel, Policy, policy_generator

CEMETERY = "cemetery"


@dataclass(frozen=True)
class SimulationConfig:
    horizon: float
    seed: int = 0
    replications: int = 1
    max_jumps: int = 10_000_000
    alpha: float | None = None
    start_state: int = 0
    cemetery: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.max_jumps < 1:
            raise ValueError("max_jumps must be at least 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "cemetery", frozenset(self.cemetery))


@dataclass(frozen=True)
class TrajectoryStats:
    cost: float
    jump_count: int
    exploded: bool
    explosion_time: float | None
    final_state: int | str
    end_time: float
    max_jumps_reached: bool = False

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "jump_count": self.jump_count,
            "exploded": self.exploded,
            "explosion_time": self.explosion_time,
            "final_state": self.final_state,
            "end_time": self.end_time,
            "max_jumps_reached": self.max_jumps_reached,
        }


def make_rng(seed: int, rep_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(rep_index) << 64)))


@dataclass(frozen=True, eq=False)
class _Dynamics:
    # plain lists: scalar access in the jump loop is much cheaper than on arrays
    rate: list
    cost_rate: list
    cumulative: list
    actions: tuple


def _dynamics(model: CtmdpModel, policy: Policy) -> _Dynamics:
    Q, c = policy_generator(model, policy)
    n = model.num_states
    rate = -np.diag(Q).copy()
    jump = Q - np.diag(np.diag(Q))
    cum = np.zeros((n, n))
    for x in range(n):
        if rate[x] > 0:
            cum[x] = np.cumsum(jump[x]) / rate[x]
            # guard the last admissible target against rounding below 1
            last = np.flatnonzero(jump[x] > 0)[-1]
            cum[x, last:] = 1.0
    if hasattr(policy, "choice"):
        names = tuple(policy.names(model))
    else:
        names = tuple("mixed" for _ in range(n))
    return _Dynamics(rate.tolist(), c.tolist(), cum.tolist(), names)


def _discounted_segment(rate: float, alpha: float | None, a: float, b: float) -> float:
    if alpha is None:
        return rate * (b - a)
    return rate * math.exp(-alpha * a) * -math.expm1(-alpha * (b - a)) / alpha


def _run(dyn: _Dynamics, config: SimulationConfig, rep_index: int, trace=None) -> TrajectoryStats:
    rng = make_rng(config.seed, rep_index)
    # block size only affects speed: the double stream is identical either way
    size = 128
    block = rng.random(size).tolist()
    pos = 0
    x = config.start_state
    t = 0.0
    cost = 0.0
    jumps = 0
    alpha = config.alpha
    T = config.horizon
    if x in config.cemetery:
        return TrajectoryStats(0.0, 0, True, 0.0, CEMETERY, 0.0)
    while True:
        r = dyn.rate[x]
        if r <= 0.0:
            cost += _discounted_segment(dyn.cost_rate[x], alpha, t, T)
            if trace is not None:
                trace.append((t, x, dyn.actions[x], math.inf))
            return TrajectoryStats(cost, jumps, False, None, x, T)
        if pos + 2 > len(block):
            size = min(2 * size, 8192)
            block = rng.random(size).tolist()
            pos = 0
        u1 = block[pos]
        u2 = block[pos + 1]
        pos += 2
        sojourn = -math.log1p(-u1) / r
        if trace is not None:
            trace.append((t, x, dyn.actions[x], sojourn))
        if t + sojourn >= T:
            cost += _discounted_segment(dyn.cost_rate[x], alpha, t, T)
            return TrajectoryStats(cost, jumps, False, None, x, T)
        cost += _discounted_segment(dyn.cost_rate[x], alpha, t, t + sojourn)
        t += sojourn
        jumps += 1
        x = bisect.bisect_right(dyn.cumulative[x], u2)
        if x in config.cemetery:
            return TrajectoryStats(cost, jumps, True, t, CEMETERY, t)
        if jumps >= config.max_jumps:
            # remaining sojourns unknown: flag, do not claim an explosion
            return TrajectoryStats(cost, jumps, False, None, x, t, max_jumps_reached=True)


def simulate_trajectory(
    model: CtmdpModel,
    policy: Policy,
    config: SimulationConfig,
    rep_index: int = 0,
    trace: list | None = None,
) -> TrajectoryStats:
    """One replication up to ``min(horizon, max_jumps-th jump, cemetery entry)``.

    If ``trace`` is a list, ``(t_n, x_n, action, sojourn)`` records are appended.
    """
    if not 0 <= config.start_state < model.num_states:
        raise ValueError("start_state out of range")
    return _run(_dynamics(model, policy), config, rep_index, trace)


def _run_chunk(args):
    dyn, config, reps = args
    return [_run(dyn, config, r) for r in reps]


def run_replications(
    model: CtmdpModel, policy: Policy, config: SimulationConfig, workers: int = 1
) -> list[TrajectoryStats]:
    """All replications, in replication order regardless of ``workers``."""
    if not 0 <= config.start_state < model.num_states:
        raise ValueError("start_state out of range")
    dyn = _dynamics(model, policy)
    reps = list(range(config.replications))
    if workers <= 1 or len(reps) < 2:
        return [_run(dyn, config, r) for r in reps]
    chunks = [reps[i::workers] for i in range(workers) if reps[i::workers]]
    out: list = [None] * len(reps)
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        for chunk, stats in zip(chunks, pool.map(_run_chunk, [(dyn, config, c) for c in chunks])):
            for r, s in zip(chunk, stats):
                out[r] = s
    return out


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    # numpy's sum is pairwise, so the mean is insensitive to chunking
    mean = float(np.mean(v))
    stderr = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return mean, stderr


def estimate_average_cost(
    model: CtmdpModel, policy: Policy, config: SimulationConfig, workers: int = 1
) -> tuple[float, float]:
    """Mean and standard error of ``cost / horizon`` across replications."""
    if config.replications < 2:
        raise ValueError("need at least 2 replications for a standard error")
    if config.alpha is not None:
        raise ValueError("average-cost estimation runs undiscounted")
    stats = run_replications(model, policy, config, workers)
    return _mean_stderr([s.cost / config.horizon for s in stats])


def discounted_truncation_bound(model: CtmdpModel, alpha: float, horizon: float) -> float:
    cmax = max(float(c.max(initial=0.0)) for c in model.cost)
    return math.exp(-alpha * horizon) * cmax / alpha


def estimate_discounted_cost(
    model: CtmdpModel, policy: Policy, alpha: float, config: SimulationConfig, workers: int = 1
) -> tuple[float, float]:
    """Mean and standard error of the discounted cost accumulated up to the horizon.

    Each sojourn contributes its exact exponential integral. Horizons shorter
    than ``20 / alpha`` trigger a warning quoting the truncation bias bound.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if config.horizon < 20.0 / alpha:
        bound = discounted_truncation_bound(model, alpha, config.horizon)
        warnings.warn(
            f"horizon {config.horizon} < 20/alpha; truncation bias up to {bound:.3e}", RuntimeWarning, stacklevel=2
        )
    cfg = SimulationConfig(
        config.horizon,
        config.seed,
        config.replications,
        config.max_jumps,
        alpha,
        config.start_state,
        config.cemetery,
    )
    stats = run_replications(model, policy, cfg, workers)
    return _mean_stderr([s.cost for s in stats])


def write_trace_csv(records: list, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "state", "action", "sojourn"])
    for t, x, a, s in records:
        writer.writerow([repr(float(t)), x, a, repr(float(s))])
