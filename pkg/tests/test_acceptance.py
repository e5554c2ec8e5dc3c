"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from conftest import build_corpus
from ctmdp.average import optimality_inequality_residual, vanishing_discount, verify_upper_bound
from ctmdp.catalog import mm1_adm, pure_birth, random_model
from ctmdp.discounted import MonotonicityError, exact_discounted_value, value_iteration
from ctmdp.kernels import bellman_T_tilde, matrix_exponential_oracle, transient_kernel_series
from ctmdp.model import PolicyDeterministic, PolicyRandomized, policy_generator, validate_model
from ctmdp.oracle import best_discounted_values, brute_force_optimal_average, exact_average_cost
from ctmdp.simulate import SimulationConfig, estimate_average_cost, estimate_discounted_cost, run_replications

ALPHAS = (0.01, 0.1, 1.0)


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def models():
    return build_corpus()


@pytest.fixture(scope="module")
def discounted_runs(models):
    start = time.perf_counter()
    runs, failures = [], []
    for i, m in enumerate(models):
        for alpha in ALPHAS:
            try:
                runs.append((i, alpha, value_iteration(m, alpha, tol=1e-12)))
            except MonotonicityError as exc:
                failures.append((i, alpha, str(exc)))
    return runs, failures, time.perf_counter() - start


@pytest.fixture(scope="module")
def average_runs(models):
    start = time.perf_counter()
    rows = []
    for m in models:
        oracle = brute_force_optimal_average(m)
        if oracle.all_unichain:
            rows.append((m, oracle, vanishing_discount(m)))
    return rows, time.perf_counter() - start


def test_criterion_01_discounted_oracle(capsys, models, discounted_runs):
    runs, failures, elapsed = discounted_runs
    start = time.perf_counter()
    gap = max(np.abs(sol.values - best_discounted_values(models[i], alpha)).max() for i, alpha, sol in runs)
    elapsed += time.perf_counter() - start
    ok = not failures and len(runs) == 600 and gap <= 1e-8 and elapsed <= 60
    report(capsys, 1, "discounted oracle equivalence", ok, f"max gap {gap:.2e} (tol 1e-8) over {len(runs)} runs, {elapsed:.1f}s (limit 60s)")


def test_criterion_02_operator_equivalence(capsys, models, discounted_runs):
    runs, _, _ = discounted_runs
    worst = -math.inf
    for i, alpha, sol in runs:
        m = models[i]
        bound = float(np.max((m.weight + alpha) / alpha)) * 1e-12 + 1e-9
        resid = np.abs(bellman_T_tilde(m, alpha, sol.values) - sol.values).max()
        worst = max(worst, resid / bound)
    report(capsys, 2, "uniformized and jump-chain operators agree", worst <= 1.0, f"worst residual/bound ratio {worst:.3f} (must be <= 1)")


def test_criterion_03_vanishing_discount(capsys, average_runs):
    rows, elapsed = average_runs
    g_gap = max(abs(sol.g - oracle.best_g) for _, oracle, sol in rows)
    pol_gap = max(np.abs(exact_average_cost(m, sol.policy) - oracle.best_g).max() for m, oracle, sol in rows)
    ok = len(rows) > 100 and g_gap <= 1e-4 and pol_gap <= 1e-8 and elapsed <= 300
    report(
        capsys, 3, "vanishing-discount correctness", ok,
        f"{len(rows)} unichain models, |g - best_g| <= {g_gap:.2e} (tol 1e-4), policy cost gap {pol_gap:.2e} (tol 1e-8), {elapsed:.1f}s (limit 300s)",
    )


def test_criterion_04_optimality_certificate(capsys, average_runs):
    rows, _ = average_runs
    min_slack = min(optimality_inequality_residual(m, sol.g, sol.h).slack.min() for m, _, sol in rows)
    bound_fail = sum(not verify_upper_bound(m, sol.policy, sol.g + 1e-6, sol.h).ok for m, _, sol in rows)
    ok = min_slack >= -1e-6 and bound_fail == 0
    report(capsys, 4, "optimality-inequality certificate", ok, f"min slack {min_slack:.2e} (>= -1e-6), upper-bound failures {bound_fail}")


def _random_policy(model, rng):
    if rng.random() < 0.5:
        return PolicyDeterministic(tuple(int(rng.integers(len(a))) for a in model.actions))
    return PolicyRandomized(tuple(rng.dirichlet(np.ones(len(a))) for a in model.actions))


def test_criterion_05_upper_bound_soundness(capsys):
    rng = np.random.default_rng(5)
    certified, violations, attempts = 0, 0, 0
    while certified < 50:
        attempts += 1
        m = random_model(rng)
        pol = _random_policy(m, rng)
        Q, c = policy_generator(m, pol)
        h = rng.uniform(0, 10, m.num_states)
        off = Q - np.diag(np.diag(Q))
        # smallest g the bound accepts, then a random perturbation either side
        g = float(np.max(c + off @ h + np.diag(Q) * h)) + rng.uniform(-0.5, 2.0)
        if not verify_upper_bound(m, pol, g, h).ok:
            continue
        certified += 1
        violations += int(np.any(exact_average_cost(m, pol) > g + 1e-8))
    report(capsys, 5, "upper-bound soundness", violations == 0, f"{certified} certified tuples from {attempts} draws, {violations} violations")


def test_criterion_06_transient_series(capsys, models):
    rng = np.random.default_rng(6)
    worst = 0.0
    for m in models[:50]:
        pol = PolicyDeterministic(tuple(int(rng.integers(len(a))) for a in m.actions))
        Q, _ = policy_generator(m, pol)
        for t in (0.1, 1.0):
            k_max = math.ceil(10 * m.qbar.max() * t) + 20
            series = transient_kernel_series(m, pol, t, k_max).p
            worst = max(worst, np.abs(series - matrix_exponential_oracle(Q, t)).max())
    report(capsys, 6, "transient kernel series", worst <= 1e-6, f"max entry error {worst:.2e} (tol 1e-6) over 100 cases")


def test_criterion_07_monotone_value_iteration(capsys, discounted_runs):
    runs, failures, _ = discounted_runs
    checked = sum(sol.monotone_checked for _, _, sol in runs)
    ok = not failures and checked == len(runs) == 600
    report(capsys, 7, "monotone value iteration", ok, f"{checked} checked runs, {len(failures)} assertion failures")


def test_criterion_08_simulation_consistency(capsys):
    start = time.perf_counter()
    m = mm1_adm()
    policies = {"slow": (PolicyDeterministic((0, 0)), 1.0), "fast": (PolicyDeterministic((0, 1)), 1.25)}
    lines, ok = [], True
    for name, (pol, target) in policies.items():
        mean, se = estimate_average_cost(m, pol, SimulationConfig(horizon=1e4, seed=7, replications=64))
        z = (mean - target) / se
        ok &= abs(z) <= 3
        lines.append(f"avg {name} z={z:+.2f}")
        exact = exact_discounted_value(m, pol, 1.0)
        for x in range(2):
            cfg = SimulationConfig(horizon=40.0, seed=8, replications=2000, start_state=x)
            mean, se = estimate_discounted_cost(m, pol, 1.0, cfg)
            z = (mean - exact[x]) / se
            ok &= abs(z) <= 3
            lines.append(f"disc {name} x={x} z={z:+.2f}")
    cfg = SimulationConfig(horizon=1e3, seed=7, replications=8)
    first = json.dumps([s.to_dict() for s in run_replications(m, policies["slow"][0], cfg)])
    second = json.dumps([s.to_dict() for s in run_replications(m, policies["slow"][0], cfg)])
    identical = first == second
    elapsed = time.perf_counter() - start
    ok = bool(ok) and identical and elapsed <= 30
    report(capsys, 8, "simulation consistency", ok, f"{', '.join(lines)}; byte-identical={identical}; {elapsed:.1f}s (limit 30s)")


def test_criterion_09_explosion_surrogate(capsys):
    target = sum(1.0 / (n + 1) ** 2 for n in range(50))
    assert abs(target - 1.6251) < 5e-5
    m = pure_birth(51)
    cfg = SimulationConfig(horizon=1e3, seed=9, replications=100_000, cemetery=frozenset({50}))
    stats = run_replications(m, PolicyDeterministic((0,) * 51), cfg)
    times = np.array([s.explosion_time for s in stats])
    mean = times.mean()
    se = times.std(ddof=1) / math.sqrt(times.size)
    z = (mean - target) / se
    ok = all(s.exploded for s in stats) and abs(z) <= 3
    report(capsys, 9, "explosion surrogate", ok, f"mean absorption time {mean:.5f} vs {target:.6f}, z={z:+.2f}")


def test_criterion_10_scaling_invariance(capsys, models):
    lam = 3.7
    worst_g = worst_h = 0.0
    changed = 0
    for m in models:
        a = vanishing_discount(m)
        b = vanishing_discount(m.scaled_cost(lam))
        worst_g = max(worst_g, abs(b.g - lam * a.g) / max(lam * a.g, 1e-300))
        hscale = max(lam * np.abs(a.h).max(), 1e-300)
        worst_h = max(worst_h, np.abs(b.h - lam * a.h).max() / hscale)
        changed += a.policy.choice != b.policy.choice
    ok = worst_g <= 1e-6 and worst_h <= 1e-6 and changed == 0
    report(capsys, 10, "scaling invariance", ok, f"rel error g {worst_g:.1e}, h {worst_h:.1e} (tol 1e-6), {changed} policy changes over {len(models)} models")


def test_criterion_11_alpha_w_convergence(capsys, average_runs):
    rows, _ = average_runs
    converged = [(m, sol) for m, _, sol in rows if sol.converged]
    worst = 0.0
    for _, sol in converged:
        last = sol.trace[-1]
        w_alpha = last.m_alpha + last.h_alpha
        worst = max(worst, np.abs(last.alpha * w_alpha - sol.g).max())
    ok = len(converged) > 0 and worst <= 1e-5
    report(capsys, 11, "alpha W_alpha convergence", ok, f"max |alpha W - g| {worst:.2e} (tol 1e-5) on {len(converged)} converged runs")


def test_corpus_matches_stated_ranges(models):
    assert len(models) == 200
    for m in models:
        assert validate_model(m).ok
        assert 2 <= m.num_states <= 6
        assert all(1 <= len(a) <= 4 for a in m.actions)
        assert all(c.min() >= 0 and c.max() <= 10 for c in m.cost)
        offdiag = [r[:, np.arange(m.num_states) != x] for x, r in enumerate(m.rates)]
        assert all(o.min() >= 0 and o.max() <= 5 for o in offdiag)
        assert np.all(m.weight >= m.qbar) and np.all(m.weight <= m.qbar + 1)
