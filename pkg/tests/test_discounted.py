import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import zero_cost
from ctmdp.catalog import random_model, symmetric_two_state
from ctmdp.discounted import (
    MonotonicityError,
    contraction_factor,
    exact_discounted_value,
    extract_greedy_policy,
    solve_relative,
    value_iteration,
)
from ctmdp.kernels import bellman_T
from ctmdp.model import PolicyDeterministic, PolicyRandomized
from ctmdp.oracle import best_discounted_values

seeds = st.integers(0, 2**32 - 1)
SLOW = PolicyDeterministic((0, 0))
FAST = PolicyDeterministic((0, 1))


def test_single_state_value(one_state):
    sol = value_iteration(one_state, 1.0)
    assert sol.converged
    assert sol.values[0] == pytest.approx(2.0, abs=1e-9)


def test_mm1_matches_exact_values(mm1):
    sol = value_iteration(mm1, 1.0, tol=1e-12)
    assert sol.policy.names(mm1) == ["idle", "slow"]
    np.testing.assert_allclose(sol.values, exact_discounted_value(mm1, sol.policy, 1.0), atol=1e-8)
    np.testing.assert_allclose(sol.values, [2 / 3, 4 / 3], atol=1e-8)


def test_zero_cost_is_fixed_immediately(mm1):
    sol = value_iteration(zero_cost(mm1), 0.5)
    assert sol.iterations == 0
    np.testing.assert_array_equal(sol.values, [0.0, 0.0])


def test_exact_values_by_hand(mm1, one_state):
    assert exact_discounted_value(one_state, PolicyDeterministic((0,)), 1.0).tolist() == pytest.approx([2.0])
    np.testing.assert_allclose(exact_discounted_value(mm1, SLOW, 1.0), [2 / 3, 4 / 3], atol=1e-15)
    np.testing.assert_allclose(exact_discounted_value(mm1, FAST, 1.0), [1.0, 2.0], atol=1e-15)


def test_exact_value_randomized_is_between(mm1):
    mix = PolicyRandomized((np.array([1.0]), np.array([0.5, 0.5])))
    v = exact_discounted_value(mm1, mix, 1.0)
    assert np.all(v >= exact_discounted_value(mm1, SLOW, 1.0))
    assert np.all(v <= exact_discounted_value(mm1, FAST, 1.0))


def test_greedy_policy_examples(mm1):
    single = symmetric_two_state()
    assert extract_greedy_policy(single, 1.0, [0.3, 0.1]).choice == (0, 0)
    for alpha in (1.0, 100.0):
        v = value_iteration(mm1, alpha, tol=1e-12).values
        assert extract_greedy_policy(mm1, alpha, v).names(mm1)[1] == "slow"


def test_non_convergence_returns_partial(mm1):
    sol = value_iteration(mm1, 1.0, max_iter=3)
    assert not sol.converged
    assert sol.iterations == 3
    assert sol.residual > sol.tol


def test_warm_start_recertified_by_residual(mm1):
    cold = value_iteration(mm1, 0.1, tol=1e-12)
    warm = value_iteration(mm1, 0.1, tol=1e-12, warm_start=[50.0, 50.0])
    assert not warm.monotone_checked and warm.converged
    np.testing.assert_allclose(warm.values, cold.values, atol=1e-9)


def test_monotonicity_error_is_an_assertion():
    assert issubclass(MonotonicityError, AssertionError)


def test_contraction_factor(mm1):
    assert contraction_factor(mm1, 1.0) == 0.75


@settings(max_examples=60, deadline=None)
@given(seeds, st.sampled_from([0.01, 0.1, 1.0]))
def test_vi_matches_enumeration(seed, alpha):
    m = random_model(np.random.default_rng(seed))
    sol = value_iteration(m, alpha, tol=1e-12)
    assert sol.converged
    np.testing.assert_allclose(sol.values, best_discounted_values(m, alpha), atol=1e-8)
    # the greedy policy is optimal, not merely the values
    np.testing.assert_allclose(exact_discounted_value(m, sol.policy, alpha), sol.values, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_values_nonincreasing_in_alpha(seed):
    m = random_model(np.random.default_rng(seed))
    grid = [0.05, 0.1, 0.5, 1.0, 5.0]
    values = np.array([value_iteration(m, a, tol=1e-12).values for a in grid])
    assert np.all(np.diff(values, axis=0) <= 1e-8)


@settings(max_examples=40, deadline=None)
@given(seeds, st.sampled_from([1e-6, 1e-3, 0.1, 1.0]))
def test_relative_solver_agrees_with_enumeration(seed, alpha):
    m = random_model(np.random.default_rng(seed))
    rel = solve_relative(m, alpha)
    best = best_discounted_values(m, alpha)
    scale = max(1.0, best.max())
    np.testing.assert_allclose(rel.values, best, atol=1e-9 * scale)
    assert rel.h.min() == 0.0 and np.all(rel.h >= 0)


def test_relative_residual_is_bellman_residual(mm1):
    rel = solve_relative(mm1, 0.3)
    W = rel.values
    assert np.abs(bellman_T(mm1, 0.3, W) - W).max() <= 1e-11 + 1e-15 * W.max()
