import itertools

import numpy as np
import pytest
from conftest import SCALAR_PBAR

from eventsched.estimator import CovMaps
from eventsched.lowerbound import (
    InfeasibleRateError,
    LowerBoundSolution,
    _SensorTables,
    gap_report,
    holding_covariances,
    holding_covariances_closed_form,
    lower_bound,
    per_sensor_subproblem,
    queue_heuristic_from_rates,
    recurrence_value,
    subproblem_cost,
)


def test_holding_all_ones_gives_h_iterates(example_filters):
    f = example_filters[0]
    hc = holding_covariances(f, np.ones(6))
    for P, H in zip(hc.mats, CovMaps(f).h_iterates(6)):
        np.testing.assert_allclose(P, H, rtol=1e-12)


def test_holding_zero_first_beta(example_filters):
    f = example_filters[1]
    hc = holding_covariances(f, [0.0, 0.7, 0.2])
    np.testing.assert_allclose(hc.mats[0], f.P_bar)
    np.testing.assert_allclose(hc.mats[1], f.P_bar)


def test_holding_scalar_value(scalar_filter):
    hc = holding_covariances(scalar_filter, [0.5])
    assert hc.alpha_hats[0] == pytest.approx(0.25)
    assert hc.mats[1][0, 0] == pytest.approx(0.75 * SCALAR_PBAR + 0.25 * (4 * SCALAR_PBAR + 1))
    assert hc.mats[1][0, 0] == pytest.approx(1.66578, abs=1e-5)


def test_holding_rejects_out_of_range(scalar_filter):
    with pytest.raises(ValueError):
        holding_covariances(scalar_filter, [1.2])


@pytest.mark.parametrize("which", [0, 1])
def test_recursion_matches_closed_form(example_filters, which):
    f = example_filters[which]
    rng = np.random.default_rng(which)
    for _ in range(20):
        hc = holding_covariances(f, rng.random(10))
        closed = holding_covariances_closed_form(f, hc.alpha_hats)
        for P, Q in zip(hc.mats, closed):
            assert np.linalg.norm(P - Q) <= 1e-8 * max(1.0, np.linalg.norm(P))


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.8, 1.0])
def test_holding_traces_nondecreasing_for_constant_beta(example_filters, beta):
    for f in example_filters:
        tr = holding_covariances(f, np.full(10, beta)).traces()
        assert np.all(np.diff(tr) >= -1e-9)


def test_vectorized_traces_match_matrix_recursion(example_filters):
    rng = np.random.default_rng(3)
    for f in example_filters:
        tables = _SensorTables.build(f, 12)
        betas = rng.random((5, 12))
        betas[1, 4] = 0.0
        fast = tables.holding_traces(betas)
        for b, row in zip(betas, fast):
            tr = holding_covariances(f, b).traces()[1:]
            # entries past a zero beta carry zero weight, so only compare the live prefix
            live = np.cumprod(b) > 0
            live = np.concatenate([[True], live[:-1]])
            np.testing.assert_allclose(row[live], tr[live], rtol=1e-10)


def test_full_rate_costs_p_bar(example_filters):
    for f in example_filters:
        betas, J = per_sensor_subproblem(f, 1.0, ell_max=5)
        assert np.all(betas == 0)
        assert J == pytest.approx(np.trace(f.P_bar))


def test_half_rate_beats_period_two(example_filters):
    for f in example_filters:
        H = CovMaps(f).h_iterates(1)
        period_two = 0.5 * (np.trace(H[0]) + np.trace(H[1]))
        assert subproblem_cost(f, 0.5, [1.0, 0.0]) == pytest.approx(period_two)
        _, J = per_sensor_subproblem(f, 0.5, ell_max=10)
        assert J <= period_two + 1e-9


def test_scalar_solver_beats_grid_scan(scalar_filter):
    rho, L = 0.4, 3
    betas, J = per_sensor_subproblem(scalar_filter, rho, ell_max=L)
    assert recurrence_value(rho, betas) == pytest.approx(1.0, abs=1e-9)
    assert J == pytest.approx(subproblem_cost(scalar_filter, rho, betas), rel=1e-9)
    # grid oracle on the truncated problem: last beta is the forced transmission
    tables = _SensorTables.build(scalar_filter, L)
    g = np.linspace(0, 1, 50)
    pts = np.array([(b0, b1, 0.0) for b0, b1 in itertools.product(g, g)])
    num, den = tables.cost_terms(pts)
    ok = np.abs(rho * den - 1.0) <= 1e-3
    assert ok.sum() > 0
    # each grid point is scored at its own renewal rate so slack in the constraint gives no free lunch
    assert J <= np.min(num[ok] / den[ok]) + 1e-9


def test_infeasible_rate(scalar_filter):
    with pytest.raises(InfeasibleRateError, match="ell_max"):
        per_sensor_subproblem(scalar_filter, 0.05, ell_max=10)
    with pytest.raises(ValueError):
        per_sensor_subproblem(scalar_filter, 0.0)


def test_single_sensor_bound(example_filters):
    sol = lower_bound(example_filters[:1], ell_max=5, rate_grid_size=10)
    assert sol.rates.tolist() == [1.0]
    assert sol.total == pytest.approx(np.trace(example_filters[0].P_bar))
    assert queue_heuristic_from_rates(sol) == (0,)


def _solution(rates):
    n = len(rates)
    return LowerBoundSolution(np.array(rates), np.zeros((n, 2)), np.zeros(n), 0.0, 2, 10)


def test_queue_heuristic():
    assert queue_heuristic_from_rates(_solution([0.3, 0.7])) == (0, 1)
    assert queue_heuristic_from_rates(_solution([0.7, 0.3])) == (1, 0)
    assert queue_heuristic_from_rates(_solution([0.5, 0.5])) == (0, 1)


def test_solution_check_flags_bad_rates():
    sol = LowerBoundSolution(np.array([0.6, 0.6]), np.zeros((2, 2)), np.zeros(2), 0.0, 2, 10)
    with pytest.raises(AssertionError):
        sol.check()


def test_two_sensor_bound_invariants(example_filters):
    sol = lower_bound(example_filters, ell_max=10, rate_grid_size=40)
    sol.check()
    assert sol.rates.sum() <= 1 + 1e-9
    for f, rho, b, J in zip(example_filters, sol.rates, sol.betas, sol.sensor_costs):
        assert subproblem_cost(f, rho, b) == pytest.approx(J, rel=1e-8)
    # the bound can never exceed the cost of the best periodic two-cycle
    assert sol.total >= np.trace(example_filters[0].P_bar) + np.trace(example_filters[1].P_bar)


@pytest.mark.slow
def test_deeper_truncation_never_hurts(example_filters):
    shallow = lower_bound(example_filters, ell_max=10, rate_grid_size=40)
    deep = lower_bound(example_filters, ell_max=20, rate_grid_size=40)
    assert deep.total <= shallow.total + 1e-6


def test_gap_report():
    rows = gap_report({"greedy": 50.0, "mdp": 48.0}, 45.0)
    assert rows[0] == {"schedule": "greedy", "J": 50.0, "LB": 45.0, "gap_upper_bound": 5.0}
    assert rows[1]["gap_upper_bound"] == 3.0
