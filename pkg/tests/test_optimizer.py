import math

import numpy as np
import pytest

from oracles import central_gradient, objective_by_enumeration, single_link_optimum
from sleepcsma.analytic import AggressivenessProfile, stationary_distribution
from sleepcsma.errors import DomainError
from sleepcsma.optimizer import (
    OptimizerSettings,
    SolveStatus,
    gradient,
    kl_divergence,
    objective,
    solve,
    solve_adaptive_csma,
)
from sleepcsma.regions import TrafficSpec
from sleepcsma.topology import ConflictGraph, build_state_index


def test_single_link_optimum():
    res = solve(ConflictGraph.empty(1), TrafficSpec.from_awake_target([0.5], 0.75))
    r, rho = single_link_optimum(0.5, 0.75)
    assert res.status is SolveStatus.CONVERGED
    assert res.r_star[0] == pytest.approx(r, abs=1e-6)
    assert res.rho_star[0] == pytest.approx(rho, abs=1e-6)
    assert res.kkt_residual <= 1e-8


@pytest.mark.parametrize("lam,f", [(0.1, 0.9), (0.4, 0.5), (0.05, 0.2)])
def test_single_link_closed_form_family(lam, f):
    res = solve(ConflictGraph.empty(1), TrafficSpec.from_awake_target([lam], f))
    r, rho = single_link_optimum(lam, f)
    assert res.r_star[0] == pytest.approx(r, abs=1e-6)
    assert res.rho_star[0] == pytest.approx(rho, abs=1e-6)


def test_two_link_symmetric_optimum_matches_marginals():
    g = ConflictGraph.complete(2)
    traffic = TrafficSpec.from_awake_target([0.3, 0.2], [0.6, 0.7])
    res = solve(g, traffic)
    assert res.converged
    dist = stationary_distribution(g, res.profile())
    idx = dist.index
    np.testing.assert_allclose(idx.transmitting.T @ dist.probabilities, traffic.lam, atol=1e-8)
    np.testing.assert_allclose(idx.awake.T @ dist.probabilities, traffic.awake_target, atol=1e-8)


def test_objective_matches_enumeration():
    g = ConflictGraph.from_edges(3, [(0, 1), (1, 2)])
    traffic = TrafficSpec.from_awake_target([0.2, 0.1, 0.25], [0.5, 0.6, 0.4])
    theta = np.array([0.3, -0.2, 1.1, 0.4, 0.0, -0.5])
    value = objective(g, traffic, (theta[:3], theta[3:]))
    ref = objective_by_enumeration(3, [(0, 1), (1, 2)], traffic.lam, traffic.awake_target, theta)
    assert value == pytest.approx(ref, abs=1e-12)


def test_gradient_matches_finite_differences():
    edges = [(0, 1)]
    g = ConflictGraph.from_edges(2, edges)
    traffic = TrafficSpec.from_awake_target([0.3, 0.2], [0.5, 0.8])
    theta = np.array([0.5, -1.0, 0.2, 1.0])
    gr, grho = gradient(g, traffic, (theta[:2], theta[2:]))
    fd = central_gradient(lambda t: objective_by_enumeration(2, edges, traffic.lam, traffic.awake_target, t), theta)
    np.testing.assert_allclose(np.concatenate([gr, grho]), fd, atol=1e-8)


def test_boundary_input_diverges():
    g = ConflictGraph.complete(2)
    traffic = TrafficSpec.from_awake_target([0.5, 0.5], [1.0, 1.0])
    res = solve(g, traffic, OptimizerSettings(max_iterations=20_000))
    assert res.status is SolveStatus.DIVERGED_NEAR_BOUNDARY


def test_infeasible_input_hits_norm_cap():
    g = ConflictGraph.complete(2)
    traffic = TrafficSpec.from_awake_target([0.6, 0.6], [0.9, 0.9])
    res = solve(g, traffic)
    assert res.status is SolveStatus.DIVERGED_NEAR_BOUNDARY
    assert np.max(np.abs(np.concatenate([res.r_star, res.rho_star]))) > 50


def test_budget_exhaustion_far_from_boundary():
    traffic = TrafficSpec.from_awake_target([0.3, 0.3], [0.6, 0.6])
    res = solve(ConflictGraph.complete(2), traffic, OptimizerSettings(max_iterations=2))
    assert res.status is SolveStatus.MAX_ITERATIONS
    assert res.feasibility_margin > 1e-3


def test_fixed_r_only_moves_rho():
    idx = build_state_index(ConflictGraph.complete(2))
    traffic = TrafficSpec.from_awake_target([0.3, 0.3], [0.6, 0.6])
    res = solve(idx, traffic, fixed_r=np.array([1.0, 1.0]))
    np.testing.assert_array_equal(res.r_star, [1.0, 1.0])
    dist = stationary_distribution(idx, res.profile())
    np.testing.assert_allclose(idx.awake.T @ dist.probabilities, [0.6, 0.6], atol=1e-8)


def test_adaptive_csma_closed_form_on_complete_graph():
    # all-awake complete graph: s_k = e^r / (1 + K e^r) = lam  =>  r = log(lam / (1 - K lam))
    K, lam = 4, 0.2
    res = solve_adaptive_csma(ConflictGraph.complete(K), np.full(K, lam))
    np.testing.assert_allclose(res.r_star, math.log(lam / (1 - K * lam)), atol=1e-7)
    assert np.all(np.isinf(res.rho_star))


def test_kl_divergence():
    g = ConflictGraph.complete(2)
    dist = stationary_distribution(g, AggressivenessProfile.zeros(2))
    assert kl_divergence(dist.probabilities, dist) == pytest.approx(0.0, abs=1e-15)
    p = np.zeros(8)
    p[0] = 1.0
    assert kl_divergence(p, dist) == pytest.approx(math.log(8))
    q = dist.probabilities.copy()
    q[0] = 0.0
    degenerate = type(dist)(q / q.sum(), dist.log_normalizer, dist.index)
    with pytest.raises(DomainError):
        kl_divergence(p, degenerate)


def test_settings_validation():
    with pytest.raises(ValueError):
        OptimizerSettings(step_size=0)
    with pytest.raises(ValueError):
        OptimizerSettings(gradient_tolerance=-1)
