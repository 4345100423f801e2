"""Invariants checked over generated inputs."""
import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from oracles import central_gradient, generator_stationary, objective_by_enumeration
from sleepcsma.adaptation import AdaptationConfig, DynamicPdt, FrameMeasurement, dynamic_pdt, update_aggressiveness
from sleepcsma.analytic import (
    AggressivenessProfile,
    awake_fraction,
    detailed_balance_residual,
    stationary_distribution,
    throughput,
)
from sleepcsma.optimizer import OptimizerSettings, gradient, solve
from sleepcsma.regions import TrafficSpec, feasibility_margin
from sleepcsma.slotted import contention_window, r_max_for_window
from sleepcsma.topology import ConflictGraph, bits_to_mask, build_state_index


@st.composite
def graphs(draw, max_links=3):
    K = draw(st.integers(1, max_links))
    pairs = list(itertools.combinations(range(K), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return K, chosen


def params(K, lo=-2.0, hi=2.0):
    return st.lists(st.floats(lo, hi), min_size=2 * K, max_size=2 * K).map(np.array)


@st.composite
def instances(draw, lo=-2.0, hi=2.0):
    K, edges = draw(graphs())
    theta = draw(params(K, lo, hi))
    return K, edges, theta[:K], theta[K:]


def aligned(index, oracle_pi, oracle_states):
    where = {(bits_to_mask(a), bits_to_mask(x)): p for (a, x), p in zip(oracle_states, oracle_pi)}
    return np.array([where[(int(a), int(x))] for a, x in zip(index.a_masks, index.x_masks)])


@given(instances())
@settings(max_examples=40, deadline=None)
def test_product_form_solves_the_generator(case):
    K, edges, r, rho = case
    g = ConflictGraph.from_edges(K, edges)
    dist = stationary_distribution(g, AggressivenessProfile.create(r, rho))
    pi, states = generator_stationary(K, edges, r, rho, H=1000.0, S=1000.0)
    np.testing.assert_allclose(dist.probabilities, aligned(dist.index, pi, states), atol=1e-9)


@given(instances(), st.floats(10, 5000), st.floats(10, 5000))
@settings(max_examples=40, deadline=None)
def test_detailed_balance(case, H, S):
    K, edges, r, rho = case
    g = ConflictGraph.from_edges(K, edges)
    prof = AggressivenessProfile.create(r, rho, holding_rate=H, sleep_rate=S)
    dist = stationary_distribution(g, prof)
    assert detailed_balance_residual(dist, g, prof) < 1e-12


@given(instances())
@settings(max_examples=40, deadline=None)
def test_marginals_are_ordered(case):
    K, edges, r, rho = case
    dist = stationary_distribution(ConflictGraph.from_edges(K, edges), AggressivenessProfile.create(r, rho))
    s, f = throughput(dist), awake_fraction(dist)
    assert np.all(s > 0) and np.all(s < f) and np.all(f < 1)
    assert abs(dist.probabilities.sum() - 1) < 1e-12


@given(instances(), st.integers(0, 2), st.floats(0.1, 2.0))
@settings(max_examples=40, deadline=None)
def test_own_throughput_grows_with_aggressiveness(case, link, bump):
    K, edges, r, rho = case
    assume(link < K)
    g = ConflictGraph.from_edges(K, edges)
    base = throughput(stationary_distribution(g, AggressivenessProfile.create(r, rho)))[link]
    r2 = r.copy()
    r2[link] += bump
    assert throughput(stationary_distribution(g, AggressivenessProfile.create(r2, rho)))[link] > base


@given(instances(), st.data())
@settings(max_examples=100, deadline=None)
def test_gradient_against_finite_differences(case, data):
    K, edges, r, rho = case
    lam = np.array(data.draw(st.lists(st.floats(0.01, 0.4), min_size=K, max_size=K)))
    slack = np.array(data.draw(st.lists(st.floats(0.01, 0.5), min_size=K, max_size=K)))
    traffic = TrafficSpec(lam, slack)
    g = ConflictGraph.from_edges(K, edges)
    gr, grho = gradient(g, traffic, (r, rho))
    theta = np.concatenate([r, rho])
    fd = central_gradient(lambda t: objective_by_enumeration(K, edges, lam, traffic.awake_target, t), theta)
    analytic = np.concatenate([gr, grho])
    assert np.linalg.norm(analytic - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-3)


@given(instances(lo=-1.5, hi=1.5))
@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_optimizer_recovers_generating_parameters(case):
    K, edges, r, rho = case
    g = ConflictGraph.from_edges(K, edges)
    dist = stationary_distribution(g, AggressivenessProfile.create(r, rho))
    traffic = TrafficSpec.from_awake_target(throughput(dist), awake_fraction(dist))
    res = solve(g, traffic, OptimizerSettings(gradient_tolerance=1e-10))
    assert res.converged
    np.testing.assert_allclose(res.r_star, r, atol=1e-6)
    np.testing.assert_allclose(res.rho_star, rho, atol=1e-6)


@given(instances(lo=-1.5, hi=1.5))
@settings(max_examples=25, deadline=None)
def test_feasibility_witness_meets_its_constraints(case):
    K, edges, r, rho = case
    index = build_state_index(ConflictGraph.from_edges(K, edges))
    dist = stationary_distribution(index, AggressivenessProfile.create(r, rho))
    lam, f = throughput(dist), awake_fraction(dist)
    rep = feasibility_margin(index, lam, f)
    p = rep.witness.p
    assert rep.margin >= dist.probabilities.min() - 1e-7
    assert np.all(p >= rep.margin - 1e-9)
    np.testing.assert_allclose(rep.witness.lam, lam, atol=1e-7)
    np.testing.assert_allclose(rep.witness.f, f, atol=1e-7)
    assert p.sum() == pytest.approx(1.0)


@given(st.floats(-3, 6), st.floats(10, 5000), st.floats(1e-6, 2e-5))
def test_window_and_cap_invert(r, H, slot):
    assert r_max_for_window(contention_window(r, H, slot), H, slot) == pytest.approx(r, abs=1e-9)


@given(st.floats(0.01, 0.3), st.floats(0.01, 0.95), st.floats(0.0, 1e6), st.floats(0.01, 1e3))
def test_dynamic_pdt_stays_in_range(lam, where, q, q0):
    hi = (1 - lam) * 0.99
    lo = hi * where
    omega = dynamic_pdt([q], [lam], DynamicPdt(lo, hi, q0))[0]
    assert lo - 1e-12 <= omega <= hi + 1e-12
    assert lam + omega < 1


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(0.0, 0.5), st.floats(0.0, 0.4),
       st.floats(1e-3, 1.0))
def test_matching_measurement_is_a_fixed_point(theta, lam, omega, step):
    meas = FrameMeasurement(np.full(2, lam), np.full(2, lam + omega), np.zeros(2))
    r, rho = update_aggressiveness(theta[:2], theta[2:], meas, np.full(2, lam), np.full(2, omega),
                                   AdaptationConfig(step_size=step))
    np.testing.assert_allclose(r, theta[:2], atol=1e-12)
    np.testing.assert_allclose(rho, theta[2:], atol=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.5), st.floats(1e-3, 1.0))
def test_update_direction(s_hat, f_hat, lam, step):
    meas = FrameMeasurement(np.array([s_hat]), np.array([f_hat]), np.zeros(1))
    r, rho = update_aggressiveness([0.0], [0.0], meas, [lam], [0.2], AdaptationConfig(step_size=step))
    assert r[0] == pytest.approx(step * (lam - s_hat))
    assert rho[0] == pytest.approx(step * (lam + 0.2 - f_hat))
