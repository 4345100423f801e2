"""Offline computation of the optimal aggressiveness.

Minimizes the convex log-partition objective

    F(r, rho) = -<lambda, r> - <f, rho> + log C(r, rho)

whose gradient is ``(s(r, rho) - lambda, f_hat(r, rho) - f)``. A zero
gradient is the marginal-matching condition: the chain serves every link at
its arrival rate while keeping it awake exactly ``f_k`` of the time.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .analytic import AggressivenessProfile, StationaryDistribution, stationary_distribution
from .errors import DomainError
from .regions import TrafficSpec, feasibility_margin
from .topology import StateIndex, build_state_index


class SolveStatus(str, enum.Enum):
    CONVERGED = "CONVERGED"
    DIVERGED_NEAR_BOUNDARY = "DIVERGED_NEAR_BOUNDARY"
    MAX_ITERATIONS = "MAX_ITERATIONS"


@dataclass(frozen=True)
class OptimizerSettings:
    step_size: float = 1.0
    max_iterations: int = 100_000
    gradient_tolerance: float = 1e-9
    divergence_norm_cap: float = 50.0
    armijo: float = 1e-4
    #: An unconverged solve whose certified distance to the region boundary
    #: is below this is reported as diverging.
    boundary_margin: float = 1e-3

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not self.divergence_norm_cap > 0:
            raise ValueError("divergence_norm_cap must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


@dataclass(frozen=True)
class OptimizationResult:
    r_star: np.ndarray
    rho_star: np.ndarray
    kkt_residual: float
    objective_value: float
    status: SolveStatus
    iterations: int
    feasibility_margin: float | None = None

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED

    def profile(self, holding_rate=1000.0, sleep_rate=1000.0) -> AggressivenessProfile:
        return AggressivenessProfile(self.r_star, self.rho_star, holding_rate, sleep_rate)


def _index(graph_or_index) -> StateIndex:
    return graph_or_index if isinstance(graph_or_index, StateIndex) else build_state_index(graph_or_index)


def _profile(profile_or_params, K):
    if isinstance(profile_or_params, AggressivenessProfile):
        return profile_or_params
    r, rho = profile_or_params
    return AggressivenessProfile.create(np.asarray(r, float).reshape(K), rho)


def objective(graph_or_index, traffic: TrafficSpec, profile) -> float:
    """``F(r, rho)``; ``profile`` is an :class:`AggressivenessProfile` or an ``(r, rho)`` pair."""
    index = _index(graph_or_index)
    prof = _profile(profile, index.link_count)
    dist = stationary_distribution(index, prof)
    return float(-traffic.lam @ prof.r - traffic.awake_target @ prof.rho + dist.log_normalizer)


def gradient(graph_or_index, traffic: TrafficSpec, profile) -> tuple[np.ndarray, np.ndarray]:
    """``(dF/dr, dF/drho) = (s - lambda, f_hat - f)``."""
    index = _index(graph_or_index)
    prof = _profile(profile, index.link_count)
    p = stationary_distribution(index, prof).probabilities
    return index.transmitting.T @ p - traffic.lam, index.awake.T @ p - traffic.awake_target


class _Objective:
    """F and its gradient on a packed parameter vector ``theta = (r, rho)``."""

    def __init__(self, targets: np.ndarray, design: np.ndarray):
        self.targets = targets
        self.design = design

    def __call__(self, theta):
        w = self.design @ theta
        m = np.max(w)
        e = np.exp(w - m)
        z = e.sum()
        log_c = m + np.log(z)
        value = -self.targets @ theta + log_c
        grad = self.design.T @ (e / z) - self.targets
        return value, grad


def _descend(fun, theta0, free, settings: OptimizerSettings):
    theta = theta0.copy()
    value, grad = fun(theta)
    grad = np.where(free, grad, 0.0)
    step = settings.step_size
    for it in range(settings.max_iterations + 1):
        residual = float(np.max(np.abs(grad))) if grad.size else 0.0
        if residual <= settings.gradient_tolerance:
            return theta, value, residual, SolveStatus.CONVERGED, it
        if np.max(np.abs(theta)) > settings.divergence_norm_cap:
            return theta, value, residual, SolveStatus.DIVERGED_NEAR_BOUNDARY, it
        if it == settings.max_iterations:
            break
        gg = grad @ grad
        # Armijo backtracking; a successful step lets the next trial grow.
        t = min(2.0 * step, settings.step_size) if it else settings.step_size
        t = max(t, step)
        while True:
            trial = theta - t * grad
            new_value, new_grad = fun(trial)
            if new_value <= value - settings.armijo * t * gg or t < 1e-16:
                break
            # Near the optimum F changes below round-off; fall back to gradient decrease.
            if (abs(new_value - value) <= 1e-14 * max(1.0, abs(value))
                    and np.max(np.abs(np.where(free, new_grad, 0.0))) < residual):
                break
            t *= 0.5
        step = t
        theta, value = trial, new_value
        grad = np.where(free, new_grad, 0.0)
    return theta, value, residual, SolveStatus.MAX_ITERATIONS, settings.max_iterations


def solve(graph_or_index, traffic: TrafficSpec, settings: OptimizerSettings | None = None,
          initial=None, fixed_r=None) -> OptimizationResult:
    """Gradient descent with backtracking on ``F`` from ``(0, 0)``.

    The run stops as ``DIVERGED_NEAR_BOUNDARY`` once ``max |theta|`` passes
    ``divergence_norm_cap``, or when the iteration budget runs out on an
    input whose feasibility margin is below ``boundary_margin``.

    ``fixed_r`` pins the transmission aggressiveness and optimizes ``rho``
    only (used for capped-aggressiveness computations).
    """
    settings = settings or OptimizerSettings()
    index = _index(graph_or_index)
    K = index.link_count
    design = np.hstack([index.transmitting, index.awake])
    targets = np.concatenate([traffic.lam, traffic.awake_target])
    if initial is None:
        theta0 = np.zeros(2 * K)
    else:
        theta0 = np.concatenate([np.asarray(initial[0], float), np.asarray(initial[1], float)])
    free = np.ones(2 * K, dtype=bool)
    if fixed_r is not None:
        theta0[:K] = fixed_r
        free[:K] = False
    fun = _Objective(targets, design)
    theta, value, residual, status, iters = _descend(fun, theta0, free, settings)
    margin = None
    if status is SolveStatus.MAX_ITERATIONS and fixed_r is None:
        # Close to the boundary the optimum escapes to infinity (or sits so
        # far out that descent cannot reach it); certify closeness with the LP.
        margin = feasibility_margin(index, traffic.lam, traffic.awake_target).margin
        if margin < settings.boundary_margin:
            status = SolveStatus.DIVERGED_NEAR_BOUNDARY
    return OptimizationResult(theta[:K].copy(), theta[K:].copy(), residual, float(value),
                              status, iters, margin)


def solve_adaptive_csma(graph_or_index, lam, settings: OptimizerSettings | None = None) -> OptimizationResult:
    """Optimal ``r`` for the always-awake scheme.

    Restricting the chain to ``a = (1, ..., 1)`` gives the classical CSMA
    chain, the ``f -> 1`` limit of the sleep-enabled one. ``rho_star`` is
    reported as ``+inf``.
    """
    settings = settings or OptimizerSettings()
    index = _index(graph_or_index)
    K = index.link_count
    full = (1 << K) - 1
    rows = index.a_masks == full
    design = index.transmitting[rows]
    lam = np.asarray(lam, float)
    fun = _Objective(lam, design)
    theta, value, residual, status, iters = _descend(fun, np.zeros(K), np.ones(K, bool), settings)
    return OptimizationResult(theta, np.full(K, np.inf), residual, float(value), status, iters)


def kl_divergence(p, dist: StationaryDistribution) -> float:
    """``D(p || pi)`` with ``0 log(0/q) = 0``."""
    p = np.asarray(getattr(p, "p", p), dtype=float)
    q = dist.probabilities
    if p.shape != q.shape:
        raise ValueError(f"distribution sizes differ: {p.shape} vs {q.shape}")
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise DomainError("p has mass where the stationary distribution vanishes")
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))
