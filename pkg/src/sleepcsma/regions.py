"""Capacity region, awake region and strict-feasibility certificates.

An arrival vector ``lam`` is feasible when it is the vector of "awake and
transmitting" marginals of some probability distribution ``p`` over the
chain's states; an awake target ``f`` is then feasible when ``lam <= f <= 1``.
The optimum aggressiveness is finite exactly when some such ``p`` can be
chosen strictly positive, which :func:`feasibility_margin` decides with a
linear program maximizing the smallest entry of ``p``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import LPNumericalFailure, RangeError
from .topology import ConflictGraph, StateIndex, build_state_index

BOUNDARY_TOL = 1e-9
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class TrafficSpec:
    """Normalized arrival rates, PDT slack and the resulting awake target ``f = lam + omega``."""

    lam: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float)).copy()
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim == 0:
            omega = np.full(lam.shape, float(omega))
        omega = omega.copy()
        if omega.shape != lam.shape:
            raise RangeError(f"omega has shape {omega.shape}, lambda has {lam.shape}")
        if np.any(lam < 0) or np.any(lam > 1):
            raise RangeError("arrival rates must lie in [0, 1]")
        if np.any(omega < 0):
            raise RangeError("PDT parameters must be nonnegative")
        if np.any(lam + omega > 1 + 1e-12):
            raise RangeError("lambda + omega exceeds 1")
        lam.setflags(write=False)
        omega.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def from_awake_target(cls, lam, f) -> "TrafficSpec":
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        f = np.asarray(f, dtype=float)
        if f.ndim == 0:
            f = np.full(lam.shape, float(f))
        return cls(lam, f - lam)

    @property
    def awake_target(self) -> np.ndarray:
        return np.minimum(self.lam + self.omega, 1.0)

    @property
    def link_count(self) -> int:
        return len(self.lam)

    def strictly_feasible_slack(self) -> np.ndarray:
        """Per link, whether ``0 < omega_k < 1 - lam_k``."""
        return (self.omega > 0) & (self.lam + self.omega < 1)


@dataclass(frozen=True)
class AwakeRegion:
    """The box ``[lam_k, 1]`` of admissible awake fractions."""

    lower: np.ndarray
    upper: np.ndarray

    def classify(self, f) -> str:
        """``"interior"``, ``"boundary"`` or ``"outside"``."""
        f = np.asarray(f, dtype=float)
        if np.any(f < self.lower) or np.any(f > self.upper):
            return "outside"
        if np.all((f > self.lower) & (f < self.upper)):
            return "interior"
        return "boundary"

    def contains(self, f, strict=False) -> bool:
        kind = self.classify(f)
        return kind == "interior" if strict else kind != "outside"

    def intervals(self) -> list[tuple[float, float]]:
        return [(float(lo), float(hi)) for lo, hi in zip(self.lower, self.upper)]


def awake_region_bounds(lam) -> AwakeRegion:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam < 0) or np.any(lam > 1):
        raise RangeError("arrival rates must lie in [0, 1]")
    return AwakeRegion(lam.copy(), np.ones_like(lam))


def pdt_to_awake_target(lam, omega) -> tuple[np.ndarray, np.ndarray]:
    """Awake target ``lam + omega`` and, per link, whether it is strictly inside ``(lam, 1)``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    omega = np.broadcast_to(np.asarray(omega, dtype=float), lam.shape)
    if np.any(omega < 0):
        raise RangeError("PDT parameters must be nonnegative")
    f = lam + omega
    if np.any(f > 1 + 1e-12):
        raise RangeError("lambda + omega exceeds 1")
    f = np.minimum(f, 1.0)
    return f, (f > lam) & (f < 1)


class Verdict(str, enum.Enum):
    STRICTLY_FEASIBLE = "STRICTLY_FEASIBLE"
    BOUNDARY = "BOUNDARY"
    INFEASIBLE = "INFEASIBLE"


@dataclass(frozen=True)
class JointDistribution:
    """A distribution over the state index together with its induced marginals."""

    p: np.ndarray
    index: StateIndex

    @property
    def lam(self) -> np.ndarray:
        return self.index.transmitting.T @ self.p

    @property
    def f(self) -> np.ndarray:
        return self.index.awake.T @ self.p

    @property
    def alpha(self) -> np.ndarray:
        """Mass of each configuration ``a``, indexed by its mask."""
        return np.bincount(self.index.a_masks, weights=self.p, minlength=2**self.index.link_count)


@dataclass(frozen=True)
class FeasibilityReport:
    margin: float
    witness: JointDistribution | None
    verdict: Verdict


def _index(graph_or_index) -> StateIndex:
    return graph_or_index if isinstance(graph_or_index, StateIndex) else build_state_index(graph_or_index)


def feasibility_margin(graph_or_index, lam, awake_target=None) -> FeasibilityReport:
    """Largest ``eps`` such that a distribution with all entries ``>= eps`` matches the marginals.

    Variables are ``(p, eps)``; constraints ``p - eps >= 0``, ``sum p = 1``,
    ``X^T p = lam`` and, when given, ``A^T p = awake_target``.
    """
    index = _index(graph_or_index)
    n, K = len(index), index.link_count
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    rows = [sparse.csr_matrix(np.ones((1, n))), sparse.csr_matrix(index.transmitting.T)]
    rhs = [np.ones(1), lam]
    if awake_target is not None:
        rows.append(sparse.csr_matrix(index.awake.T))
        rhs.append(np.atleast_1d(np.asarray(awake_target, dtype=float)))
    A_eq = sparse.hstack([sparse.vstack(rows), sparse.csr_matrix((sum(len(b) for b in rhs), 1))]).tocsr()
    b_eq = np.concatenate(rhs)
    A_ub = sparse.hstack([-sparse.identity(n), np.ones((n, 1))]).tocsr()
    b_ub = np.zeros(n)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * n + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return FeasibilityReport(0.0, None, Verdict.INFEASIBLE)
    if res.status != 0:
        raise LPNumericalFailure(f"linprog status {res.status}: {res.message}")
    p = np.clip(res.x[:n], 0.0, None)
    p /= p.sum()
    # report only the margin the cleaned witness actually certifies
    eps = min(float(res.x[-1]), float(p.min()))
    witness = JointDistribution(p, index)
    residual = np.max(np.abs(A_eq[:, :n] @ p - b_eq))
    if residual > 1e-7:
        raise LPNumericalFailure(f"witness violates the marginal constraints by {residual:.2e}")
    if eps > BOUNDARY_TOL:
        return FeasibilityReport(eps, witness, Verdict.STRICTLY_FEASIBLE)
    return FeasibilityReport(0.0, witness, Verdict.BOUNDARY)


def in_capacity_region(graph_or_index, lam) -> bool:
    return feasibility_margin(graph_or_index, lam).verdict is not Verdict.INFEASIBLE


def capacity_boundary_point(graph_or_index, direction) -> np.ndarray:
    """The point of the capacity region's boundary along a nonnegative ray."""
    index = _index(graph_or_index)
    n = len(index)
    d = np.asarray(direction, dtype=float)
    # variables (p, t): maximize t with X^T p = t d, sum p = 1
    A_eq = sparse.vstack([
        sparse.hstack([sparse.csr_matrix(index.transmitting.T), sparse.csr_matrix(-d[:, None])]),
        sparse.hstack([sparse.csr_matrix(np.ones((1, n))), sparse.csr_matrix((1, 1))]),
    ]).tocsr()
    b_eq = np.concatenate([np.zeros(len(d)), [1.0]])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * (n + 1), method="highs")
    if res.status != 0:
        raise LPNumericalFailure(f"linprog status {res.status}: {res.message}")
    return res.x[-1] * d


def capacity_boundary(graph_or_index, samples: int = 33) -> np.ndarray:
    """Boundary samples of the capacity region for ``K = 2`` or ``K = 3``.

    Rays are spread uniformly over the positive quadrant (``K = 2``) or a
    triangular grid on the simplex (``K = 3``).
    """
    index = _index(graph_or_index)
    K = index.link_count
    if K == 1:
        return np.array([[capacity_boundary_point(index, [1.0])[0]]])
    if K == 2:
        angles = np.linspace(0.0, np.pi / 2, samples)
        dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    elif K == 3:
        m = max(2, int(round(np.sqrt(2 * samples))))
        dirs = np.array([(i, j, m - i - j) for i in range(m + 1) for j in range(m + 1 - i)], float) / m
    else:
        raise ValueError("boundary sampling supports at most 3 links")
    return np.array([capacity_boundary_point(index, d) for d in dirs])


def awake_region_corners(lam) -> np.ndarray:
    """Corners of the awake-region box, in binary-counting order."""
    box = awake_region_bounds(lam)
    K = len(box.lower)
    return np.array([[box.upper[k] if (m >> k) & 1 else box.lower[k] for k in range(K)]
                     for m in range(2**K)])
