"""Exact stationary analysis of the sleep-enabled CSMA chain.

The chain over feasible ``(a, x)`` states has product-form stationary law

    pi(a, x) = exp(<a, rho> + <x, r>) / C(r, rho)

where ``r_k = log(R_k / H_k)`` is the transmission aggressiveness and
``rho_k = log(W_k / S_k)`` the waking-up aggressiveness of link ``k``.
Everything here is computed in the log domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, InfeasibleState
from .topology import ConflictGraph, StateIndex, build_state_index, check_state

DEFAULT_HOLDING_RATE = 1000.0  # 1/s, 1 ms mean holding time
DEFAULT_SLEEP_RATE = 1000.0    # 1/s, 1 ms mean awake-to-sleep timer


def _as_vector(value, K, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(K, float(arr))
    if arr.shape != (K,):
        raise ConfigError(f"expected {K} entries, got shape {arr.shape}", field=name)
    return arr


@dataclass(frozen=True)
class AggressivenessProfile:
    """Per-link aggressiveness ``(r, rho)`` with the base rates ``H`` and ``S``."""

    r: np.ndarray
    rho: np.ndarray
    holding_rate: np.ndarray
    sleep_rate: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).ravel()
        K = len(r)
        rho = _as_vector(self.rho, K, "rho")
        H = _as_vector(self.holding_rate, K, "holding_rate")
        S = _as_vector(self.sleep_rate, K, "sleep_rate")
        if not np.all(np.isfinite(H) & (H > 0)):
            raise ConfigError("holding rates must be positive and finite", field="holding_rate")
        if not np.all(np.isfinite(S) & (S > 0)):
            raise ConfigError("sleep rates must be positive and finite", field="sleep_rate")
        for name, arr in (("r", r), ("rho", rho)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name, arr in (("holding_rate", H), ("sleep_rate", S)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def create(cls, r, rho, holding_rate=DEFAULT_HOLDING_RATE, sleep_rate=DEFAULT_SLEEP_RATE):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return cls(r, rho, holding_rate, sleep_rate)

    @classmethod
    def zeros(cls, K, holding_rate=DEFAULT_HOLDING_RATE, sleep_rate=DEFAULT_SLEEP_RATE):
        return cls(np.zeros(K), np.zeros(K), holding_rate, sleep_rate)

    @property
    def link_count(self) -> int:
        return len(self.r)

    @property
    def backoff_rate(self) -> np.ndarray:
        """``R_k = H_k exp(r_k)``."""
        return self.holding_rate * np.exp(self.r)

    @property
    def wake_rate(self) -> np.ndarray:
        """``W_k = S_k exp(rho_k)``."""
        return self.sleep_rate * np.exp(self.rho)

    def with_params(self, r=None, rho=None) -> "AggressivenessProfile":
        return AggressivenessProfile(self.r if r is None else r,
                                     self.rho if rho is None else rho,
                                     self.holding_rate, self.sleep_rate)


@dataclass(frozen=True)
class StationaryDistribution:
    probabilities: np.ndarray
    log_normalizer: float
    index: StateIndex

    def __len__(self):
        return len(self.probabilities)

    def prob(self, state) -> float:
        return float(self.probabilities[self.index.index_of(state)])


def log_weight(state, profile: AggressivenessProfile, graph: ConflictGraph | None = None) -> float:
    """Unnormalized log-probability ``<a, rho> + <x, r>`` of one state.

    With ``graph`` given, the state is first checked for feasibility.
    """
    awake, transmitting = state
    if graph is not None:
        check_state(graph, state)
    elif any(x and not a for a, x in zip(awake, transmitting)):
        raise InfeasibleState("a link transmits while asleep")
    a = np.asarray(awake, dtype=float)
    x = np.asarray(transmitting, dtype=float)
    return float(a @ profile.rho + x @ profile.r)


def log_weights(index: StateIndex, profile: AggressivenessProfile) -> np.ndarray:
    return index.awake @ profile.rho + index.transmitting @ profile.r


def _index_for(graph_or_index) -> StateIndex:
    if isinstance(graph_or_index, StateIndex):
        return graph_or_index
    return build_state_index(graph_or_index)


def stationary_distribution(graph_or_index, profile: AggressivenessProfile) -> StationaryDistribution:
    """Normalized product-form distribution over the state index.

    Accepts either a :class:`ConflictGraph` or a prebuilt :class:`StateIndex`;
    pass the index when calling repeatedly.
    """
    index = _index_for(graph_or_index)
    w = log_weights(index, profile)
    log_c = float(logsumexp(w))
    return StationaryDistribution(np.exp(w - log_c), log_c, index)


def log_normalizer(index: StateIndex, profile: AggressivenessProfile) -> float:
    return float(logsumexp(log_weights(index, profile)))


def throughput(dist, index: StateIndex | None = None) -> np.ndarray:
    """Fraction of time each link is awake and transmitting."""
    p, index = _unpack(dist, index)
    return index.transmitting.T @ p


def awake_fraction(dist, index: StateIndex | None = None) -> np.ndarray:
    """Fraction of time each link is awake."""
    p, index = _unpack(dist, index)
    return index.awake.T @ p


def _unpack(dist, index):
    if isinstance(dist, StationaryDistribution):
        return dist.probabilities, index if index is not None else dist.index
    if index is None:
        raise TypeError("a StateIndex is required with a bare probability vector")
    return np.asarray(dist, dtype=float), index


def transition_pairs(index: StateIndex):
    """Pairs of state indices linked by single-bit moves.

    Returns ``(wake, transmit)``; each is a list, one entry per link, of
    ``(lo, hi)`` index arrays where ``hi`` is ``lo`` with bit ``k`` of ``a``
    (respectively ``x``) switched on.
    """
    K = index.link_count
    nbr = index.graph.neighbor_masks
    wake, transmit = [], []
    for k in range(K):
        bit = 1 << k
        sel = (index.a_masks & bit) == 0
        lo = np.nonzero(sel)[0]
        hi = index.lookup_masks(index.a_masks[lo] | bit, index.x_masks[lo])
        wake.append((lo, hi))
        sel = ((index.a_masks & bit) != 0) & ((index.x_masks & bit) == 0) & ((index.x_masks & nbr[k]) == 0)
        lo = np.nonzero(sel)[0]
        hi = index.lookup_masks(index.a_masks[lo], index.x_masks[lo] | bit)
        transmit.append((lo, hi))
    return wake, transmit


def detailed_balance_residual(dist, graph_or_index, profile: AggressivenessProfile) -> float:
    """Largest relative departure of neighbouring-state ratios from ``e^rho_k`` / ``e^r_k``.

    ``dist`` may be a :class:`StationaryDistribution` or any nonnegative vector
    aligned with the index (it need not be normalized). Zero entries give an
    infinite residual.
    """
    index = dist.index if isinstance(dist, StationaryDistribution) else _index_for(graph_or_index)
    p = dist.probabilities if isinstance(dist, StationaryDistribution) else np.asarray(dist, float)
    wake, transmit = transition_pairs(index)
    worst = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(index.link_count):
            for (lo, hi), target in ((wake[k], profile.rho[k]), (transmit[k], profile.r[k])):
                if len(lo) == 0:
                    continue
                rel = np.abs(p[hi] / (p[lo] * np.exp(target)) - 1.0)
                rel = np.where(np.isnan(rel), np.inf, rel)
                worst = max(worst, float(np.max(rel)))
    return worst
