"""Conflict graphs and the state space of the sleep-enabled CSMA chain.

A state of the network is a pair ``(a, x)`` of bit vectors: ``a`` marks the
awake links and ``x`` the transmitting ones. ``x`` must be a subset of ``a``
and an independent set of the conflict graph.

Bit vectors are stored as integer masks with link ``k`` on bit ``k``, so
binary counting over the mask gives the canonical order ``(0,0), (1,0),
(0,1), (1,1)`` for two links. States are ordered by ``a`` first, then ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InfeasibleState, SizeLimitExceeded

#: Largest ``2**K`` accepted by :func:`enumerate_configurations`.
MAX_CONFIGURATIONS = 2**20
#: Default cap on the number of (configuration, transmission) pairs.
MAX_STATES = 2**20


@dataclass(frozen=True)
class ConflictGraph:
    """Links ``0..K-1`` and the unordered pairs that cannot transmit together."""

    link_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        K = int(self.link_count)
        if K < 1:
            raise ValueError(f"link_count must be positive, got {self.link_count}")
        normalized = set()
        for edge in self.edges:
            i, j = (int(v) for v in edge)
            if i == j:
                raise ValueError(f"self-loop on link {i}")
            if not (0 <= i < K and 0 <= j < K):
                raise ValueError(f"edge ({i}, {j}) has an endpoint outside 0..{K - 1}")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "link_count", K)
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def complete(cls, link_count: int) -> "ConflictGraph":
        """Single collision domain: every pair of links interferes."""
        return cls(link_count, frozenset((i, j) for i in range(link_count)
                                         for j in range(i + 1, link_count)))

    @classmethod
    def empty(cls, link_count: int) -> "ConflictGraph":
        return cls(link_count, frozenset())

    @classmethod
    def from_edges(cls, link_count: int, edges: Iterable) -> "ConflictGraph":
        return cls(link_count, frozenset(tuple(e) for e in edges))

    def neighbors(self, k: int) -> list[int]:
        return sorted({j for e in self.edges for j in e if k in e and j != k})

    @cached_property
    def neighbor_masks(self) -> tuple[int, ...]:
        masks = [0] * self.link_count
        for i, j in self.edges:
            masks[i] |= 1 << j
            masks[j] |= 1 << i
        return tuple(masks)

    @cached_property
    def neighbor_lists(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(self.neighbors(k)) for k in range(self.link_count))

    def is_independent(self, mask: int) -> bool:
        nbr = self.neighbor_masks
        return all(not (mask >> k) & 1 or not (mask & nbr[k]) for k in range(self.link_count))


class NetworkState(NamedTuple):
    """A state of the chain as two 0/1 tuples."""

    awake: tuple
    transmitting: tuple


def mask_to_bits(mask: int, K: int) -> tuple:
    return tuple((mask >> k) & 1 for k in range(K))


def bits_to_mask(bits) -> int:
    mask = 0
    for k, b in enumerate(bits):
        if b not in (0, 1, True, False):
            raise ValueError(f"bit vector entries must be 0 or 1, got {b!r}")
        if b:
            mask |= 1 << k
    return mask


def _check_length(bits, K, what):
    if len(bits) != K:
        raise ValueError(f"{what} has length {len(bits)}, expected {K}")


def enumerate_configurations(graph: ConflictGraph,
                             max_configurations: int = MAX_CONFIGURATIONS) -> list[tuple]:
    """All ``2**K`` awake patterns in binary-counting order."""
    K = graph.link_count
    if 2**K > max_configurations:
        raise SizeLimitExceeded(f"2^{K} configurations exceed the cap of {max_configurations}")
    return [mask_to_bits(m, K) for m in range(2**K)]


def _independent_masks(graph: ConflictGraph) -> np.ndarray:
    K = graph.link_count
    if 2**K > MAX_CONFIGURATIONS:
        raise SizeLimitExceeded(f"2^{K} configurations exceed the cap of {MAX_CONFIGURATIONS}")
    masks = np.arange(2**K, dtype=np.int64)
    bad = np.zeros(masks.shape, dtype=bool)
    for k, nbr in enumerate(graph.neighbor_masks):
        if nbr:
            bad |= (((masks >> k) & 1) == 1) & ((masks & nbr) != 0)
    return masks[~bad]


def independent_sets(graph: ConflictGraph, config) -> list[tuple]:
    """Transmission states compatible with the awake pattern ``config``.

    The empty set is always first; order is binary counting on the mask.
    """
    K = graph.link_count
    _check_length(config, K, "configuration")
    awake = bits_to_mask(config)
    indep = _independent_masks(graph)
    return [mask_to_bits(int(m), K) for m in indep[(indep & ~awake) == 0]]


def count_states(graph: ConflictGraph) -> int:
    """Number of feasible (a, x) pairs, without materializing them."""
    K = graph.link_count
    indep = _independent_masks(graph)
    sizes = np.array([bin(int(m)).count("1") for m in indep], dtype=np.int64)
    return int(np.sum(np.left_shift(1, K - sizes, dtype=np.int64)))


class StateIndex:
    """Dense index over all feasible states of the chain.

    ``awake`` and ``transmitting`` are ``(n_states, K)`` 0/1 float arrays, so
    marginals are plain matrix products with a probability vector.
    """

    def __init__(self, graph: ConflictGraph, max_states: int = MAX_STATES):
        self.graph = graph
        K = graph.link_count
        n = count_states(graph)
        if n > max_states:
            raise SizeLimitExceeded(f"{n} states exceed the cap of {max_states}")
        configs = np.arange(2**K, dtype=np.int64)
        a_parts, x_parts = [], []
        for x in _independent_masks(graph):
            sup = configs[(configs & x) == x]
            a_parts.append(sup)
            x_parts.append(np.full(sup.shape, x, dtype=np.int64))
        a = np.concatenate(a_parts)
        x = np.concatenate(x_parts)
        keys = (a << K) | x
        order = np.argsort(keys, kind="stable")
        self.a_masks = a[order]
        self.x_masks = x[order]
        self.keys = keys[order]
        bits = np.arange(K, dtype=np.int64)
        self.awake = ((self.a_masks[:, None] >> bits) & 1).astype(float)
        self.transmitting = ((self.x_masks[:, None] >> bits) & 1).astype(float)

    @property
    def link_count(self) -> int:
        return self.graph.link_count

    def __len__(self) -> int:
        return len(self.keys)

    def state(self, i: int) -> NetworkState:
        K = self.link_count
        return NetworkState(mask_to_bits(int(self.a_masks[i]), K),
                            mask_to_bits(int(self.x_masks[i]), K))

    def states(self) -> list[NetworkState]:
        return [self.state(i) for i in range(len(self))]

    def lookup_masks(self, a_mask, x_mask):
        """Indices of ``(a_mask, x_mask)`` pairs; ``-1`` where infeasible.

        Accepts scalars or integer arrays.
        """
        key = (np.asarray(a_mask, dtype=np.int64) << self.link_count) | np.asarray(x_mask, dtype=np.int64)
        pos = np.searchsorted(self.keys, key)
        pos = np.minimum(pos, len(self.keys) - 1)
        found = self.keys[pos] == key
        return np.where(found, pos, -1)

    def index_of(self, state) -> int:
        """Dense index of a :class:`NetworkState` (or ``(awake, transmitting)`` pair)."""
        awake, transmitting = state
        K = self.link_count
        _check_length(awake, K, "awake vector")
        _check_length(transmitting, K, "transmission vector")
        i = int(self.lookup_masks(bits_to_mask(awake), bits_to_mask(transmitting)))
        if i < 0:
            raise InfeasibleState(f"state {tuple(awake)}, {tuple(transmitting)} is not feasible")
        return i


def build_state_index(graph: ConflictGraph, max_states: int = MAX_STATES) -> StateIndex:
    return StateIndex(graph, max_states=max_states)


def check_state(graph: ConflictGraph, state) -> tuple[int, int]:
    """Validate a state and return its ``(a_mask, x_mask)``."""
    awake, transmitting = state
    K = graph.link_count
    _check_length(awake, K, "awake vector")
    _check_length(transmitting, K, "transmission vector")
    a, x = bits_to_mask(awake), bits_to_mask(transmitting)
    if x & ~a:
        raise InfeasibleState(f"links {mask_to_bits(x & ~a, K)} transmit while asleep")
    if not graph.is_independent(x):
        raise InfeasibleState(f"transmitting set {tuple(transmitting)} contains interfering links")
    return a, x
