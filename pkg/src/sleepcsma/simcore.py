"""Event-driven simulation of the idealized (collision-free) sleep-enabled CSMA.

Every link alternates between SLEEPING and AWAKE. While awake it runs a
back-off timer that only counts down when no conflicting neighbour is
transmitting; when the back-off expires it transmits one packet for an
exponential holding time, during which its sleep timer is frozen. Packets
arrive as a Poisson process of rate ``lam_k * H_k`` per second; a link with
an empty queue transmits a dummy packet so the dynamics stay those of the
saturated chain.

Timers are kept as remaining times and frozen/resumed explicitly. Each link
draws from its own random streams, split from the master seed by
``(link, purpose)`` so a link's randomness does not depend on the event
interleaving.
"""
from __future__ import annotations

import csv
import enum
import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .analytic import AggressivenessProfile
from .errors import ConfigError, EmptyTrace, NoPackets
from .regions import TrafficSpec
from .topology import ConflictGraph, StateIndex

INF = math.inf

WAKE, SLEEP, TX_START, TX_END, ARRIVAL = range(5)
EVENT_NAMES = ("WAKE", "SLEEP", "TX_START", "TX_END", "ARRIVAL")

STREAM_PROTOCOL = 0
STREAM_ARRIVALS = 1


class Mode(enum.IntEnum):
    SLEEPING = 0
    AWAKE_BACKOFF = 1
    TRANSMITTING = 2


class RandomStream:
    """Buffered draws from one per-link generator."""

    __slots__ = ("_gen", "_exp", "_uni", "_block")

    def __init__(self, seed, link, purpose, block=2048):
        ss = np.random.SeedSequence(seed, spawn_key=(int(link), int(purpose)))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._exp = []
        self._uni = []
        self._block = block

    def exponential(self, rate):
        """One exponential variate with the given rate (``inf`` for rate 0)."""
        if not self._exp:
            self._exp = self._gen.standard_exponential(self._block).tolist()
            self._exp.reverse()
        e = self._exp.pop()
        return e / rate if rate > 0 else INF

    def uniform(self):
        if not self._uni:
            self._uni = self._gen.random(self._block).tolist()
            self._uni.reverse()
        return self._uni.pop()


@dataclass(frozen=True)
class PowerModel:
    """Radio power draw in watts while sleeping, sensing and transmitting."""

    p_sleep: float = 1.5e-6
    p_transmit: float = 73e-3
    p_sense: float = 45e-3

    def __post_init__(self):
        for name in ("p_sleep", "p_transmit", "p_sense"):
            if getattr(self, name) < 0:
                raise ConfigError("power must be nonnegative", field=name)


@dataclass(frozen=True)
class LinkRuntime:
    """Snapshot of one link's protocol state; remaining times in seconds."""

    mode: Mode
    backoff_remaining: float
    backoff_frozen: bool
    sleep_timer_remaining: float
    wake_timer_remaining: float
    hold_remaining: float
    queue_length: int


@dataclass
class RunMetrics:
    """Per-link time accounting and packet counters of a run.

    ``tx_time`` is time spent on successful transmissions (real or dummy);
    ``overhead_time`` is time the radio transmits without delivering data:
    collided frames and probes (always zero in the collision-free model).
    ``in_flight`` marks links transmitting any frame when the run stopped,
    ``in_flight_packets`` those whose frame carries a real packet.
    ``frames_started`` is counted independently by engines that track it.
    """

    duration: float
    awake_time: np.ndarray
    tx_time: np.ndarray
    queue_area: np.ndarray
    arrivals: np.ndarray
    packets_delivered: np.ndarray
    dummy_packets: np.ndarray
    final_queue: np.ndarray
    in_flight: np.ndarray
    in_flight_packets: np.ndarray
    event_count: int = 0
    overhead_time: np.ndarray | None = None
    packets_collided: np.ndarray | None = None
    packets_lost: np.ndarray | None = None
    frames_started: np.ndarray | None = None

    def __post_init__(self):
        K = len(self.awake_time)
        if self.overhead_time is None:
            self.overhead_time = np.zeros(K)
        if self.packets_collided is None:
            self.packets_collided = np.zeros(K, dtype=np.int64)
        if self.packets_lost is None:
            self.packets_lost = np.zeros(K, dtype=np.int64)

    @property
    def link_count(self):
        return len(self.awake_time)

    @property
    def attempts(self) -> np.ndarray:
        """Channel acquisitions: finished frames plus the one in progress."""
        return self.packets_delivered + self.dummy_packets + self.packets_collided + self.in_flight

    @property
    def throughput(self) -> np.ndarray:
        return self.tx_time / self.duration

    @property
    def awake_fraction(self) -> np.ndarray:
        return self.awake_time / self.duration

    @property
    def mean_queue(self) -> np.ndarray:
        return self.queue_area / self.duration

    @property
    def sleep_time(self) -> np.ndarray:
        return self.duration - self.awake_time

    @property
    def transmit_time(self) -> np.ndarray:
        """Time the radio spends in transmit mode, collided or not."""
        return self.tx_time + self.overhead_time

    @property
    def sense_time(self) -> np.ndarray:
        return self.awake_time - self.transmit_time

    @property
    def collision_probability(self) -> np.ndarray:
        """Collided frames over all finished frames, per link."""
        total = self.packets_collided + self.packets_delivered + self.dummy_packets
        return self.packets_collided / np.maximum(total, 1)

    def energy(self, power: PowerModel) -> dict:
        """Joules per link spent sleeping, sensing and transmitting."""
        return {
            "sleep": power.p_sleep * self.sleep_time,
            "sense": power.p_sense * self.sense_time,
            "transmit": power.p_transmit * self.transmit_time,
        }

    def goodput(self, holding_rate) -> np.ndarray:
        """Real packets delivered per mean holding time."""
        return self.packets_delivered / (np.asarray(holding_rate, float) * self.duration)

    def growth_flags(self, lam, holding_rate, tolerance=0.005) -> np.ndarray:
        """Links whose goodput falls more than ``tolerance`` short of the offered load.

        The backlog of a flagged link grows without bound.
        """
        return self.goodput(holding_rate) < np.asarray(lam, float) - tolerance

    def network_growth(self, lam, holding_rate, tolerance=0.005) -> bool:
        """True when the summed backlog grows: total goodput below total load by more than ``tolerance``."""
        lam = np.broadcast_to(np.asarray(lam, float), (self.link_count,))
        return bool(self.goodput(holding_rate).sum() < lam.sum() - tolerance)


def energy_per_packet(metrics: RunMetrics, power: PowerModel) -> np.ndarray:
    """Total radio energy divided by real packets delivered, per link."""
    delivered = np.asarray(metrics.packets_delivered)
    if np.any(delivered <= 0):
        raise NoPackets(f"links {np.nonzero(delivered <= 0)[0].tolist()} delivered no packets")
    e = metrics.energy(power)
    return (e["sleep"] + e["sense"] + e["transmit"]) / delivered


@dataclass
class Trace:
    """Event log of a run, enough to replay the network state."""

    link_count: int
    start_time: float
    initial_awake: int
    initial_transmitting: int
    events: list = field(default_factory=list)
    end_time: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "link", "event", "queue_len"])
            for t, k, kind, q in self.events:
                w.writerow([repr(t), k, EVENT_NAMES[kind], q])


def empirical_occupancy(trace: Trace, index: StateIndex) -> np.ndarray:
    """Time-weighted fraction of the traced interval spent in each state."""
    span = trace.end_time - trace.start_time
    if span <= 0:
        raise EmptyTrace("trace covers no time")
    K = trace.link_count
    occ = {}
    a, x = trace.initial_awake, trace.initial_transmitting
    last = trace.start_time
    for t, k, kind, _ in trace.events:
        if kind == ARRIVAL:
            continue
        key = (a << K) | x
        occ[key] = occ.get(key, 0.0) + (t - last)
        last = t
        bit = 1 << k
        if kind == WAKE:
            a |= bit
        elif kind == SLEEP:
            a &= ~bit
        elif kind == TX_START:
            x |= bit
        elif kind == TX_END:
            x &= ~bit
    key = (a << K) | x
    occ[key] = occ.get(key, 0.0) + (trace.end_time - last)
    return occupancy_vector(occ, index) / span


def occupancy_vector(occ: dict, index: StateIndex) -> np.ndarray:
    keys = np.fromiter(occ.keys(), dtype=np.int64, count=len(occ))
    vals = np.fromiter(occ.values(), dtype=float, count=len(occ))
    pos = np.searchsorted(index.keys, keys)
    pos = np.minimum(pos, len(index.keys) - 1)
    if np.any(index.keys[pos] != keys):
        raise AssertionError("simulation visited a state outside the index")
    out = np.zeros(len(index))
    np.add.at(out, pos, vals)
    return out


class _Link:
    __slots__ = ("mode", "backoff_deadline", "backoff_remaining", "backoff_frozen",
                 "sleep_deadline", "sleep_remaining", "wake_deadline", "hold_deadline",
                 "queue", "serving_real", "tokens", "rng", "arrival_rng")


class ContinuousSimulator:
    """Sequential event loop; advance with :meth:`advance_to`.

    ``sleep_enabled`` (bool or per-link mask) switches the sleep/wake cycle
    off for links running plain adaptive CSMA; those start awake. Other
    links start asleep unless ``initially_awake`` is set.
    """

    def __init__(self, graph: ConflictGraph, profile: AggressivenessProfile, traffic: TrafficSpec,
                 seed=0, *, sleep_enabled=True, initially_awake=False, record_occupancy=False,
                 trace=False, check_invariants=False):
        K = graph.link_count
        if profile.link_count != K or traffic.link_count != K:
            raise ConfigError(f"profile/traffic sizes do not match {K} links")
        if not np.all(np.isfinite(profile.backoff_rate) & (profile.backoff_rate > 0)):
            raise ConfigError("back-off rates must be positive and finite", field="r")
        self.graph = graph
        self.K = K
        self.profile = profile
        self.traffic = traffic
        self.seed = seed
        self.now = 0.0
        self.event_count = 0
        self.sleep_enabled = np.broadcast_to(np.asarray(sleep_enabled, bool), (K,)).copy()
        self._nbrs = graph.neighbor_lists
        self._nbr_masks = graph.neighbor_masks
        self._check = check_invariants
        self._heap = []
        self._busy = [0] * K
        self.a_mask = 0
        self.x_mask = 0
        self._set_rates(profile)
        self._arrival_rate = (traffic.lam * profile.holding_rate).tolist()

        self.awake_time = [0.0] * K
        self.tx_time = [0.0] * K
        self.queue_area = [0.0] * K
        self.arrivals = [0] * K
        self.delivered = [0] * K
        self.dummy = [0] * K
        self._awake_since = [0.0] * K
        self._tx_since = [0.0] * K
        self._queue_since = [0.0] * K

        self._occ = {} if record_occupancy else None
        self._occ_last = 0.0
        self.trace = None
        start_awake = [bool(initially_awake) or not self.sleep_enabled[k] for k in range(K)]
        for k in range(K):
            if start_awake[k]:
                self.a_mask |= 1 << k
        if trace:
            self.trace = Trace(K, 0.0, self.a_mask, 0)

        self._links = []
        for k in range(K):
            L = _Link()
            L.mode = Mode.SLEEPING
            L.backoff_deadline = INF
            L.backoff_remaining = INF
            L.backoff_frozen = False
            L.sleep_deadline = INF
            L.sleep_remaining = INF
            L.wake_deadline = INF
            L.hold_deadline = INF
            L.queue = 0
            L.serving_real = False
            L.tokens = [0, 0, 0, 0, 0]
            L.rng = RandomStream(seed, k, STREAM_PROTOCOL)
            L.arrival_rng = RandomStream(seed, k, STREAM_ARRIVALS)
            self._links.append(L)
        for k in range(K):
            L = self._links[k]
            if start_awake[k]:
                L.mode = Mode.AWAKE_BACKOFF
                if self.sleep_enabled[k]:
                    self._schedule_sleep(k, 0.0, L.rng.exponential(self._sleep_rate[k]))
                self._new_backoff(k, 0.0)
            else:
                self._schedule_wake(k, 0.0)
            self._schedule_arrival(k, 0.0)

    # -- rates and scheduling -------------------------------------------------

    def _set_rates(self, profile):
        self._backoff_rate = profile.backoff_rate.tolist()
        self._wake_rate = profile.wake_rate.tolist()
        self._sleep_rate = profile.sleep_rate.tolist()
        self._hold_rate = profile.holding_rate.tolist()

    def _push(self, t, k, kind):
        L = self._links[k]
        L.tokens[kind] += 1
        heapq.heappush(self._heap, (t, k, kind, L.tokens[kind]))

    def _cancel(self, k, kind):
        self._links[k].tokens[kind] += 1

    def _schedule_wake(self, k, t):
        L = self._links[k]
        L.wake_deadline = t + L.rng.exponential(self._wake_rate[k])
        self._push(L.wake_deadline, k, WAKE)

    def _schedule_sleep(self, k, t, duration):
        L = self._links[k]
        L.sleep_deadline = t + duration
        L.sleep_remaining = INF
        self._push(L.sleep_deadline, k, SLEEP)

    def _schedule_arrival(self, k, t):
        rate = self._arrival_rate[k]
        if rate > 0:
            self._push(t + self._links[k].arrival_rng.exponential(rate), k, ARRIVAL)

    def _new_backoff(self, k, t):
        L = self._links[k]
        duration = L.rng.exponential(self._backoff_rate[k])
        self._cancel(k, TX_START)
        if self._busy[k]:
            L.backoff_frozen = True
            L.backoff_remaining = duration
            L.backoff_deadline = INF
        else:
            L.backoff_frozen = False
            L.backoff_remaining = INF
            L.backoff_deadline = t + duration
            self._push(L.backoff_deadline, k, TX_START)

    # -- frame-boundary primitives --------------------------------------------

    def set_profile(self, profile: AggressivenessProfile):
        """Switch rates; running timers are left alone (see :meth:`redraw_backoff`)."""
        if profile.link_count != self.K:
            raise ConfigError("profile size does not match the network")
        self.profile = profile
        self._set_rates(profile)

    def redraw_backoff(self, k):
        """Replace link ``k``'s back-off timer with a fresh draw at the current rate."""
        if self._links[k].mode != Mode.AWAKE_BACKOFF:
            raise ValueError(f"link {k} is not in back-off")
        self._new_backoff(k, self.now)

    def redraw_wake(self, k):
        if self._links[k].mode != Mode.SLEEPING:
            raise ValueError(f"link {k} is not asleep")
        self._cancel(k, WAKE)
        self._schedule_wake(k, self.now)

    def mode(self, k) -> Mode:
        return self._links[k].mode

    def runtime(self, k) -> LinkRuntime:
        L = self._links[k]
        now = self.now
        if L.mode == Mode.AWAKE_BACKOFF:
            backoff = L.backoff_remaining if L.backoff_frozen else L.backoff_deadline - now
        else:
            backoff = INF
        if L.mode == Mode.SLEEPING or not self.sleep_enabled[k]:
            sleep = INF
        elif L.mode == Mode.TRANSMITTING:
            sleep = L.sleep_remaining
        else:
            sleep = L.sleep_deadline - now
        wake = L.wake_deadline - now if L.mode == Mode.SLEEPING else INF
        hold = L.hold_deadline - now if L.mode == Mode.TRANSMITTING else INF
        return LinkRuntime(L.mode, backoff, L.backoff_frozen and L.mode == Mode.AWAKE_BACKOFF,
                           sleep, wake, hold, L.queue)

    def queue_lengths(self) -> np.ndarray:
        return np.array([L.queue for L in self._links])

    # -- main loop --------------------------------------------------------------

    def advance_to(self, t_end):
        """Process every event up to and including ``t_end``."""
        if t_end < self.now:
            raise ValueError("cannot move backwards in time")
        heap = self._heap
        links = self._links
        busy = self._busy
        nbrs = self._nbrs
        push = heapq.heappush
        pop = heapq.heappop
        occ = self._occ
        trace = self.trace.events if self.trace is not None else None
        K = self.K
        sleep_enabled = self.sleep_enabled.tolist()
        awake_time, tx_time, queue_area = self.awake_time, self.tx_time, self.queue_area
        awake_since, tx_since, queue_since = self._awake_since, self._tx_since, self._queue_since
        backoff_rate, wake_rate = self._backoff_rate, self._wake_rate
        sleep_rate, hold_rate = self._sleep_rate, self._hold_rate
        AWAKE, SLEEPING, TRANSMITTING = Mode.AWAKE_BACKOFF, Mode.SLEEPING, Mode.TRANSMITTING
        count = 0
        while heap and heap[0][0] <= t_end:
            t, k, kind, token = pop(heap)
            L = links[k]
            if token != L.tokens[kind]:
                continue
            count += 1
            if kind == ARRIVAL:
                queue_area[k] += L.queue * (t - queue_since[k])
                queue_since[k] = t
                L.queue += 1
                self.arrivals[k] += 1
                L.tokens[ARRIVAL] += 1
                push(heap, (t + L.arrival_rng.exponential(self._arrival_rate[k]), k, ARRIVAL,
                            L.tokens[ARRIVAL]))
                if trace is not None:
                    trace.append((t, k, ARRIVAL, L.queue))
                continue
            if occ is not None:
                key = (self.a_mask << K) | self.x_mask
                occ[key] = occ.get(key, 0.0) + (t - self._occ_last)
                self._occ_last = t
            bit = 1 << k
            if kind == TX_START:
                if self._check and (self.x_mask & self._nbr_masks[k]):
                    raise AssertionError(f"link {k} starts while a neighbour transmits")
                L.mode = TRANSMITTING
                self.x_mask |= bit
                tx_since[k] = t
                if sleep_enabled[k]:
                    L.sleep_remaining = L.sleep_deadline - t
                    L.sleep_deadline = INF
                    L.tokens[SLEEP] += 1
                if L.queue > 0:
                    queue_area[k] += L.queue * (t - queue_since[k])
                    queue_since[k] = t
                    L.queue -= 1
                    L.serving_real = True
                else:
                    L.serving_real = False
                L.backoff_deadline = INF
                L.hold_deadline = t + L.rng.exponential(hold_rate[k])
                L.tokens[TX_END] += 1
                push(heap, (L.hold_deadline, k, TX_END, L.tokens[TX_END]))
                for j in nbrs[k]:
                    busy[j] += 1
                    if busy[j] == 1:
                        M = links[j]
                        if M.mode == AWAKE and not M.backoff_frozen:
                            M.backoff_remaining = M.backoff_deadline - t
                            M.backoff_deadline = INF
                            M.backoff_frozen = True
                            M.tokens[TX_START] += 1
            elif kind == TX_END:
                L.mode = AWAKE
                self.x_mask &= ~bit
                tx_time[k] += t - tx_since[k]
                L.hold_deadline = INF
                if L.serving_real:
                    self.delivered[k] += 1
                else:
                    self.dummy[k] += 1
                L.serving_real = False
                if sleep_enabled[k]:
                    L.sleep_deadline = t + L.sleep_remaining
                    L.sleep_remaining = INF
                    L.tokens[SLEEP] += 1
                    push(heap, (L.sleep_deadline, k, SLEEP, L.tokens[SLEEP]))
                for j in nbrs[k]:
                    busy[j] -= 1
                    if busy[j] == 0:
                        M = links[j]
                        if M.mode == AWAKE and M.backoff_frozen:
                            M.backoff_deadline = t + M.backoff_remaining
                            M.backoff_remaining = INF
                            M.backoff_frozen = False
                            M.tokens[TX_START] += 1
                            push(heap, (M.backoff_deadline, j, TX_START, M.tokens[TX_START]))
                # fresh back-off; busy[k] is zero since no neighbour could start
                L.backoff_frozen = False
                L.backoff_deadline = t + L.rng.exponential(backoff_rate[k])
                L.tokens[TX_START] += 1
                push(heap, (L.backoff_deadline, k, TX_START, L.tokens[TX_START]))
            elif kind == WAKE:
                L.mode = AWAKE
                self.a_mask |= bit
                awake_since[k] = t
                L.wake_deadline = INF
                L.sleep_deadline = t + L.rng.exponential(sleep_rate[k])
                L.sleep_remaining = INF
                L.tokens[SLEEP] += 1
                push(heap, (L.sleep_deadline, k, SLEEP, L.tokens[SLEEP]))
                duration = L.rng.exponential(backoff_rate[k])
                L.tokens[TX_START] += 1
                if busy[k]:
                    L.backoff_frozen = True
                    L.backoff_remaining = duration
                    L.backoff_deadline = INF
                else:
                    L.backoff_frozen = False
                    L.backoff_deadline = t + duration
                    push(heap, (L.backoff_deadline, k, TX_START, L.tokens[TX_START]))
            else:  # SLEEP, only reachable from back-off
                L.mode = SLEEPING
                self.a_mask &= ~bit
                awake_time[k] += t - awake_since[k]
                L.tokens[TX_START] += 1
                L.backoff_frozen = False
                L.backoff_deadline = INF
                L.backoff_remaining = INF
                L.sleep_deadline = INF
                L.wake_deadline = t + L.rng.exponential(wake_rate[k])
                L.tokens[WAKE] += 1
                push(heap, (L.wake_deadline, k, WAKE, L.tokens[WAKE]))
            if trace is not None:
                trace.append((t, k, kind, L.queue))
        self.event_count += count
        self.now = t_end

    # -- accounting ---------------------------------------------------------------

    def accumulators(self) -> dict:
        """Cumulative per-link integrals up to the current time."""
        now = self.now
        awake = np.array(self.awake_time)
        tx = np.array(self.tx_time)
        area = np.array(self.queue_area)
        for k, L in enumerate(self._links):
            if L.mode != Mode.SLEEPING:
                awake[k] += now - self._awake_since[k]
            if L.mode == Mode.TRANSMITTING:
                tx[k] += now - self._tx_since[k]
            area[k] += L.queue * (now - self._queue_since[k])
        return {"time": now, "awake": awake, "tx": tx, "queue_area": area,
                "arrivals": np.array(self.arrivals)}

    def occupancy(self, index: StateIndex) -> np.ndarray:
        """Fraction of elapsed time spent in each indexed state (needs ``record_occupancy``)."""
        if self._occ is None:
            raise ValueError("simulator was created without record_occupancy")
        if self.now <= 0:
            raise EmptyTrace("no time has elapsed")
        occ = dict(self._occ)
        key = (self.a_mask << self.K) | self.x_mask
        occ[key] = occ.get(key, 0.0) + (self.now - self._occ_last)
        return occupancy_vector(occ, index) / self.now

    def metrics(self) -> RunMetrics:
        acc = self.accumulators()
        sending = [L.mode == Mode.TRANSMITTING for L in self._links]
        in_flight = np.array(sending, dtype=np.int64)
        in_flight_packets = np.array([s and L.serving_real for s, L in zip(sending, self._links)],
                                     dtype=np.int64)
        if self.trace is not None:
            self.trace.end_time = self.now
        return RunMetrics(
            duration=self.now,
            awake_time=acc["awake"],
            tx_time=acc["tx"],
            queue_area=acc["queue_area"],
            arrivals=acc["arrivals"],
            packets_delivered=np.array(self.delivered),
            dummy_packets=np.array(self.dummy),
            final_queue=self.queue_lengths(),
            in_flight=in_flight,
            in_flight_packets=in_flight_packets,
            event_count=self.event_count,
        )


@dataclass
class RunResult:
    metrics: RunMetrics
    trace: Trace | None = None
    occupancy: np.ndarray | None = None


def run_continuous(graph: ConflictGraph, profile: AggressivenessProfile, traffic: TrafficSpec,
                   duration: float, seed=0, *, trace=False, index: StateIndex | None = None,
                   **options) -> RunResult:
    """Simulate for ``duration`` seconds with a fixed profile.

    Passing ``index`` records the time-weighted state occupancy.
    """
    if not duration > 0:
        raise ConfigError("duration must be positive", field="duration_s")
    sim = ContinuousSimulator(graph, profile, traffic, seed, trace=trace,
                              record_occupancy=index is not None, **options)
    sim.advance_to(duration)
    metrics = sim.metrics()
    occ = sim.occupancy(index) if index is not None else None
    return RunResult(metrics, sim.trace, occ)
