"""Slotted CSMA with real collisions, window capping and an 802.11 DCF baseline.

With mini-slots of length ``T_slot`` a link draws its back-off counter
uniformly on ``[0, W - 1]``; choosing

    W = 2 / (exp(r) H T_slot) + 1

keeps the mean back-off equal to the continuous one, ``1 / (H exp(r))``.
Collisions happen when interfering links exhaust their counters in the same
slot.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import analytic
from .errors import ConfigError, DomainError, NonConvergence
from .optimizer import OptimizerSettings, solve
from .regions import TrafficSpec, capacity_boundary_point
from .topology import ConflictGraph, StateIndex, build_state_index


def contention_window(r, holding_rate, slot):
    """Window size (in slots) whose uniform back-off has mean ``1 / (H e^r)``."""
    r = np.asarray(r, dtype=float)
    if np.any(np.asarray(holding_rate) <= 0) or np.any(np.asarray(slot) <= 0):
        raise ValueError("holding rate and slot length must be positive")
    w = 2.0 / (np.exp(r) * holding_rate * slot) + 1.0
    return float(w) if w.ndim == 0 else w


def r_max_for_window(window_floor, holding_rate, slot, sleep_prob=0.0):
    """Largest aggressiveness keeping the equivalent window ``W / (1 - P_s)`` at or above ``W0``."""
    denom = window_floor * (1.0 - np.asarray(sleep_prob, dtype=float)) - 1.0
    if np.any(denom <= 0):
        raise DomainError(f"window floor {window_floor} unreachable with sleep probability {sleep_prob}")
    r = np.log(2.0 / (denom * holding_rate * slot))
    return float(r) if np.ndim(r) == 0 else r


def _all_awake_throughput(index: StateIndex, r) -> np.ndarray:
    full = (1 << index.link_count) - 1
    rows = index.a_masks == full
    w = index.transmitting[rows] @ np.asarray(r, float)
    p = np.exp(w - w.max())
    p /= p.sum()
    return index.transmitting[rows].T @ p


@dataclass(frozen=True)
class CappedThroughput:
    r_max: np.ndarray
    total_throughput: float
    lam: np.ndarray
    rho: np.ndarray
    fixed_point_iterations: int


def _capped_operating_point(index, lam, omega, window_floor, holding_rate, slot,
                            tol=1e-10, max_iter=100):
    """Throughput at the capped aggressiveness for one arrival vector.

    Alternates between the cap implied by the current sleep probability and
    the waking aggressiveness that meets the awake target at that cap.
    """
    f = np.minimum(lam + omega, 1.0)
    always_awake = np.all(f >= 1.0 - 1e-12)
    sleep_prob = 1.0 - f
    rho = np.zeros(index.link_count)
    settings = OptimizerSettings(gradient_tolerance=1e-11)
    for it in range(1, max_iter + 1):
        r_cap = np.asarray(r_max_for_window(window_floor, holding_rate, slot, sleep_prob), float)
        r_cap = np.broadcast_to(r_cap, lam.shape).copy()
        if always_awake:
            return r_cap, _all_awake_throughput(index, r_cap), np.full(lam.shape, np.inf), it
        res = solve(index, TrafficSpec(lam, f - lam), settings, initial=(r_cap, rho), fixed_r=r_cap)
        rho = res.rho_star
        dist = analytic.stationary_distribution(index, analytic.AggressivenessProfile.create(r_cap, rho))
        new_sleep = 1.0 - analytic.awake_fraction(dist)
        if np.max(np.abs(new_sleep - sleep_prob)) < tol:
            return r_cap, analytic.throughput(dist), rho, it
        sleep_prob = new_sleep
    raise NonConvergence(f"sleep-probability fixed point did not settle in {max_iter} iterations")


def max_throughput_under_cap(graph_or_index, pdt_policy, window_floor=32, holding_rate=200.0,
                             slot=9e-6, direction=None, tol=1e-7, max_bisections=200) -> CappedThroughput:
    """Largest load along ``direction`` that the capped scheme still serves.

    ``pdt_policy`` maps an arrival vector to PDT parameters ``omega``; a
    float ``c`` is shorthand for ``omega = c (1 - lam)``. The load is scaled
    by bisection until ``s_k(r_max, rho) >= lam_k`` fails.
    """
    index = graph_or_index if isinstance(graph_or_index, StateIndex) else build_state_index(graph_or_index)
    K = index.link_count
    if not callable(pdt_policy):
        c = float(pdt_policy)
        policy = lambda lam: c * (1.0 - lam)  # noqa: E731
    else:
        policy = pdt_policy
    d = np.ones(K) if direction is None else np.asarray(direction, float)
    d = d / d.max()
    hi = float(capacity_boundary_point(index, d)[np.argmax(d)])
    lo = 0.0

    def served(t):
        lam = t * d
        r_cap, s, rho, its = _capped_operating_point(index, lam, policy(lam), window_floor,
                                                     holding_rate, slot)
        return np.all(s >= lam), r_cap, s, rho, its

    best = None
    for _ in range(max_bisections):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        ok, r_cap, s, rho, its = served(mid)
        if ok:
            lo, best = mid, (r_cap, rho, its)
        else:
            hi = mid
    else:
        raise NonConvergence("bisection on the load did not converge")
    if best is None:
        ok, r_cap, s, rho, its = served(lo)
        best = (r_cap, rho, its)
    lam = lo * d
    return CappedThroughput(best[0], float(lam.sum()), lam, best[1], best[2])


class CounterLaw(str, enum.Enum):
    UNIFORM = "UNIFORM"
    GEOMETRIC = "GEOMETRIC"


class SlottedMode(str, enum.Enum):
    BASIC = "BASIC"
    RTS_CTS = "RTS_CTS"
    DCF = "DCF"


@dataclass(frozen=True)
class DcfSettings:
    cw0: int = 32
    max_doublings: int = 10

    def __post_init__(self):
        if self.cw0 < 2:
            raise ConfigError("initial contention window must be at least 2", field="cw0")
        if self.max_doublings < 0:
            raise ConfigError("max_doublings must be nonnegative", field="max_doublings")

    @property
    def cw_max(self):
        return self.cw0 * 2**self.max_doublings


@dataclass(frozen=True)
class SlottedConfig:
    """Mini-slot length (s), window floor, probe length (s) and contention mode.

    ``counter_law`` picks how back-off counters are drawn: uniform on
    ``[0, W - 1]``, or geometric with the same mean ``(W - 1) / 2``. Only the
    geometric law is memoryless, so only it races the exponential sleep
    timer the way the continuous chain does.
    """

    slot: float = 9e-6
    window_floor: int = 32
    probe_duration: float = 0.0
    mode: SlottedMode = SlottedMode.BASIC
    dcf: DcfSettings = field(default_factory=DcfSettings)
    counter_law: CounterLaw = CounterLaw.UNIFORM

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", SlottedMode(self.mode))
            object.__setattr__(self, "counter_law", CounterLaw(self.counter_law))
        except ValueError as exc:
            raise ConfigError(str(exc), field="mode") from exc
        if not self.slot > 0:
            raise ConfigError("slot length must be positive", field="slot")
        if self.window_floor < 2:
            raise ConfigError("window floor must be at least 2", field="window_floor")
        if self.probe_duration < 0:
            raise ConfigError("probe duration must be nonnegative", field="probe_duration")
        if self.mode is SlottedMode.RTS_CTS and self.probe_duration <= 0:
            raise ConfigError("RTS_CTS mode needs a positive probe duration", field="probe_duration")


def _slots(seconds, slot):
    """Whole slots covering ``seconds`` (at least one)."""
    return max(1, math.ceil(seconds / slot - 1e-9))


class _SlottedRun:
    """Slot-synchronous contention, jumping straight between slots where something happens.

    Within a slot boundary the order is: transmissions end, expired sleep
    timers fire, links wake, then every awake link whose counter is zero on
    an idle channel starts. Starters adjacent in the conflict graph collide.
    """

    def __init__(self, graph, slot, *, windows=None, profile=None, traffic=None,
                 sleep_enabled=True, probe_slots=0, dcf: DcfSettings | None = None,
                 seed=0, initially_awake=False, log_windows=False, geometric=False):
        from .simcore import RandomStream, STREAM_ARRIVALS, STREAM_PROTOCOL

        K = graph.link_count
        self.K = K
        self.slot = slot
        self.nbrs = graph.neighbor_lists
        self.dcf = dcf
        self.probe_slots = probe_slots
        self.rng = [RandomStream(seed, k, STREAM_PROTOCOL) for k in range(K)]
        self.arrival_rng = [RandomStream(seed, k, STREAM_ARRIVALS) for k in range(K)]
        if dcf is not None:
            self.saturated = True
            self.sleep_enabled = [False] * K
            self.cw = [dcf.cw0] * K
            self.hold_rate = [float(h) for h in np.broadcast_to(profile.holding_rate, (K,))]
        else:
            self.saturated = False
            self.sleep_enabled = list(np.broadcast_to(np.asarray(sleep_enabled, bool), (K,)))
            self.windows = [float(w) for w in windows]
            # per-slot continuation probability of a geometric counter with mean (W - 1) / 2
            self.log_continue = [math.log((w - 1) / (w + 1)) if w > 1 else -math.inf
                                 for w in self.windows] if geometric else None
            self.hold_rate = profile.holding_rate.tolist()
            self.wake_rate = profile.wake_rate.tolist()
            self.sleep_rate = profile.sleep_rate.tolist()
        self.arrival_rate = ([0.0] * K if traffic is None or self.saturated
                             else (traffic.lam * profile.holding_rate).tolist())
        self.cw_log = [[] for _ in range(K)] if log_windows else None

        self.now = 0
        self.awake = [False] * K
        self.sending = [False] * K       # occupying the channel
        self.frame_kind = [0] * K        # 0 data, 1 collided, 2 probe collision
        self.frame_real = [False] * K
        self.frame_data_slots = [0] * K
        self.frame_overhead_slots = [0] * K
        self.busy = [0] * K
        self.counter = [0] * K
        self.sleep_deadline = [0] * K
        self.sleep_left = [0] * K
        self.wake_at = [0] * K
        self.tx_end = [0] * K
        self.queue = [0] * K
        self.next_arrival = [math.inf] * K
        self.queue_since = [0.0] * K

        self.awake_slots = [0] * K
        self.awake_since = [0] * K
        self.data_slots = [0] * K
        self.overhead_slots = [0] * K
        self.queue_area = [0.0] * K
        self.arrivals = [0] * K
        self.delivered = [0] * K
        self.dummy = [0] * K
        self.collided = [0] * K
        self.lost = [0] * K
        self.started = [0] * K
        self.iterations = 0

        for k in range(K):
            if self.arrival_rate[k] > 0:
                self.next_arrival[k] = self.arrival_rng[k].exponential(self.arrival_rate[k])
            if initially_awake or not self.sleep_enabled[k]:
                self._wake(k)
            else:
                self.wake_at[k] = self._timer(k, self.wake_rate[k])

    def _timer(self, k, rate):
        """Absolute slot at which an exponential timer of link ``k`` expires."""
        return self.now + _slots(self.rng[k].exponential(rate), self.slot)

    def _draw_counter(self, k):
        if self.dcf is not None:
            w = self.cw[k]
            if self.cw_log is not None:
                self.cw_log[k].append(w)
            self.counter[k] = int(self.rng[k].uniform() * w)
        elif self.log_continue is None:
            self.counter[k] = int(self.rng[k].uniform() * self.windows[k])
        else:
            lc = self.log_continue[k]
            u = 1.0 - self.rng[k].uniform()
            self.counter[k] = 0 if lc == -math.inf else int(math.log(u) / lc)

    def _wake(self, k):
        self.awake[k] = True
        self.awake_since[k] = self.now
        if self.sleep_enabled[k]:
            self.sleep_deadline[k] = self._timer(k, self.sleep_rate[k])
        self._draw_counter(k)

    def _sleep(self, k):
        self.awake[k] = False
        self.awake_slots[k] += self.now - self.awake_since[k]
        self.wake_at[k] = self._timer(k, self.wake_rate[k])

    def _absorb_arrivals(self, k, t):
        rate = self.arrival_rate[k]
        if rate <= 0:
            return
        rng = self.arrival_rng[k]
        while self.next_arrival[k] <= t:
            a = self.next_arrival[k]
            self.queue_area[k] += self.queue[k] * (a - self.queue_since[k])
            self.queue_since[k] = a
            self.queue[k] += 1
            self.arrivals[k] += 1
            self.next_arrival[k] = a + rng.exponential(rate)

    def _take_packet(self, k):
        if self.saturated:
            return True
        t = self.now * self.slot
        self._absorb_arrivals(k, t)
        if self.queue[k] > 0:
            self.queue_area[k] += self.queue[k] * (t - self.queue_since[k])
            self.queue_since[k] = t
            self.queue[k] -= 1
            return True
        return False

    def _next_event(self, horizon):
        nxt = horizon
        now = self.now
        for k in range(self.K):
            if self.sending[k]:
                c = self.tx_end[k]
            elif not self.awake[k]:
                c = self.wake_at[k]
            else:
                c = self.sleep_deadline[k] if self.sleep_enabled[k] else horizon
                if self.busy[k] == 0 and now + self.counter[k] < c:
                    c = now + self.counter[k]
            if c < nxt:
                nxt = c
        return nxt

    def advance(self, horizon):
        K = self.K
        while True:
            nxt = self._next_event(horizon)
            dt = nxt - self.now
            if dt:
                for k in range(K):
                    if self.awake[k] and not self.sending[k] and self.busy[k] == 0:
                        self.counter[k] -= dt
                self.now = nxt
            if nxt >= horizon:
                return
            self.iterations += 1
            now = self.now
            for k in range(K):
                if self.sending[k] and self.tx_end[k] == now:
                    self._finish(k)
            for k in range(K):
                if (self.awake[k] and not self.sending[k] and self.sleep_enabled[k]
                        and self.sleep_deadline[k] == now):
                    self._sleep(k)
            for k in range(K):
                if not self.awake[k] and self.wake_at[k] == now:
                    self._wake(k)
            starters = [k for k in range(K) if self.awake[k] and not self.sending[k]
                        and self.busy[k] == 0 and self.counter[k] == 0]
            if starters:
                self._start(starters)

    def _start(self, starters):
        now = self.now
        chosen = set(starters)
        hits = {k: [j for j in self.nbrs[k] if j in chosen] for k in starters}
        # colliding groups share the channel for the longest member's frame
        group_of = {}
        for k in starters:
            if k in group_of or not hits[k]:
                continue
            stack, members = [k], []
            group_of[k] = members
            while stack:
                u = stack.pop()
                members.append(u)
                for v in hits[u]:
                    if v not in group_of:
                        group_of[v] = members
                        stack.append(v)
        durations = {}
        for k in starters:
            hold = _slots(self.rng[k].exponential(self.hold_rate[k]), self.slot)
            durations[k] = hold
        for k in starters:
            collided = bool(hits[k])
            if self.probe_slots:
                if collided:
                    self.frame_kind[k] = 2
                    self.frame_data_slots[k] = 0
                    self.frame_overhead_slots[k] = self.probe_slots
                    self.frame_real[k] = False
                else:
                    self.frame_kind[k] = 0
                    self.frame_real[k] = self._take_packet(k)
                    self.frame_data_slots[k] = durations[k]
                    self.frame_overhead_slots[k] = self.probe_slots
            elif collided:
                self.frame_kind[k] = 1
                self.frame_real[k] = self._take_packet(k)
                self.frame_data_slots[k] = 0
                self.frame_overhead_slots[k] = max(durations[j] for j in group_of[k])
            else:
                self.frame_kind[k] = 0
                self.frame_real[k] = self._take_packet(k)
                self.frame_data_slots[k] = durations[k]
                self.frame_overhead_slots[k] = 0
            self.sending[k] = True
            self.started[k] += 1
            self.tx_end[k] = now + self.frame_data_slots[k] + self.frame_overhead_slots[k]
            if self.sleep_enabled[k]:
                self.sleep_left[k] = self.sleep_deadline[k] - now
            for j in self.nbrs[k]:
                self.busy[j] += 1

    def _finish(self, k):
        self.sending[k] = False
        self.data_slots[k] += self.frame_data_slots[k]
        self.overhead_slots[k] += self.frame_overhead_slots[k]
        kind = self.frame_kind[k]
        if kind == 0:
            if self.frame_real[k]:
                self.delivered[k] += 1
            else:
                self.dummy[k] += 1
        else:
            self.collided[k] += 1
            if kind == 1 and self.frame_real[k] and not self.saturated:
                self.lost[k] += 1
        if self.dcf is not None:
            self.cw[k] = self.dcf.cw0 if kind == 0 else min(2 * self.cw[k], self.dcf.cw_max)
        self.frame_real[k] = False
        for j in self.nbrs[k]:
            self.busy[j] -= 1
        if self.sleep_enabled[k]:
            self.sleep_deadline[k] = self.now + self.sleep_left[k]
        self._draw_counter(k)

    def metrics(self):
        from .simcore import RunMetrics

        K = self.K
        T = self.slot
        now = self.now
        t_end = now * T
        awake = np.array([self.awake_slots[k] + (now - self.awake_since[k] if self.awake[k] else 0)
                          for k in range(K)], float) * T
        data = np.array(self.data_slots, float)
        overhead = np.array(self.overhead_slots, float)
        for k in range(K):
            if self.sending[k]:
                # split the frame in progress at the stopping time
                start = self.tx_end[k] - self.frame_data_slots[k] - self.frame_overhead_slots[k]
                done = now - start
                ov = min(done, self.frame_overhead_slots[k])
                if self.frame_kind[k] == 0 and self.probe_slots:
                    overhead[k] += ov
                    data[k] += done - ov
                elif self.frame_kind[k] == 0:
                    data[k] += done
                else:
                    overhead[k] += done
        area = np.array(self.queue_area)
        for k in range(K):
            self._absorb_arrivals(k, t_end)
            area[k] = self.queue_area[k] + self.queue[k] * (t_end - self.queue_since[k])
        sending = np.array(self.sending, dtype=np.int64)
        real = np.array([s and r for s, r in zip(self.sending, self.frame_real)], dtype=np.int64)
        return RunMetrics(
            duration=t_end,
            awake_time=awake,
            tx_time=data * T,
            queue_area=area,
            arrivals=np.array(self.arrivals),
            packets_delivered=np.array(self.delivered),
            dummy_packets=np.array(self.dummy),
            final_queue=np.array(self.queue),
            in_flight=sending,
            in_flight_packets=real,
            event_count=self.iterations,
            overhead_time=overhead * T,
            packets_collided=np.array(self.collided),
            packets_lost=np.array(self.lost),
            frames_started=np.array(self.started),
        )


def run_slotted(graph: ConflictGraph, profile: analytic.AggressivenessProfile, traffic: TrafficSpec | None,
                config: SlottedConfig, duration, seed=0, *, sleep_enabled=True, initially_awake=False):
    """Mini-slot simulation of the sleep-enabled scheme with real collisions.

    Back-off counters are uniform on ``[0, W_k - 1]`` with ``W_k`` from
    :func:`contention_window`. BASIC mode loses collided packets after the
    longest collider's frame; RTS_CTS mode only wastes the probes and
    keeps the packet queued. Sleeping links are skipped via
    ``sleep_enabled=False`` (adaptive CSMA).
    """
    if config.mode is SlottedMode.DCF:
        raise ConfigError("use run_dcf_80211 for the DCF baseline", field="mode")
    if not duration > 0:
        raise ConfigError("duration must be positive", field="duration_s")
    if profile.link_count != graph.link_count:
        raise ConfigError("profile size does not match the network")
    windows = contention_window(profile.r, profile.holding_rate, config.slot)
    probe = _slots(config.probe_duration, config.slot) if config.mode is SlottedMode.RTS_CTS else 0
    run = _SlottedRun(graph, config.slot, windows=np.atleast_1d(windows), profile=profile,
                      traffic=traffic, sleep_enabled=sleep_enabled, probe_slots=probe, seed=seed,
                      initially_awake=initially_awake,
                      geometric=config.counter_law is CounterLaw.GEOMETRIC)
    run.advance(int(round(duration / config.slot)))
    return run.metrics()


@dataclass
class DcfResult:
    metrics: object
    cw_log: list | None


def run_dcf_80211(graph: ConflictGraph, config: SlottedConfig, duration, seed=0,
                  holding_rate=analytic.DEFAULT_HOLDING_RATE, log_windows=False) -> DcfResult:
    """Saturated binary-exponential-backoff baseline without sleeping."""
    if config.mode is not SlottedMode.DCF:
        raise ConfigError("config mode must be DCF", field="mode")
    if not duration > 0:
        raise ConfigError("duration must be positive", field="duration_s")
    K = graph.link_count
    profile = analytic.AggressivenessProfile.zeros(K, holding_rate=holding_rate)
    run = _SlottedRun(graph, config.slot, profile=profile, dcf=config.dcf, seed=seed,
                      log_windows=log_windows)
    run.advance(int(round(duration / config.slot)))
    return DcfResult(run.metrics(), run.cw_log)


def sweep_dcf_cw0(graph: ConflictGraph, cw0_values, duration, seed=0, slot=9e-6, max_doublings=10,
                  holding_rate=analytic.DEFAULT_HOLDING_RATE):
    """Mean per-link throughput for each initial window; returns ``(best_cw0, {cw0: throughput})``."""
    results = {}
    for cw0 in cw0_values:
        cfg = SlottedConfig(slot=slot, mode=SlottedMode.DCF, dcf=DcfSettings(int(cw0), max_doublings))
        res = run_dcf_80211(graph, cfg, duration, seed, holding_rate)
        results[int(cw0)] = float(np.mean(res.metrics.throughput))
    best = max(results, key=results.get)
    return best, results
