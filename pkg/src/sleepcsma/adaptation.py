"""Online, per-link adaptation of the aggressiveness pair ``(r, rho)``.

Time is cut into update frames. At the end of each frame every link looks
only at its own measurements (the fraction of the frame it spent
transmitting, the fraction it spent awake, its time-average backlog) and
moves along the stochastic gradient:

    r   += step * (lam - s_hat)
    rho += step * (lam + omega - f_hat)

New rates take effect immediately: links in back-off and asleep redraw
their running timers at the new rates; transmitting links carry on.
"""
from __future__ import annotations

import csv
import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .analytic import AggressivenessProfile, DEFAULT_HOLDING_RATE, DEFAULT_SLEEP_RATE
from .errors import ConfigError, EmptyFrame
from .regions import TrafficSpec
from .simcore import SLEEP, TX_END, TX_START, WAKE, ContinuousSimulator, Mode, RunMetrics, Trace
from .topology import ConflictGraph


class PdtMode(str, enum.Enum):
    STATIC = "STATIC"
    DYNAMIC = "DYNAMIC"


@dataclass(frozen=True)
class DynamicPdt:
    """Saturating backlog response ``omega_min + (omega_max - omega_min) Q / (Q + q0)``."""

    omega_min: float
    omega_max: float
    q0: float = 1.0

    def check(self, lam):
        lam = np.asarray(lam, float)
        if not 0 < self.omega_min < self.omega_max:
            raise ConfigError("need 0 < omega_min < omega_max", field="omega_min")
        if np.any(self.omega_max >= 1.0 - lam):
            raise ConfigError("omega_max must stay below 1 - lambda on every link", field="omega_max")
        if not self.q0 > 0:
            raise ConfigError("q0 must be positive", field="q0")


@dataclass(frozen=True)
class AdaptationConfig:
    """Frame lengths (seconds), step sizes and the PDT policy.

    ``step_size_rho`` defaults to ``step_size``. Links use their known
    arrival rate unless ``estimate_lambda`` is set; the estimate then runs
    over everything seen so far (``arrival_estimation_window=None``) or a
    trailing window of that many seconds.
    """

    update_frame: float = 0.01
    step_size: float = 0.1
    step_size_rho: float | None = None
    convergence_frame: float = 1.0
    arrival_estimation_window: float | None = None
    pdt_mode: PdtMode = PdtMode.STATIC
    dynamic: DynamicPdt | None = None
    estimate_lambda: bool = False
    step_decay: float = 0.0

    def __post_init__(self):
        if not self.update_frame > 0:
            raise ConfigError("update frame must be positive", field="update_frame")
        if not self.step_size > 0:
            raise ConfigError("step size must be positive", field="step_size")
        if self.step_size_rho is not None and not self.step_size_rho > 0:
            raise ConfigError("step size must be positive", field="step_size_rho")
        if not self.convergence_frame > 0:
            raise ConfigError("convergence frame must be positive", field="convergence_frame")
        if self.arrival_estimation_window is not None and not self.arrival_estimation_window > 0:
            raise ConfigError("estimation window must be positive", field="arrival_estimation_window")
        if self.step_decay < 0:
            raise ConfigError("step decay must be nonnegative", field="step_decay")
        object.__setattr__(self, "pdt_mode", PdtMode(self.pdt_mode))
        if self.pdt_mode is PdtMode.DYNAMIC and self.dynamic is None:
            raise ConfigError("dynamic PDT mode needs omega_min/omega_max/q0", field="dynamic")

    def steps(self, frame_index=0):
        """``(step_r, step_rho)`` for frame ``frame_index``, after optional ``1 / (1 + c m)`` decay."""
        scale = 1.0 / (1.0 + self.step_decay * frame_index)
        rho_step = self.step_size if self.step_size_rho is None else self.step_size_rho
        return self.step_size * scale, rho_step * scale


@dataclass(frozen=True)
class FrameMeasurement:
    s_measured: np.ndarray
    f_measured: np.ndarray
    q_average: np.ndarray


def _measure_trace(trace: Trace, start, end):
    K = trace.link_count
    awake = np.zeros(K)
    tx = np.zeros(K)
    area = np.zeros(K)
    a, x = trace.initial_awake, trace.initial_transmitting
    queue = np.zeros(K)
    last = trace.start_time

    def accrue(upto):
        lo, hi = max(last, start), min(upto, end)
        if hi > lo:
            for k in range(K):
                if (a >> k) & 1:
                    awake[k] += hi - lo
                if (x >> k) & 1:
                    tx[k] += hi - lo
            area[:] += queue * (hi - lo)

    for t, k, kind, q in trace.events:
        if t > end:
            break
        accrue(t)
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
        queue[k] = q
    accrue(end)
    return awake, tx, area


def measure_frame(source, start=None, end=None) -> FrameMeasurement:
    """Time averages over one frame.

    ``source`` is either a pair of accumulator snapshots (from
    :meth:`ContinuousSimulator.accumulators`) taken at the frame's two ends,
    or a :class:`Trace` together with the interval ``[start, end]``.
    """
    if isinstance(source, Trace):
        if start is None or end is None:
            raise ValueError("a trace needs the frame interval")
        if end > trace_end(source) + 1e-12 or start < source.start_time:
            raise ValueError("frame lies outside the traced interval")
        span = end - start
        if not span > 0:
            raise EmptyFrame("frame has zero length")
        awake, tx, area = _measure_trace(source, start, end)
    else:
        before, after = source
        span = after["time"] - before["time"]
        if not span > 0:
            raise EmptyFrame("frame has zero length")
        awake = after["awake"] - before["awake"]
        tx = after["tx"] - before["tx"]
        area = after["queue_area"] - before["queue_area"]
    return FrameMeasurement(tx / span, awake / span, area / span)


def trace_end(trace: Trace):
    return trace.end_time if trace.end_time else (trace.events[-1][0] if trace.events else trace.start_time)


def update_aggressiveness(r, rho, measurement: FrameMeasurement, lam, omega, config: AdaptationConfig,
                          frame_index=0):
    """One stochastic gradient step; returns the new ``(r, rho)``."""
    step_r, step_rho = config.steps(frame_index)
    lam = np.asarray(lam, float)
    new_r = np.asarray(r, float) + step_r * (lam - measurement.s_measured)
    new_rho = np.asarray(rho, float) + step_rho * (lam + np.asarray(omega, float) - measurement.f_measured)
    return new_r, new_rho


def estimate_arrival_rate(arrival_count, window, holding_rate=DEFAULT_HOLDING_RATE):
    """Arrivals per second over ``window``, in units of the link capacity."""
    if not np.all(np.asarray(window) > 0):
        raise ValueError("estimation window must be positive")
    return np.asarray(arrival_count, float) / window / np.asarray(holding_rate, float)


def dynamic_pdt(q_average, lam, params: DynamicPdt) -> np.ndarray:
    """PDT parameter that grows with the backlog, inside ``(0, 1 - lam)``."""
    params.check(lam)
    q = np.asarray(q_average, float)
    if np.any(q < 0):
        raise ValueError("queue averages must be nonnegative")
    with np.errstate(invalid="ignore"):
        frac = np.where(np.isinf(q), 1.0, q / (q + params.q0))
    return params.omega_min + (params.omega_max - params.omega_min) * frac


def apply_frame_boundary(sim: ContinuousSimulator, profile: AggressivenessProfile):
    """Install a new profile, redrawing the timers the new rates govern.

    Back-off links get a fresh back-off timer, sleeping links a fresh wake
    timer; transmitting links and every sleep timer are left as they are.
    """
    sim.set_profile(profile)
    for k in range(sim.K):
        mode = sim.mode(k)
        if mode is Mode.AWAKE_BACKOFF:
            sim.redraw_backoff(k)
        elif mode is Mode.SLEEPING:
            sim.redraw_wake(k)


@dataclass
class AdaptiveRun:
    """History of an adaptive run: one row per frame, one column per link."""

    frame_end: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    s_hat: np.ndarray
    f_hat: np.ndarray
    q_avg: np.ndarray
    omega: np.ndarray
    lam_hat: np.ndarray
    metrics: RunMetrics
    trace: Trace | None = None
    final_profile: AggressivenessProfile | None = field(default=None, repr=False)

    def tail_mean(self, values, seconds):
        """Average of a per-frame series over frames ending in the last ``seconds``."""
        keep = self.frame_end > self.frame_end[-1] - seconds
        return np.asarray(values)[keep].mean(axis=0)

    def write_timeseries_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "link", "r", "rho", "s_hat", "f_hat", "q_avg"])
            for m in range(len(self.frame_end)):
                for k in range(self.r.shape[1]):
                    w.writerow([m, k, repr(float(self.r[m, k])), repr(float(self.rho[m, k])),
                                repr(float(self.s_hat[m, k])), repr(float(self.f_hat[m, k])),
                                repr(float(self.q_avg[m, k]))])


def run_adaptive(graph: ConflictGraph, traffic: TrafficSpec, config: AdaptationConfig, duration,
                 seed=0, *, initial: AggressivenessProfile | None = None,
                 holding_rate=DEFAULT_HOLDING_RATE, sleep_rate=DEFAULT_SLEEP_RATE,
                 sleep_enabled=True, trace=False) -> AdaptiveRun:
    """Simulate with per-frame adaptation for ``duration`` seconds.

    Links with sleeping disabled (plain adaptive CSMA) stay awake and only
    adapt ``r``. In DYNAMIC PDT mode ``omega`` is recomputed every
    convergence frame from the backlog averaged over it.
    """
    K = graph.link_count
    if not duration > 0:
        raise ConfigError("duration must be positive", field="duration_s")
    lam_true = np.asarray(traffic.lam, float)
    profile = initial or AggressivenessProfile.zeros(K, holding_rate, sleep_rate)
    sleep_mask = np.broadcast_to(np.asarray(sleep_enabled, bool), (K,))
    dynamic = config.pdt_mode is PdtMode.DYNAMIC
    if dynamic:
        config.dynamic.check(lam_true)
    sim = ContinuousSimulator(graph, profile, traffic, seed, sleep_enabled=sleep_mask, trace=trace)
    H = profile.holding_rate

    n_frames = int(np.floor(duration / config.update_frame + 1e-9))
    if n_frames < 1:
        raise ConfigError("duration shorter than one update frame", field="duration_s")
    frames_per_convergence = max(1, int(round(config.convergence_frame / config.update_frame)))
    window = config.arrival_estimation_window
    history = deque([(0.0, np.zeros(K))])

    r = profile.r.copy()
    rho = profile.rho.copy()
    omega = dynamic_pdt(np.zeros(K), lam_true, config.dynamic) if dynamic else traffic.omega.copy()
    cols = {name: np.empty((n_frames, K)) for name in ("r", "rho", "s", "f", "q", "omega", "lam")}
    frame_end = np.empty(n_frames)
    before = sim.accumulators()
    conv_start = before
    for m in range(n_frames):
        t = (m + 1) * config.update_frame
        sim.advance_to(t)
        after = sim.accumulators()
        meas = measure_frame((before, after))
        if not config.estimate_lambda:
            lam_hat = lam_true
        elif window is None:
            lam_hat = estimate_arrival_rate(after["arrivals"], t, H)
        else:
            # reference point: the latest snapshot at least one window old
            history.append((t, after["arrivals"]))
            while len(history) > 1 and history[1][0] <= t - window + 1e-12:
                history.popleft()
            t0, a0 = history[0]
            lam_hat = estimate_arrival_rate(after["arrivals"] - a0, t - t0, H)
        if dynamic and (m + 1) % frames_per_convergence == 0:
            q_conv = measure_frame((conv_start, after)).q_average
            omega = dynamic_pdt(q_conv, lam_true, config.dynamic)
            conv_start = after
        new_r, new_rho = update_aggressiveness(r, rho, meas, lam_hat, omega, config, m)
        rho = np.where(sleep_mask, new_rho, rho)
        r = new_r
        profile = profile.with_params(r=r, rho=rho)
        apply_frame_boundary(sim, profile)
        frame_end[m] = t
        for name, value in (("r", r), ("rho", rho), ("s", meas.s_measured), ("f", meas.f_measured),
                            ("q", meas.q_average), ("omega", omega), ("lam", lam_hat)):
            cols[name][m] = value
        before = after
    metrics = sim.metrics()
    return AdaptiveRun(frame_end, cols["r"], cols["rho"], cols["s"], cols["f"], cols["q"],
                       cols["omega"], cols["lam"], metrics, sim.trace, profile)
