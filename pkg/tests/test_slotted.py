import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import two_link_capped_throughput, window_mean_slots
from sleepcsma.analytic import AggressivenessProfile, stationary_distribution, throughput
from sleepcsma.errors import ConfigError, DomainError
from sleepcsma.regions import TrafficSpec
from sleepcsma.slotted import (
    DcfSettings,
    SlottedConfig,
    contention_window,
    max_throughput_under_cap,
    r_max_for_window,
    run_dcf_80211,
    run_slotted,
    sweep_dcf_cw0,
)
from sleepcsma.topology import ConflictGraph

TWO = ConflictGraph.complete(2)
SLOT = 9e-6


def test_window_examples():
    assert contention_window(3.5791, 200.0, SLOT) == pytest.approx(32.0, abs=0.05)
    assert contention_window(0.0, 1000.0, SLOT) == pytest.approx(2 / 9e-3 + 1)


def test_window_mean_matches_backoff_mean():
    for r in (0.0, 1.0, 2.5):
        W = contention_window(r, 1000.0, SLOT)
        assert window_mean_slots(W) * SLOT == pytest.approx(1 / (1000 * math.exp(r)), rel=1e-3)


def test_r_max_examples():
    assert r_max_for_window(32, 200.0, SLOT) == pytest.approx(3.5791, abs=1e-3)
    assert r_max_for_window(32, 200.0, SLOT, 0.5) > r_max_for_window(32, 200.0, SLOT)
    with pytest.raises(DomainError):
        r_max_for_window(32, 200.0, SLOT, 1 - 1 / 32)


@given(st.floats(-3, 6), st.floats(10, 5000), st.floats(1e-6, 2e-5))
def test_window_round_trip(r, H, slot):
    W = contention_window(r, H, slot)
    assert r_max_for_window(W, H, slot) == pytest.approx(r, abs=1e-9)


def test_r_max_inverts_window_at_integer_floors():
    for W0 in (8, 32, 128):
        assert contention_window(r_max_for_window(W0, 200.0, SLOT), 200.0, SLOT) == pytest.approx(W0, abs=1e-9)


def test_capped_two_link_row():
    res = max_throughput_under_cap(TWO, 1.0)
    assert res.r_max[0] == pytest.approx(3.5791, abs=1e-3)
    assert res.total_throughput == pytest.approx(two_link_capped_throughput(res.r_max[0]), abs=1e-3)


def test_uncapped_limit():
    res = max_throughput_under_cap(TWO, 1.0, window_floor=2)
    looser = max_throughput_under_cap(TWO, 1.0, window_floor=8)
    assert res.total_throughput > looser.total_throughput > max_throughput_under_cap(TWO, 1.0).total_throughput
    assert res.total_throughput > 0.99


def test_single_link_never_collides():
    m = run_slotted(ConflictGraph.empty(1), AggressivenessProfile.create([3.0], [1.0]), None,
                    SlottedConfig(), 2.0, seed=1)
    assert m.packets_collided[0] == 0
    assert m.dummy_packets[0] > 0


def test_non_interfering_links_never_collide():
    m = run_slotted(ConflictGraph.empty(3), AggressivenessProfile.create([3.0] * 3, [1.0] * 3), None,
                    SlottedConfig(), 1.0, seed=2)
    np.testing.assert_array_equal(m.packets_collided, 0)


@pytest.mark.parametrize("mode,probe", [("BASIC", 0.0), ("RTS_CTS", 2e-5)])
def test_frame_conservation(mode, probe):
    g = ConflictGraph.complete(3)
    prof = AggressivenessProfile.create([2.0, 1.5, 1.0], [0.5, 0.0, 1.0])
    m = run_slotted(g, prof, TrafficSpec([0.2] * 3, [0.3] * 3), SlottedConfig(probe_duration=probe, mode=mode),
                    3.0, seed=3)
    assert np.all(m.packets_collided > 0)
    np.testing.assert_array_equal(
        m.packets_delivered + m.dummy_packets + m.packets_collided + m.in_flight, m.frames_started)
    np.testing.assert_array_equal(
        m.arrivals, m.packets_delivered + m.packets_lost + m.final_queue + m.in_flight_packets)


def test_rts_keeps_collided_packets():
    g = ConflictGraph.complete(3)
    prof = AggressivenessProfile.create([2.0] * 3, [0.5] * 3)
    m = run_slotted(g, prof, TrafficSpec([0.2] * 3, [0.3] * 3),
                    SlottedConfig(probe_duration=2e-5, mode="RTS_CTS"), 2.0, seed=4)
    assert np.all(m.packets_collided > 0)
    np.testing.assert_array_equal(m.packets_lost, 0)


def test_basic_collisions_cost_more_airtime_than_probes():
    g = ConflictGraph.complete(3)
    prof = AggressivenessProfile.create([2.0] * 3, [0.5] * 3)
    basic = run_slotted(g, prof, None, SlottedConfig(), 5.0, seed=5)
    rts = run_slotted(g, prof, None, SlottedConfig(probe_duration=SLOT, mode="RTS_CTS"), 5.0, seed=5)
    per_basic = basic.overhead_time.sum() / basic.packets_collided.sum()
    assert per_basic > 50 * SLOT
    assert rts.throughput.sum() > basic.throughput.sum()


def test_rts_matches_continuous_throughput():
    prof = AggressivenessProfile.create([0.5, 0.0], [0.5, 1.0])
    target = throughput(stationary_distribution(TWO, prof))
    cfg = SlottedConfig(probe_duration=SLOT, mode="RTS_CTS", counter_law="GEOMETRIC")
    m = run_slotted(TWO, prof, None, cfg, 100.0, seed=0)
    np.testing.assert_allclose(m.throughput, target, rtol=0.03)


def test_rts_uniform_counters_always_awake():
    prof = AggressivenessProfile.create([0.5, 0.0], [0.0, 0.0])
    e = np.exp(prof.r)
    target = e / (1 + e.sum())
    m = run_slotted(TWO, prof, None, SlottedConfig(probe_duration=SLOT, mode="RTS_CTS"), 100.0, seed=0,
                    sleep_enabled=False)
    np.testing.assert_allclose(m.throughput, target, rtol=0.03)
    np.testing.assert_allclose(m.awake_fraction, 1.0)


def test_smaller_slots_approach_continuous_model():
    prof = AggressivenessProfile.create([0.5, 0.0], [0.5, 1.0], holding_rate=1e4, sleep_rate=1e4)
    target = throughput(stationary_distribution(TWO, prof))
    gaps, collisions = [], []
    for slot in (9e-6, 3e-6, 1e-6):
        runs = [run_slotted(TWO, prof, None, SlottedConfig(slot=slot, counter_law="GEOMETRIC"), 5.0, seed=s)
                for s in range(2)]
        gaps.append(np.abs(np.mean([m.throughput for m in runs], axis=0) - target).sum())
        collisions.append(np.mean([m.collision_probability.mean() for m in runs]))
    assert gaps[0] > gaps[1] > gaps[2]
    assert collisions[0] > collisions[1] > collisions[2]


def test_run_is_deterministic():
    prof = AggressivenessProfile.create([1.0, 1.0], [0.0, 0.0])
    a = run_slotted(TWO, prof, TrafficSpec([0.2, 0.2], [0.3, 0.3]), SlottedConfig(), 1.0, seed=9)
    b = run_slotted(TWO, prof, TrafficSpec([0.2, 0.2], [0.3, 0.3]), SlottedConfig(), 1.0, seed=9)
    np.testing.assert_array_equal(a.tx_time, b.tx_time)
    np.testing.assert_array_equal(a.packets_collided, b.packets_collided)


def test_dcf_single_link_renewal():
    cfg = SlottedConfig(mode="DCF", dcf=DcfSettings(cw0=32))
    m = run_dcf_80211(ConflictGraph.empty(1), cfg, 20.0, seed=0).metrics
    expected = 1e-3 / (1e-3 + SLOT * (32 - 1) / 2)
    assert m.throughput[0] == pytest.approx(expected, abs=0.005)
    assert m.packets_collided[0] == 0


def test_dcf_fixed_tiny_window_collides_half_the_rounds():
    cfg = SlottedConfig(mode="DCF", dcf=DcfSettings(cw0=2, max_doublings=0))
    m = run_dcf_80211(TWO, cfg, 20.0, seed=1).metrics
    collision_rounds = m.packets_collided.sum() / 2
    rounds = collision_rounds + m.packets_delivered.sum()
    assert collision_rounds / rounds == pytest.approx(0.5, abs=0.02)


def test_dcf_window_law():
    cfg = SlottedConfig(mode="DCF", dcf=DcfSettings(cw0=2, max_doublings=3))
    res = run_dcf_80211(ConflictGraph.complete(12), cfg, 1.0, seed=2, log_windows=True)
    cap = cfg.dcf.cw_max
    reached_cap = False
    for log in res.cw_log:
        assert log[0] == 2
        assert max(log) <= cap
        for prev, cur in zip(log, log[1:]):
            assert cur in (2, min(2 * prev, cap))
        reached_cap |= cap in log
    assert reached_cap
    assert np.all(res.metrics.awake_fraction == 1.0)


def test_dcf_is_saturated():
    cfg = SlottedConfig(mode="DCF")
    m = run_dcf_80211(ConflictGraph.complete(3), cfg, 1.0, seed=3).metrics
    np.testing.assert_array_equal(m.dummy_packets, 0)
    np.testing.assert_array_equal(m.packets_lost, 0)


def test_cw0_sweep_returns_best():
    best, table = sweep_dcf_cw0(ConflictGraph.complete(4), [4, 64, 1024], 1.0, seed=0)
    assert best == max(table, key=table.get)
    assert table[64] > table[4] and table[64] > table[1024]


@pytest.mark.parametrize("kwargs", [
    {"slot": 0.0}, {"window_floor": 1}, {"probe_duration": -1.0},
    {"mode": "RTS_CTS"}, {"mode": "CSMA_CA"}, {"counter_law": "POISSON"},
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SlottedConfig(**kwargs)


def test_dcf_settings_errors():
    with pytest.raises(ConfigError):
        DcfSettings(cw0=1)
    with pytest.raises(ConfigError):
        DcfSettings(max_doublings=-1)


def test_mode_mismatches():
    prof = AggressivenessProfile.zeros(2)
    with pytest.raises(ConfigError):
        run_slotted(TWO, prof, None, SlottedConfig(mode="DCF"), 1.0)
    with pytest.raises(ConfigError):
        run_dcf_80211(TWO, SlottedConfig(), 1.0)
    with pytest.raises(ConfigError):
        run_slotted(TWO, prof, None, SlottedConfig(), 0.0)
    with pytest.raises(ConfigError):
        run_slotted(ConflictGraph.complete(3), prof, None, SlottedConfig(), 1.0)
