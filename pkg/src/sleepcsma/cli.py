"""Command-line front end: ``sleepcsma <mode> --config scenario.json``.

Every mode writes ``summary.json`` (sorted keys, no timestamps, so equal
inputs give byte-identical files) plus mode-specific CSV files. Exit code 2
means the configuration was rejected, 1 that a run failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import analytic, regions
from .adaptation import run_adaptive
from .config import MODES, Scenario, load_scenario
from .errors import ConfigError, NoPackets, SizeLimitExceeded, SleepCSMAError
from .optimizer import solve, solve_adaptive_csma
from .simcore import energy_per_packet, run_continuous
from .slotted import DcfSettings, SlottedConfig, run_dcf_80211, run_slotted, sweep_dcf_cw0
from .topology import build_state_index, mask_to_bits

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["mode", "seed", "link_count", "results"],
    "properties": {
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer"},
        "link_count": {"type": "integer", "minimum": 1},
        "results": {"type": "object"},
        "outputs": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}


def _plain(value):
    """Convert numpy containers to JSON values; non-finite floats become ``null``."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _energy_per_packet(metrics, power):
    try:
        return energy_per_packet(metrics, power)
    except NoPackets:
        e = metrics.energy(power)
        total = e["sleep"] + e["sense"] + e["transmit"]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(metrics.packets_delivered > 0, total / np.maximum(metrics.packets_delivered, 1), np.inf)


def _run_summary(metrics, power) -> dict:
    e = metrics.energy(power)
    return {
        "s": metrics.throughput,
        "f_hat": metrics.awake_fraction,
        "mean_queue": metrics.mean_queue,
        "arrivals": metrics.arrivals,
        "packets_delivered": metrics.packets_delivered,
        "dummy_packets": metrics.dummy_packets,
        "packets_collided": metrics.packets_collided,
        "packets_lost": metrics.packets_lost,
        "collision_probability": metrics.collision_probability,
        "energy_j": {"sleep": e["sleep"], "sense": e["sense"], "transmit": e["transmit"],
                     "collided": power.p_transmit * metrics.overhead_time},
        "energy_per_packet_j": _energy_per_packet(metrics, power),
        "duration_s": metrics.duration,
        "event_count": metrics.event_count,
    }


def _groups(scenario: Scenario):
    """Links sharing an awake target, largest target first."""
    f = scenario.traffic().awake_target
    values = sorted(set(np.round(f, 12).tolist()), reverse=True)
    return [{"awake_target": v, "links": [k for k in range(len(f)) if abs(f[k] - v) < 1e-12]}
            for v in values]


def _group_means(groups, per_link):
    per_link = np.asarray(per_link, float)
    return [float(per_link[g["links"]].mean()) for g in groups]


def _optimal(scenario: Scenario, index=None):
    index = index or build_state_index(scenario.graph())
    res = solve(index, scenario.traffic(), scenario.optimizer())
    return res, res.profile(scenario.holding_rate, scenario.sleep_rate)


def _profile(scenario: Scenario, index=None):
    explicit = scenario.explicit_profile()
    if explicit is not None:
        return explicit, None
    res, profile = _optimal(scenario, index)
    return profile, res


# -- modes --------------------------------------------------------------------------


def _analyze(scenario, out, opts):
    index = build_state_index(scenario.graph())
    profile, _ = _profile(scenario, index)
    dist = analytic.stationary_distribution(index, profile)
    K = index.link_count
    states = None
    if len(index) <= 4096:
        states = [{"awake": mask_to_bits(int(a), K), "transmitting": mask_to_bits(int(x), K),
                   "probability": float(p)}
                  for a, x, p in zip(index.a_masks, index.x_masks, dist.probabilities)]
    return {
        "state_count": len(index),
        "log_normalizer": dist.log_normalizer,
        "states": states,
        "links": {"r": profile.r, "rho": profile.rho, "s": analytic.throughput(dist),
                  "f_hat": analytic.awake_fraction(dist)},
    }


def _optimize(scenario, out, opts):
    index = build_state_index(scenario.graph())
    traffic = scenario.traffic()
    res, profile = _optimal(scenario, index)
    dist = analytic.stationary_distribution(index, profile)
    feas = regions.feasibility_margin(index, traffic.lam, traffic.awake_target)
    groups = _groups(scenario)
    return {
        "status": res.status.value,
        "iterations": res.iterations,
        "kkt_residual": res.kkt_residual,
        "objective": res.objective_value,
        "feasibility": {"verdict": feas.verdict.value, "margin": feas.margin},
        "links": {"r_star": res.r_star, "rho_star": res.rho_star,
                  "s": analytic.throughput(dist), "f_hat": analytic.awake_fraction(dist)},
        "groups": [dict(g, r_star=r, rho_star=p) for g, r, p in
                   zip(groups, _group_means(groups, res.r_star), _group_means(groups, res.rho_star))],
    }


def _simulate(scenario, out, opts):
    profile, _ = _profile(scenario)
    res = run_continuous(scenario.graph(), profile, scenario.traffic(), scenario["duration_s"],
                         scenario["seed"], trace=opts.trace, initially_awake=scenario["initially_awake"])
    files = {}
    if opts.trace:
        path = out / scenario["outputs"]["trace"]
        res.trace.write_csv(path)
        files["trace"] = path.name
    summary = _run_summary(res.metrics, scenario.power())
    summary["r"], summary["rho"] = profile.r, profile.rho
    return summary, files


def _slotted(scenario, out, opts):
    profile, _ = _profile(scenario)
    metrics = run_slotted(scenario.graph(), profile, scenario.traffic(), scenario.slotted(),
                          scenario.slotted_duration, scenario["seed"],
                          initially_awake=scenario["initially_awake"])
    summary = _run_summary(metrics, scenario.power())
    summary["r"], summary["rho"] = profile.r, profile.rho
    return summary


def _dcf_block(scenario):
    graph = scenario.graph()
    cfg = scenario.slotted(dcf=True)
    sweep = scenario["slotted"]["cw0_sweep"]
    duration = scenario.slotted_duration
    sweep_table = None
    if sweep:
        best, sweep_table = sweep_dcf_cw0(graph, sweep, duration, scenario["seed"], cfg.slot,
                                          cfg.dcf.max_doublings, scenario.holding_rate[0])
        cfg = SlottedConfig(slot=cfg.slot, mode="DCF", dcf=DcfSettings(best, cfg.dcf.max_doublings))
    res = run_dcf_80211(graph, cfg, duration, scenario["seed"], scenario.holding_rate[0])
    summary = _run_summary(res.metrics, scenario.power())
    summary["cw0"] = cfg.dcf.cw0
    summary["cw0_sweep"] = None if sweep_table is None else {str(k): v for k, v in sweep_table.items()}
    lam = scenario.traffic().lam
    summary["queue_growth"] = res.metrics.growth_flags(lam, scenario.holding_rate)
    summary["network_queue_growth"] = res.metrics.network_growth(lam, scenario.holding_rate)
    return summary


def _dcf(scenario, out, opts):
    return _dcf_block(scenario)


def _adaptive_block(scenario, scheme, trace=False):
    sleep = scheme == "proposed"
    run = run_adaptive(scenario.graph(), scenario.traffic(), scenario.adaptation(), scenario["duration_s"],
                       scenario["seed"], holding_rate=scenario.holding_rate, sleep_rate=scenario.sleep_rate,
                       sleep_enabled=sleep, trace=trace)
    tail = scenario["adaptation"]["tail_s"]
    summary = _run_summary(run.metrics, scenario.power())
    summary["r_tail"] = run.tail_mean(run.r, tail)
    summary["rho_tail"] = run.tail_mean(run.rho, tail) if sleep else np.full(scenario.link_count, np.inf)
    final = run.final_profile.with_params(r=summary["r_tail"],
                                          rho=summary["rho_tail"] if sleep else run.final_profile.rho)
    slotted = run_slotted(scenario.graph(), final, scenario.traffic(), scenario.slotted(),
                          scenario.slotted_duration, scenario["seed"], sleep_enabled=sleep)
    summary["slotted_collision_probability"] = slotted.collision_probability
    return summary, run


def _compare_block(scenario, collect_run=False, trace=False):
    report, runs = {}, {}
    for n, scheme in enumerate(scenario["schemes"]):
        key = scheme if scheme not in report else f"{scheme}_{n}"
        if scheme == "dcf":
            report[key] = _dcf_block(scenario)
        else:
            report[key], runs[key] = _adaptive_block(scenario, scheme, trace and scheme == "proposed")
    first = next(iter(report))
    base = report[first]

    def mean(entry, field):
        return float(np.mean(np.asarray(entry[field], float)))

    fields = ("s", "energy_per_packet_j", "collision_probability", "f_hat")
    deltas = {key: {field: mean(entry, field) - mean(base, field) for field in fields}
              for key, entry in report.items()}
    groups = _groups(scenario)
    group_energy = {key: _group_means(groups, entry["energy_per_packet_j"]) for key, entry in report.items()}
    out = {"schemes": report, "deltas_vs": first, "deltas": deltas,
           "groups": groups, "group_energy_per_packet_j": group_energy}
    return (out, runs) if collect_run else out


def _compare(scenario, out, opts):
    return _compare_block(scenario)


def _region(scenario, out, opts):
    K = scenario.link_count
    if K > 3:
        raise SizeLimitExceeded(f"region sampling supports at most 3 links, got {K}")
    index = build_state_index(scenario.graph())
    boundary = regions.capacity_boundary(index, scenario["region"]["samples"])
    corners = regions.awake_region_corners(scenario.traffic().lam)
    path = out / scenario["outputs"]["region"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set", "sample"] + [f"lambda_{k + 1}" for k in range(K)])
        for i, point in enumerate(boundary):
            w.writerow(["capacity", i] + [repr(float(v)) for v in point])
        for i, point in enumerate(corners):
            w.writerow(["awake", i] + [repr(float(v)) for v in point])
    box = regions.awake_region_bounds(scenario.traffic().lam)
    return {"capacity_samples": len(boundary), "awake_box": box.intervals()}, {"region": path.name}


def _experiment(scenario, out, opts):
    optimum = _optimize(scenario, out, opts)
    comparison, runs = _compare_block(scenario, collect_run=True, trace=opts.trace)
    files = {}
    if "proposed" in runs:
        path = out / scenario["outputs"]["timeseries"]
        runs["proposed"].write_timeseries_csv(path)
        files["timeseries"] = path.name
        if opts.trace:
            trace_path = out / scenario["outputs"]["trace"]
            runs["proposed"].trace.write_csv(trace_path)
            files["trace"] = trace_path.name
    adaptive_r = solve_adaptive_csma(build_state_index(scenario.graph()), scenario.traffic().lam,
                                     scenario.optimizer())
    return {"optimizer": optimum, "adaptive_csma_r_star": adaptive_r.r_star, **comparison}, files


_HANDLERS = {
    "analyze": _analyze,
    "optimize": _optimize,
    "simulate": _simulate,
    "slotted": _slotted,
    "dcf": _dcf,
    "compare": _compare,
    "region": _region,
    "experiment": _experiment,
}


class _Options:
    def __init__(self, trace=False):
        self.trace = trace


def run_scenario(config, mode=None, out_dir=".", seed=None, trace=False) -> dict:
    """Run one scenario and write its outputs; returns the summary written."""
    overrides = {"seed": seed} if seed is not None else None
    scenario = config if isinstance(config, Scenario) else load_scenario(config, overrides)
    mode = mode or scenario["mode"]
    if mode not in _HANDLERS:
        raise ConfigError(f"unknown mode {mode!r}", field="mode")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = _HANDLERS[mode](scenario, out, _Options(trace))
    results, files = result if isinstance(result, tuple) else (result, {})
    summary = {"mode": mode, "seed": scenario["seed"], "link_count": scenario.link_count,
               "results": results}
    if files:
        summary["outputs"] = files
    summary = _plain(summary)
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    text = json.dumps(summary, sort_keys=True, indent=2, allow_nan=False)
    (out / scenario["outputs"]["summary"]).write_text(text + "\n")
    return summary


def compare_schemes(config, out_dir=".", seed=None) -> dict:
    return run_scenario(config, "compare", out_dir, seed)


def emit_region_data(config, out_dir=".", seed=None) -> dict:
    return run_scenario(config, "region", out_dir, seed)


def read_summary(path) -> dict:
    """Load a summary file and check it against :data:`SUMMARY_SCHEMA`."""
    summary = json.loads(Path(path).read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sleepcsma", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", type=Path, help="scenario JSON file (defaults to the reference scenario)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--trace", action="store_true", help="also write the event trace")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("must be nonnegative", field="seed")
        config = args.config if args.config is not None else {}
        run_scenario(config, args.mode, args.out, args.seed, args.trace)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SleepCSMAError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
