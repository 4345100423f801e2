"""Scenario files: JSON validated against a strict schema, merged over defaults.

The defaults describe the 12-link reference scenario: a complete conflict
graph, ``lambda = 0.077`` on every link, PDT slack 0.8/0.4/0.1 in three
groups of four, 1 ms holding and sleep means, 10 ms update frames with step
0.1, 100 s runs.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .adaptation import AdaptationConfig, DynamicPdt, PdtMode
from .analytic import AggressivenessProfile
from .errors import ConfigError
from .optimizer import OptimizerSettings
from .regions import TrafficSpec
from .simcore import PowerModel
from .slotted import DcfSettings, SlottedConfig
from .topology import ConflictGraph

MODES = ("analyze", "optimize", "simulate", "slotted", "dcf", "compare", "region", "experiment")
SCHEMES = ("proposed", "adaptive_csma", "dcf")

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _per_link(item):
    return {"oneOf": [item, {"type": "array", "items": item, "minItems": 1}]}


def _block(properties):
    return {"type": "object", "additionalProperties": False, "properties": properties}


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": list(MODES)},
        "graph": _block({
            "link_count": {"type": "integer", "minimum": 1},
            "edges": {"oneOf": [
                {"enum": ["complete", "none"]},
                {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                            "minItems": 2, "maxItems": 2}},
            ]},
        }),
        "lambda": _per_link({"type": "number", "minimum": 0, "maximum": 1}),
        "omega": _per_link(_nonneg),
        "f": _per_link({"type": "number", "minimum": 0, "maximum": 1}),
        "holding_mean_s": _per_link(_pos),
        "sleep_mean_s": _per_link(_pos),
        "duration_s": _pos,
        "seed": {"type": "integer", "minimum": 0},
        "initially_awake": {"type": "boolean"},
        "profile": {"oneOf": [
            {"enum": ["optimal", "zero"]},
            _block({"r": _per_link(_number), "rho": _per_link(_number)}),
        ]},
        "schemes": {"type": "array", "items": {"enum": list(SCHEMES)}, "minItems": 1},
        "adaptation": _block({
            "update_frame_s": _pos,
            "step_size": _pos,
            "step_size_rho": {"oneOf": [_pos, {"type": "null"}]},
            "step_decay": _nonneg,
            "convergence_frame_s": _pos,
            "estimate_lambda": {"type": "boolean"},
            "arrival_window_s": {"oneOf": [_pos, {"type": "null"}]},
            "pdt_mode": {"enum": ["STATIC", "DYNAMIC"]},
            "dynamic": {"oneOf": [{"type": "null"}, _block({
                "omega_min": _pos, "omega_max": _pos, "q0": _pos})]},
            "tail_s": _pos,
        }),
        "slotted": _block({
            "slot_s": _pos,
            "window_floor": {"type": "integer", "minimum": 2},
            "probe_duration_s": _nonneg,
            "mode": {"enum": ["BASIC", "RTS_CTS"]},
            "counter_law": {"enum": ["UNIFORM", "GEOMETRIC"]},
            "cw0": {"type": "integer", "minimum": 2},
            "max_doublings": {"type": "integer", "minimum": 0},
            "cw0_sweep": {"type": "array", "items": {"type": "integer", "minimum": 2}},
            "duration_s": {"oneOf": [_pos, {"type": "null"}]},
        }),
        "power": _block({"p_sleep_w": _nonneg, "p_transmit_w": _nonneg, "p_sense_w": _nonneg}),
        "optimizer": _block({
            "step_size": _pos,
            "max_iterations": {"type": "integer", "minimum": 0},
            "gradient_tolerance": _pos,
            "divergence_norm_cap": _pos,
            "boundary_margin": _pos,
        }),
        "region": _block({"samples": {"type": "integer", "minimum": 2}}),
        "outputs": _block({
            "summary": {"type": "string"},
            "timeseries": {"type": "string"},
            "trace": {"type": "string"},
            "region": {"type": "string"},
        }),
    },
}

DEFAULTS = {
    "mode": "experiment",
    "graph": {"link_count": 12, "edges": "complete"},
    "lambda": 0.077,
    "omega": [0.8] * 4 + [0.4] * 4 + [0.1] * 4,
    "holding_mean_s": 1e-3,
    "sleep_mean_s": 1e-3,
    "duration_s": 100.0,
    "seed": 0,
    "initially_awake": False,
    "profile": "optimal",
    "schemes": ["proposed", "adaptive_csma", "dcf"],
    "adaptation": {
        "update_frame_s": 0.01,
        "step_size": 0.1,
        "step_size_rho": None,
        "step_decay": 0.0,
        "convergence_frame_s": 1.0,
        "estimate_lambda": False,
        "arrival_window_s": None,
        "pdt_mode": "STATIC",
        "dynamic": None,
        "tail_s": 20.0,
    },
    "slotted": {
        "slot_s": 9e-6,
        "window_floor": 32,
        "probe_duration_s": 0.0,
        "mode": "BASIC",
        "counter_law": "UNIFORM",
        "cw0": 32,
        "max_doublings": 10,
        "cw0_sweep": [16, 32, 64, 128, 256, 512],
        "duration_s": None,
    },
    "power": {"p_sleep_w": 1.5e-6, "p_transmit_w": 73e-3, "p_sense_w": 45e-3},
    "optimizer": {
        "step_size": 1.0,
        "max_iterations": 100_000,
        "gradient_tolerance": 1e-9,
        "divergence_norm_cap": 50.0,
        "boundary_margin": 1e-3,
    },
    "region": {"samples": 33},
    "outputs": {
        "summary": "summary.json",
        "timeseries": "timeseries.csv",
        "trace": "trace.csv",
        "region": "region.csv",
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts.extend(extra[:1])
    return ".".join(parts) or "<root>"


def validate(raw: dict) -> None:
    """Raise :class:`ConfigError` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, field=_path(err))


@dataclass(frozen=True)
class Scenario:
    """A validated scenario with every field resolved to a concrete value."""

    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def link_count(self) -> int:
        return self.raw["graph"]["link_count"]

    def _vector(self, key):
        value = np.asarray(self.raw[key], dtype=float)
        K = self.link_count
        if value.ndim == 0:
            return np.full(K, float(value))
        if value.shape != (K,):
            raise ConfigError(f"expected {K} entries, got {value.shape[0]}", field=key)
        return value

    def graph(self) -> ConflictGraph:
        K = self.link_count
        edges = self.raw["graph"]["edges"]
        if edges == "complete":
            return ConflictGraph.complete(K)
        if edges == "none":
            return ConflictGraph.empty(K)
        try:
            return ConflictGraph.from_edges(K, [tuple(e) for e in edges])
        except ValueError as exc:
            raise ConfigError(str(exc), field="graph.edges") from exc

    @property
    def holding_rate(self) -> np.ndarray:
        return 1.0 / self._vector("holding_mean_s")

    @property
    def sleep_rate(self) -> np.ndarray:
        return 1.0 / self._vector("sleep_mean_s")

    def traffic(self) -> TrafficSpec:
        lam = self._vector("lambda")
        try:
            if "f" in self.raw:
                return TrafficSpec.from_awake_target(lam, self._vector("f"))
            return TrafficSpec(lam, self._vector("omega"))
        except ValueError as exc:
            raise ConfigError(str(exc), field="f" if "f" in self.raw else "omega") from exc

    def explicit_profile(self) -> AggressivenessProfile | None:
        choice = self.raw["profile"]
        K = self.link_count
        if choice == "optimal":
            return None
        if choice == "zero":
            return AggressivenessProfile.zeros(K, self.holding_rate, self.sleep_rate)
        r = np.broadcast_to(np.asarray(choice.get("r", 0.0), float), (K,))
        rho = np.broadcast_to(np.asarray(choice.get("rho", 0.0), float), (K,))
        return AggressivenessProfile(r, rho, self.holding_rate, self.sleep_rate)

    def adaptation(self) -> AdaptationConfig:
        a = self.raw["adaptation"]
        dyn = a["dynamic"]
        return AdaptationConfig(
            update_frame=a["update_frame_s"],
            step_size=a["step_size"],
            step_size_rho=a["step_size_rho"],
            convergence_frame=a["convergence_frame_s"],
            arrival_estimation_window=a["arrival_window_s"],
            pdt_mode=PdtMode(a["pdt_mode"]),
            dynamic=None if dyn is None else DynamicPdt(dyn["omega_min"], dyn["omega_max"], dyn["q0"]),
            estimate_lambda=a["estimate_lambda"],
            step_decay=a["step_decay"],
        )

    def slotted(self, dcf=False) -> SlottedConfig:
        s = self.raw["slotted"]
        return SlottedConfig(
            slot=s["slot_s"],
            window_floor=s["window_floor"],
            probe_duration=s["probe_duration_s"],
            mode="DCF" if dcf else s["mode"],
            dcf=DcfSettings(s["cw0"], s["max_doublings"]),
            counter_law=s["counter_law"],
        )

    @property
    def slotted_duration(self) -> float:
        return self.raw["slotted"]["duration_s"] or self.raw["duration_s"]

    def power(self) -> PowerModel:
        p = self.raw["power"]
        return PowerModel(p["p_sleep_w"], p["p_transmit_w"], p["p_sense_w"])

    def optimizer(self) -> OptimizerSettings:
        return OptimizerSettings(**self.raw["optimizer"])


def load_scenario(source, overrides: dict | None = None) -> Scenario:
    """Read a JSON file (path) or mapping, validate it and fill in defaults."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"cannot read {source}", field="config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", field="config") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", field="<root>")
    validate(raw)
    merged = _merge(DEFAULTS, raw)
    if overrides:
        merged = _merge(merged, overrides)
        validate(merged)
    if "f" in raw and "omega" in raw:
        raise ConfigError("give either omega or f, not both", field="f")
    if "f" in raw:
        merged.pop("omega", None)
    elif "omega" not in raw and np.ndim(merged["omega"]) and len(merged["omega"]) != merged["graph"]["link_count"]:
        raise ConfigError("no default PDT slack for this link count; give omega or f", field="omega")
    scenario = Scenario(merged)
    # resolve everything once so bad values fail before any run starts
    scenario.graph()
    scenario.traffic()
    scenario.explicit_profile()
    adaptation = scenario.adaptation()
    if adaptation.dynamic is not None:
        adaptation.dynamic.check(scenario.traffic().lam)
    scenario.slotted()
    scenario.power()
    scenario.optimizer()
    return scenario
