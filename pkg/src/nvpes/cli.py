"""Command-line front end.

Reads a line-oriented ``key = value`` config with ``[section]`` headers,
runs one experiment, and writes plot-ready CSV/JSON tables plus a metadata
sidecar. Identical config and seed give byte-identical outputs.

Sections: ``[model]`` (rate overrides), ``[drive]`` (schedule segments),
``[simulation]`` (grids and tolerances), ``[experiment]`` (one experiment
plus its sweep values), ``[output]`` (directory, format, seed, workers).
Units are fixed per key and may be written after the value
(``gamma0 = 63 MHz``); a wrong unit is an error. Lists are
whitespace-separated numbers.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .correlation import g2 as g2_curve
from .correlation import mandel_q
from .errors import ConfigError, SimulationError
from .experiments import (
    ExperimentResult,
    chernoff_map,
    cwodmr_sweep,
    rabi_experiment,
    saturation_curve,
)
from .model import (
    DriveSchedule,
    DriveSegment,
    RateSet,
    default_n_max,
    evolve,
    initial_state,
)
from .statistics import pes
from .validation import validation_suite

__all__ = ["RunConfig", "parse_config", "run", "main"]

EXPERIMENTS = ("pes", "chernoff-map", "rabi", "g2", "mandel", "saturation",
               "odmr", "validate")

NORMALIZATION_GATE = 1e-8

# Key schema: section -> key -> (kind, unit, default). Kind is one of
# float/int/str/bool/floats/ints or a special parser name.
_MODEL_UNITS = {
    "gamma0": "MHz", "gamma_f0": "MHz", "gamma_f1": "MHz",
    "gamma_s0": "MHz", "gamma_s1": "MHz", "gamma1": "MHz", "gamma2": "MHz",
    "c_laser": "MHz/uW", "zfs": "rad/us", "gyro": "rad/us/mT",
}

_SIM_KEYS = {
    "grid_points": ("int", None, 200),
    "rel_tol": ("float", None, 1e-8),
    "abs_tol": ("float", None, 1e-10),
    "n_max": ("n_max", None, "auto"),
    "tail_tol": ("float", None, 1e-10),
    "collection": ("float", None, 1.0),
}

_OUTPUT_KEYS = {
    "directory": ("str", None, "out"),
    "format": ("choice:csv|json|both", None, "csv"),
    "seed": ("int", None, 1234),
    "workers": ("int", None, 0),       # 0 = all available cores
    "timing": ("bool", None, False),
}

_EXPERIMENT_KEYS = {
    "pes": {
        "initial": ("choice:thermal|ket0|ket1|ketm1", None, "thermal"),
    },
    "chernoff-map": {
        "powers": ("floats", "MHz", (2.0, 5.0, 10.0, 20.0, 40.0)),
        "horizon": ("float", "us", 3.0),
        "omega": ("float", "rad/us", 10.0),
        "delta": ("float", "rad/us", 10.0),
    },
    "rabi": {
        "omega": ("float", "rad/us", 10.0),
        "delta": ("float", "rad/us", 0.0),
        "tau_max": ("float", "us", 1.885),
        "tau_points": ("int", None, 48),
        "readout_pump": ("float", "MHz", 20.0),
        "readout_duration": ("float", "us", 0.3),
        "init_duration": ("float", "us", 2.0),
        "settle": ("float", "us", 1.0),
        "shots": ("int", None, 3000),
    },
    "g2": {
        "powers": ("floats", "MHz", (5.0, 15.0, 20.0)),
        "horizon": ("float", "us", 3.0),
    },
    "mandel": {
        "powers": ("floats", "MHz", (5.0, 10.0, 20.0)),
        "horizon": ("float", "us", 3.0),
    },
    "saturation": {
        "powers_uw": ("floats", "uW", tuple(float(p) for p in
                                            (0, 20, 50, 100, 150, 200, 300,
                                             400, 600, 800, 1200, 2000))),
        "collection_scale": ("float", None, 1.0),
        "background_slope": ("float", "1/uW", 0.0),
    },
    "odmr": {
        "omega": ("float", "rad/us", 16.0),
        "pump_rate": ("float", "MHz", 20.0),
        "detuning_max": ("float", "rad/us", 150.0),
        "points": ("int", None, 61),
        "freq_min": ("float", "rad/us", None),
        "freq_max": ("float", "rad/us", None),
        "b_field": ("float", "mT", None),
        "branch": ("choice:+|-", None, "+"),
    },
    "validate": {
        "sets": ("int", None, 5),
        "times": ("floats", "us", (0.1, 0.7, 3.0)),
        "phases": ("int", None, 256),
    },
}


@dataclass(frozen=True)
class SimSettings:
    grid_points: int = 200
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    n_max: int | None = None           # None = automatic heuristic
    tail_tol: float = 1e-10
    collection: float = 1.0


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    format: str = "csv"
    seed: int = 1234
    workers: int = 0
    timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration (defaults filled in)."""

    experiment_type: str
    rates: RateSet = field(default_factory=RateSet)
    schedule: DriveSchedule | None = None
    simulation: SimSettings = field(default_factory=SimSettings)
    experiment: dict = field(default_factory=dict)
    output: OutputSettings = field(default_factory=OutputSettings)

    def render(self) -> str:
        """Canonical config text; parsing it reproduces this RunConfig."""
        lines = ["[model]"]
        for name in _MODEL_UNITS:
            lines.append(f"{name} = {getattr(self.rates, name)!r} {_MODEL_UNITS[name]}")
        if self.schedule is not None:
            lines.append("")
            lines.append("[drive]")
            for seg in self.schedule.segments:
                lines.append(f"segment = {seg.duration!r} {seg.pump_rate!r} "
                             f"{seg.rabi!r} {seg.detuning!r}")
        lines.append("")
        lines.append("[simulation]")
        sim = self.simulation
        lines.append(f"grid_points = {sim.grid_points}")
        lines.append(f"rel_tol = {sim.rel_tol!r}")
        lines.append(f"abs_tol = {sim.abs_tol!r}")
        lines.append(f"n_max = {'auto' if sim.n_max is None else sim.n_max}")
        lines.append(f"tail_tol = {sim.tail_tol!r}")
        lines.append(f"collection = {sim.collection!r}")
        lines.append("")
        lines.append("[experiment]")
        lines.append(f"type = {self.experiment_type}")
        schema = _EXPERIMENT_KEYS[self.experiment_type]
        for key, (kind, unit, _default) in schema.items():
            value = self.experiment.get(key)
            if value is None:
                continue
            if kind == "floats":
                text = " ".join(repr(float(v)) for v in value)
            elif kind == "bool":
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
        lines.append("[output]")
        out = self.output
        lines.append(f"directory = {out.directory}")
        lines.append(f"format = {out.format}")
        lines.append(f"seed = {out.seed}")
        lines.append(f"workers = {out.workers}")
        lines.append(f"timing = {'true' if out.timing else 'false'}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _split_unit(text: str) -> tuple[str, str | None]:
    parts = text.split()
    if len(parts) >= 2 and not _is_number(parts[-1]) and parts[-1] not in ("auto",):
        return " ".join(parts[:-1]), parts[-1]
    return text, None


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _parse_value(kind: str, unit: str | None, raw: str, line: int):
    value_text, found_unit = _split_unit(raw.strip())
    if found_unit is not None:
        if unit is None or found_unit != unit:
            expected = unit or "none"
            raise ConfigError(f"unit {found_unit!r} does not match the "
                              f"expected unit {expected!r}", line)
    if kind == "float":
        if not _is_number(value_text):
            raise ConfigError(f"expected a number, got {value_text!r}", line)
        return float(value_text)
    if kind == "int":
        try:
            return int(value_text)
        except ValueError:
            raise ConfigError(f"expected an integer, got {value_text!r}", line)
    if kind == "bool":
        lowered = value_text.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value_text!r}", line)
    if kind == "floats":
        tokens = value_text.split()
        if not tokens or not all(_is_number(t) for t in tokens):
            raise ConfigError(f"expected numbers, got {value_text!r}", line)
        return tuple(float(t) for t in tokens)
    if kind == "n_max":
        if value_text == "auto":
            return None
        try:
            n = int(value_text)
        except ValueError:
            raise ConfigError(f"n_max must be 'auto' or an integer, got "
                              f"{value_text!r}", line)
        if n < 1:
            raise ConfigError(f"n_max must be >= 1, got {n}", line)
        return n
    if kind.startswith("choice:"):
        choices = kind.split(":", 1)[1].split("|")
        if value_text not in choices:
            raise ConfigError(f"expected one of {choices}, got {value_text!r}",
                              line)
        return value_text
    if kind == "str":
        return value_text
    raise AssertionError(f"unknown schema kind {kind}")


def _read_sections(text: str) -> dict:
    """Raw section -> list of (key, value, line)."""
    sections: dict[str, list] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            sections.setdefault(current, [])
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, _, value = stripped.partition("=")
        sections[current].append((key.strip(), value.strip(), lineno))
    return sections


def parse_config(text: str, experiment_type: str | None = None) -> RunConfig:
    """Parse and fully validate a run configuration.

    ``experiment_type`` (from the CLI subcommand) must agree with the
    config's ``type`` key when both are present. Unknown sections or keys,
    unit mismatches and malformed numbers raise ConfigError with the
    offending line number.
    """
    sections = _read_sections(text)
    known = {"model", "drive", "simulation", "experiment", "output"}
    for name in sections:
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")

    # [experiment] / type resolution
    exp_entries = sections.get("experiment", [])
    exp_type = experiment_type
    seen_keys: dict[str, tuple] = {}
    for key, value, line in exp_entries:
        if key == "type":
            if value not in EXPERIMENTS:
                raise ConfigError(f"unknown experiment type {value!r}", line)
            if exp_type is not None and value != exp_type:
                raise ConfigError(f"config type {value!r} conflicts with the "
                                  f"{exp_type!r} command", line)
            exp_type = value
        else:
            seen_keys[key] = (value, line)
    if exp_type is None:
        raise ConfigError("no experiment selected: pass a command or a "
                          "'type' key in [experiment]")

    schema = _EXPERIMENT_KEYS[exp_type]
    experiment: dict = {}
    for key, (value, line) in seen_keys.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment "
                              f"{exp_type!r}", line)
        kind, unit, _default = schema[key]
        experiment[key] = _parse_value(kind, unit, value, line)
    for key, (kind, unit, default) in schema.items():
        experiment.setdefault(key, default)

    # [model]
    overrides = {}
    for key, value, line in sections.get("model", []):
        if key not in _MODEL_UNITS:
            raise ConfigError(f"unknown model key {key!r}", line)
        overrides[key] = _parse_value("float", _MODEL_UNITS[key], value, line)
    try:
        rates = RateSet(**overrides)
    except ValueError as exc:
        raise ConfigError(str(exc))

    # [drive]
    schedule = None
    segments = []
    for key, value, line in sections.get("drive", []):
        if key != "segment":
            raise ConfigError(f"unknown drive key {key!r} (use repeated "
                              "'segment' lines)", line)
        tokens = value.split()
        if len(tokens) != 4 or not all(_is_number(t) for t in tokens):
            raise ConfigError("segment needs 4 numbers: duration pump rabi "
                              "detuning", line)
        try:
            segments.append(DriveSegment(*(float(t) for t in tokens)))
        except ValueError as exc:
            raise ConfigError(str(exc), line)
    if segments:
        schedule = DriveSchedule(tuple(segments))
    if exp_type == "pes" and schedule is None:
        raise ConfigError("the pes experiment needs a [drive] section")

    # [simulation] / [output]
    sim_values = {}
    for key, value, line in sections.get("simulation", []):
        if key not in _SIM_KEYS:
            raise ConfigError(f"unknown simulation key {key!r}", line)
        kind, unit, _default = _SIM_KEYS[key]
        sim_values[key] = _parse_value(kind, unit, value, line)
    for key, (kind, unit, default) in _SIM_KEYS.items():
        sim_values.setdefault(key, None if key == "n_max" else default)
    if sim_values["n_max"] == "auto":
        sim_values["n_max"] = None
    simulation = SimSettings(**sim_values)

    out_values = {}
    for key, value, line in sections.get("output", []):
        if key not in _OUTPUT_KEYS:
            raise ConfigError(f"unknown output key {key!r}", line)
        kind, unit, _default = _OUTPUT_KEYS[key]
        out_values[key] = _parse_value(kind, unit, value, line)
    for key, (kind, unit, default) in _OUTPUT_KEYS.items():
        out_values.setdefault(key, default)
    output = OutputSettings(**out_values)

    return RunConfig(experiment_type=exp_type, rates=rates, schedule=schedule,
                     simulation=simulation, experiment=experiment,
                     output=output)


# ---------------------------------------------------------------------------
# Experiment dispatch
# ---------------------------------------------------------------------------

def _auto_n_max(config: RunConfig, duration: float) -> int:
    if config.simulation.n_max is not None:
        return config.simulation.n_max
    return default_n_max(config.rates, duration)


def _mean_column(dist) -> np.ndarray:
    return (dist.n_values[:, None] * np.clip(dist.pmf, 0.0, None)).sum(axis=0)


def _run_pes(config: RunConfig, workers: int):
    sim = config.simulation
    total = config.schedule.total_duration
    grid = np.linspace(0.0, total, sim.grid_points)
    init = initial_state(config.experiment["initial"], _auto_n_max(config, total))
    states = evolve(init, config.schedule, config.rates, grid,
                    rtol=sim.rel_tol, atol=sim.abs_tol, tail_tol=sim.tail_tol,
                    collection=sim.collection)
    dist = pes(states)
    pmf = np.clip(dist.pmf, 0.0, None)
    occupied = np.nonzero(pmf.max(axis=1) > 1e-12)[0]
    keep = int(occupied[-1]) + 1 if occupied.size else 1
    series = {f"p_n{n}": pmf[n] for n in range(keep)}
    series["mean"] = _mean_column(dist)
    series["leakage"] = dist.leakage
    units = {name: "1" for name in series}
    result = ExperimentResult(
        x=grid, x_name="time", x_unit="us", series=series, units=units,
        metadata={"experiment": "pes", "initial": config.experiment["initial"],
                  "n_max": states[0].n_max})
    invariants = {
        "max_normalization_error": max(s.normalization_error() for s in states),
        "max_leakage": float(np.max(dist.leakage)),
    }
    return [("pes", result)], invariants, None


def _run_chernoff_map(config: RunConfig, workers: int):
    exp = config.experiment
    sim = config.simulation
    result = chernoff_map(exp["powers"], exp["horizon"],
                          mw=(exp["omega"], exp["delta"]), rates=config.rates,
                          grid_points=sim.grid_points, rtol=sim.rel_tol,
                          atol=sim.abs_tol, collection=sim.collection,
                          workers=workers)
    summary = ExperimentResult(
        x=np.array(result.metadata["powers_per_us"]),
        x_name="pump_rate", x_unit="MHz",
        series={"c_max": np.array(result.metadata["c_max"]),
                "t_max": np.array(result.metadata["t_max_us"])},
        units={"c_max": "1", "t_max": "us"},
        metadata={"experiment": "chernoff-map-summary"})
    invariants = {
        "max_normalization_error": result.metadata["max_normalization_error"],
        "max_leakage": result.metadata["max_leakage"],
    }
    return [("chernoff_curves", result), ("chernoff_summary", summary)], invariants, None


def _run_rabi(config: RunConfig, workers: int):
    exp = config.experiment
    sim = config.simulation
    taus = np.linspace(0.0, exp["tau_max"], exp["tau_points"])
    result = rabi_experiment(
        omega=exp["omega"], detuning=exp["delta"], taus=taus,
        readout_pump=exp["readout_pump"],
        readout_duration=exp["readout_duration"], shots=exp["shots"],
        seed=config.output.seed, rates=config.rates,
        init_duration=exp["init_duration"], settle=exp["settle"],
        rtol=sim.rel_tol, atol=sim.abs_tol, collection=sim.collection,
        workers=workers)
    invariants = {
        "max_normalization_error": result.metadata["max_normalization_error"],
        "max_leakage": result.metadata["max_leakage"],
    }
    return [("rabi", result)], invariants, None


def _run_g2(config: RunConfig, workers: int):
    exp = config.experiment
    series = {}
    units = {}
    norm_err = 0.0
    meta = {"experiment": "g2", "powers_per_us": list(exp["powers"]),
            "plateaus": []}
    taus = None
    for pump in exp["powers"]:
        curve = g2_curve(config.rates, DriveSegment(1.0, pump_rate=pump),
                         horizon=exp["horizon"])
        taus = curve.taus
        label = f"pump{pump:g}"
        series[f"d1_{label}"] = curve.d1
        series[f"d_{label}"] = curve.d
        series[f"g2_{label}"] = curve.g2
        units.update({f"d1_{label}": "1/us", f"d_{label}": "1/us",
                      f"g2_{label}": "1"})
        meta["plateaus"].append(curve.plateau)
        norm_err = max(norm_err, curve.norm_error)
    result = ExperimentResult(x=taus, x_name="tau", x_unit="us", series=series,
                              units=units, metadata=meta)
    # Emitted probability is tracked as leakage by construction here, so
    # only normalization is a meaningful invariant.
    return ([("g2", result)],
            {"max_normalization_error": norm_err, "max_leakage": 0.0}, None)


def _run_mandel(config: RunConfig, workers: int):
    exp = config.experiment
    sim = config.simulation
    horizon = exp["horizon"]
    grid = np.linspace(horizon / sim.grid_points, horizon, sim.grid_points)
    series = {}
    units = {}
    meta = {"experiment": "mandel", "powers_per_us": list(exp["powers"]),
            "t_min_us": [], "q_min": [], "t_zero_us": []}
    norm_err = leak = 0.0
    for pump in exp["powers"]:
        schedule = DriveSchedule.constant(horizon, pump_rate=pump)
        init = initial_state("thermal", _auto_n_max(config, horizon))
        states = evolve(init, schedule, config.rates, grid, rtol=sim.rel_tol,
                        atol=sim.abs_tol, tail_tol=sim.tail_tol,
                        collection=sim.collection)
        dist = pes(states)
        curve = mandel_q(dist)
        series[f"q_pump{pump:g}"] = curve.q
        units[f"q_pump{pump:g}"] = "1"
        meta["t_min_us"].append(curve.t_min)
        meta["q_min"].append(curve.q_min)
        meta["t_zero_us"].append(curve.t_zero)
        norm_err = max(norm_err, max(s.normalization_error() for s in states))
        leak = max(leak, float(np.max(dist.leakage)))
    result = ExperimentResult(x=grid, x_name="time", x_unit="us", series=series,
                              units=units, metadata=meta)
    return ([("mandel", result)],
            {"max_normalization_error": norm_err, "max_leakage": leak}, None)


def _run_saturation(config: RunConfig, workers: int):
    exp = config.experiment
    result = saturation_curve(exp["powers_uw"], exp["collection_scale"],
                              exp["background_slope"], rates=config.rates,
                              workers=workers)
    return ([("saturation", result)],
            {"max_normalization_error": 0.0, "max_leakage": 0.0}, None)


def _run_odmr(config: RunConfig, workers: int):
    exp = config.experiment
    freq_mode = exp["freq_min"] is not None or exp["freq_max"] is not None
    if freq_mode:
        if exp["freq_min"] is None or exp["freq_max"] is None:
            raise ConfigError("frequency mode needs both freq_min and freq_max")
        if exp["b_field"] is None:
            raise ConfigError("frequency mode needs b_field")
        frequencies = np.linspace(exp["freq_min"], exp["freq_max"], exp["points"])
        result = cwodmr_sweep(exp["omega"], exp["pump_rate"],
                              frequencies=frequencies, b_field=exp["b_field"],
                              branch=exp["branch"], rates=config.rates,
                              workers=workers)
    else:
        detunings = np.linspace(-exp["detuning_max"], exp["detuning_max"],
                                exp["points"])
        result = cwodmr_sweep(exp["omega"], exp["pump_rate"],
                              detunings=detunings, rates=config.rates,
                              workers=workers)
    return ([("odmr", result)],
            {"max_normalization_error": 0.0, "max_leakage": 0.0}, None)


def _run_validate(config: RunConfig, workers: int):
    exp = config.experiment
    report = validation_suite(seed=config.output.seed, sets=exp["sets"],
                              times=tuple(exp["times"]), m=exp["phases"])
    result = ExperimentResult(
        x=np.array([e.index for e in report.entries], dtype=float),
        x_name="set", x_unit="1",
        series={
            "pump_rate": np.array([e.pump_rate for e in report.entries]),
            "rabi": np.array([e.rabi for e in report.entries]),
            "detuning": np.array([e.detuning for e in report.entries]),
            "worst_pmf_dev": np.array([e.worst_pmf_dev for e in report.entries]),
            "worst_g0_dev": np.array([e.worst_g0_dev for e in report.entries]),
        },
        units={"pump_rate": "MHz", "rabi": "rad/us", "detuning": "rad/us",
               "worst_pmf_dev": "1", "worst_g0_dev": "1"},
        metadata={"experiment": "validate"})
    extra = {
        "passed": report.passed,
        "worst_pmf_dev": report.worst_pmf_dev,
        "worst_g0_dev": report.worst_g0_dev,
        "worst_flux_rel_dev": report.worst_flux_rel_dev,
        "flux_rel_devs": [[p, d] for p, d in report.flux_rel_devs],
    }
    return ([("validate", result)],
            {"max_normalization_error": 0.0, "max_leakage": 0.0}, extra)


_HANDLERS = {
    "pes": _run_pes,
    "chernoff-map": _run_chernoff_map,
    "rabi": _run_rabi,
    "g2": _run_g2,
    "mandel": _run_mandel,
    "saturation": _run_saturation,
    "odmr": _run_odmr,
    "validate": _run_validate,
}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _format_number(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, result: ExperimentResult) -> None:
    header = ",".join(result.header())
    columns = result.columns()
    rows = [header]
    for i in range(result.x.size):
        rows.append(",".join(_format_number(col[i]) for col in columns))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def _json_ready(value):
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_json_ready(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _write_json_table(path: Path, result: ExperimentResult) -> None:
    payload = {
        "x": {"name": result.x_name, "unit": result.x_unit,
              "values": result.x.tolist()},
        "series": {name: {"unit": result.units.get(name, "1"),
                          "values": values.tolist()}
                   for name, values in result.series.items()},
        "metadata": _json_ready(result.metadata),
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def run(config: RunConfig) -> int:
    """Execute one configured experiment and write its outputs.

    Returns the process exit code: 0 on success, 2 when results were
    produced but an invariant (normalization gate or validation suite)
    failed. Simulation errors propagate to the caller; any files already
    written for this run are removed first.
    """
    t_start = time.monotonic()
    workers = config.output.workers or (os.cpu_count() or 1)
    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        tables, invariants, extra = _HANDLERS[config.experiment_type](config,
                                                                      workers)
        for name, result in tables:
            if config.output.format in ("csv", "both"):
                path = out_dir / f"{name}.csv"
                _write_csv(path, result)
                written.append(path)
            if config.output.format in ("json", "both"):
                path = out_dir / f"{name}.json"
                _write_json_table(path, result)
                written.append(path)
        metadata = {
            "experiment": config.experiment_type,
            "effective_config": config.render(),
            "seed": config.output.seed,
            "versions": {
                "nvpes": __version__,
                "numpy": np.__version__,
                "scipy": __import__("scipy").__version__,
                "python": sys.version.split()[0],
            },
            "invariants": _json_ready(invariants),
        }
        if extra:
            metadata["report"] = _json_ready(extra)
        if config.output.timing:
            metadata["timing"] = {
                "wall_time_s": time.monotonic() - t_start,
                "finished_unix": time.time(),
            }
        meta_path = out_dir / "metadata.json"
        meta_path.write_text(json.dumps(metadata, indent=1, sort_keys=True) + "\n",
                             encoding="utf-8")
        written.append(meta_path)
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    if invariants.get("max_normalization_error", 0.0) > NORMALIZATION_GATE:
        return 2
    if extra is not None and not extra.get("passed", True):
        return 2
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvpes",
        description="NV-center photon counting statistics simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, default=None,
                       help="config file (defaults apply when omitted)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides [output] directory)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override")
        p.add_argument("--workers", type=int, default=None,
                       help="sweep worker processes (0 = all cores)")
        p.add_argument("--format", choices=("csv", "json", "both"),
                       default=None, help="output format override")
        p.add_argument("--timing", action="store_true",
                       help="include wall time in metadata (breaks "
                            "byte-for-byte reproducibility)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        config = parse_config(text, experiment_type=args.command)
        out = config.output
        output = OutputSettings(
            directory=str(args.out) if args.out is not None else out.directory,
            format=args.format or out.format,
            seed=args.seed if args.seed is not None else out.seed,
            workers=args.workers if args.workers is not None else out.workers,
            timing=args.timing or out.timing,
        )
        config = RunConfig(experiment_type=config.experiment_type,
                           rates=config.rates, schedule=config.schedule,
                           simulation=config.simulation,
                           experiment=config.experiment, output=output)
        code = run(config)
    except (ConfigError, SimulationError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError) and exc.line is not None:
            record["line"] = exc.line
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    if code == 0:
        print(f"wrote {config.output.directory}/ "
              f"({config.experiment_type}, seed {config.output.seed})")
    else:
        print(json.dumps({"error": "InvariantViolation",
                          "message": "results written but an invariant check "
                                     "failed; see metadata.json"},
                         sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
