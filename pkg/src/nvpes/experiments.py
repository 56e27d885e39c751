"""Figure-level experiments: parameter sweeps over the core model.

Each routine runs a family of simulations and returns an
:class:`ExperimentResult` holding plot-ready columns plus a metadata echo of
every parameter, so a result file is sufficient to re-run the computation.
Sweep points are independent and can be mapped over worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from ._version import __version__ as _version
from .errors import ConfigError, FitError, SimulationError
from .model import (
    DriveSchedule,
    DriveSegment,
    RateSet,
    StateBlock,
    default_n_max,
    evolve,
    evolve_summed,
    initial_state,
    resonance_frequencies,
)
from .statistics import chernoff, pes, sample_counts
from .validation import steady_state

__all__ = [
    "SweepSpec",
    "ExperimentResult",
    "LorentzianFit",
    "chernoff_map",
    "rabi_experiment",
    "saturation_curve",
    "cwodmr_sweep",
    "lorentzian_fit",
]


@dataclass(frozen=True)
class SweepSpec:
    """A one-axis parameter sweep: which knob, which values, what else is fixed."""

    axis: str
    values: tuple
    fixed: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if not values:
            raise ConfigError(f"sweep over {self.axis!r} has no values")
        if not all(math.isfinite(v) for v in values):
            raise ConfigError(f"sweep over {self.axis!r} has non-finite values")


@dataclass(frozen=True)
class ExperimentResult:
    """Labeled curve data: one x column, named y series, full metadata echo."""

    x: np.ndarray
    x_name: str
    x_unit: str
    series: dict                      # name -> ndarray, same length as x
    units: dict = field(default_factory=dict)   # series name -> unit string
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        for name, y in self.series.items():
            y = np.asarray(y, dtype=float)
            if y.shape != x.shape:
                raise ValueError(f"series {name!r} length {y.shape} != x {x.shape}")
            self.series[name] = y
        meta = dict(self.metadata)
        meta.setdefault("code_version", _version)
        object.__setattr__(self, "metadata", meta)

    def header(self) -> list[str]:
        cols = [f"{self.x_name} [{self.x_unit}]"]
        cols += [f"{name} [{self.units.get(name, '1')}]" for name in self.series]
        return cols

    def columns(self) -> list[np.ndarray]:
        return [self.x] + list(self.series.values())


def _pmap(fn, items: Sequence, workers: int) -> list:
    """Ordered map over sweep points, optionally across processes."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Chernoff map
# ---------------------------------------------------------------------------

def _chernoff_point(args) -> dict:
    (pump, horizon, grid_points, rates, rtol, atol, collection) = args
    times = np.linspace(horizon / grid_points, horizon, grid_points)
    schedule = DriveSchedule.constant(horizon, pump_rate=pump)
    n_max = default_n_max(rates, horizon)
    try:
        traj0 = evolve(initial_state("ket0", n_max), schedule, rates, times,
                       rtol=rtol, atol=atol, collection=collection)
        traj1 = evolve(initial_state("ket1", n_max), schedule, rates, times,
                       rtol=rtol, atol=atol, collection=collection)
        dist0, dist1 = pes(traj0), pes(traj1)
        c = np.array([chernoff(dist0, dist1, t)[0] for t in times])
    except SimulationError as exc:
        raise SimulationError(f"chernoff map failed at pump_rate = {pump}/us: {exc}"
                              ) from exc
    k = int(np.argmax(c))
    t_max, c_max = _parabolic_peak(times, c, k)
    norm_err = max(s.normalization_error() for s in traj0 + traj1)
    leak = max(float(np.max(dist0.leakage)), float(np.max(dist1.leakage)))
    return {"pump": pump, "times": times, "c": c, "c_max": c_max, "t_max": t_max,
            "norm_err": norm_err, "leakage": leak}


def _parabolic_peak(x: np.ndarray, y: np.ndarray, k: int) -> tuple[float, float]:
    if 0 < k < y.size - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom != 0.0:
            shift = 0.5 * (y0 - y2) / denom
            if abs(shift) <= 1.0:
                h = x[k] - x[k - 1]
                return float(x[k] + shift * h), float(y1 - 0.25 * (y0 - y2) * shift)
    return float(x[k]), float(y[k])


def chernoff_map(powers: Sequence[float], horizon: float,
                 mw: tuple[float, float] = (0.0, 0.0),
                 rates: RateSet | None = None, grid_points: int = 120,
                 rtol: float = 1e-8, atol: float = 1e-10,
                 collection: float = 1.0, workers: int = 1) -> ExperimentResult:
    """Chernoff information of the |0> vs |1> readout, per laser power.

    For each pump rate, both preparations are read out under laser-only
    drive and C(t) is computed on a common time grid; the per-power maximum
    and its time are refined parabolically. The microwave parameters ``mw``
    describe the preparation context of the readout and are echoed to the
    metadata only; they do not enter the laser-only readout dynamics.

    Returns
    -------
    ExperimentResult
        x = times; one C(t) series per power, named ``c_pump<rate>``;
        metadata carries ``powers``, ``c_max`` and ``t_max`` lists.
    """
    rates = rates or RateSet()
    points = _pmap(_chernoff_point,
                   [(float(p), horizon, grid_points, rates, rtol, atol, collection)
                    for p in powers], workers)
    times = points[0]["times"]
    series = {f"c_pump{pt['pump']:g}": pt["c"] for pt in points}
    units = {name: "1" for name in series}
    meta = {
        "experiment": "chernoff-map",
        "powers_per_us": [pt["pump"] for pt in points],
        "c_max": [pt["c_max"] for pt in points],
        "t_max_us": [pt["t_max"] for pt in points],
        "mw_rabi_rad_per_us": mw[0],
        "mw_detuning_rad_per_us": mw[1],
        "horizon_us": horizon,
        "collection": collection,
        "rates": _rates_dict(rates),
        "max_normalization_error": max(pt["norm_err"] for pt in points),
        "max_leakage": max(pt["leakage"] for pt in points),
    }
    return ExperimentResult(x=times, x_name="time", x_unit="us", series=series,
                            units=units, metadata=meta)


def _rates_dict(rates: RateSet) -> dict:
    return {name: getattr(rates, name) for name in (
        "gamma0", "gamma_f0", "gamma_f1", "gamma_s0", "gamma_s1",
        "gamma1", "gamma2", "c_laser", "zfs", "gyro")}


# ---------------------------------------------------------------------------
# Rabi readout
# ---------------------------------------------------------------------------

def _rabi_point(args) -> dict:
    (tau, omega, detuning, rates, init_duration, settle, readout_pump,
     readout_duration, shots, seed, rtol, atol, collection) = args
    segments = [DriveSegment(init_duration, pump_rate=readout_pump)]
    if settle > 0:
        segments.append(DriveSegment(settle))
    if tau > 0:
        segments.append(DriveSegment(tau, pump_rate=0.0, rabi=omega,
                                     detuning=detuning))
    pre = DriveSchedule(tuple(segments))
    carried = evolve_summed(StateBlock.thermal(), pre, rates,
                            [pre.total_duration])[-1]
    # Counting restarts at the readout: the carried internal state becomes
    # the zero-photon block.
    block = StateBlock.from_array(carried)
    block = StateBlock.from_array(block.as_array() / block.trace)
    init = initial_state("custom", default_n_max(rates, readout_duration), block)
    readout = DriveSchedule.constant(readout_duration, pump_rate=readout_pump)
    traj = evolve(init, readout, rates, [readout_duration],
                  rtol=rtol, atol=atol, collection=collection)
    dist = pes(traj)
    n = dist.n_values.astype(float)
    p = np.clip(dist.pmf[:, -1], 0.0, None)
    mean = float((n * p).sum())
    var = float((n ** 2 * p).sum()) - mean ** 2
    out = {"tau": tau, "mean": mean, "std": math.sqrt(max(var, 0.0)),
           "norm_err": max(s.normalization_error() for s in traj),
           "leakage": float(np.max(dist.leakage))}
    if shots:
        samples = sample_counts(dist, readout_duration, shots, seed)
        out["sampled_mean"] = float(samples.mean())
        out["sem"] = out["std"] / math.sqrt(shots)
    return out


def rabi_experiment(omega: float, detuning: float, taus: Sequence[float],
                    readout_pump: float, readout_duration: float,
                    shots: int = 0, seed=None, rates: RateSet | None = None,
                    init_duration: float = 2.0, settle: float = 1.0,
                    rtol: float = 1e-8, atol: float = 1e-10,
                    collection: float = 1.0, workers: int = 1,
                    ) -> ExperimentResult:
    """Simulated Rabi readout: mean counts versus microwave pulse length.

    The pulse sequence per point is: a polarizing laser pulse at the readout
    power, a dark settle interval that lets the excited and singlet
    populations drain back to the ground manifold, a microwave pulse of
    length tau (laser off), and the readout laser pulse during which photons
    are counted. The photon index is reset at the readout start; the
    internal state is carried across segments exactly.

    With ``shots`` > 0 each point also reports the sample mean of that many
    simulated readouts plus its standard error; seeds are derived per point
    from ``seed`` so results do not depend on worker count.
    """
    rates = rates or RateSet()
    taus = [float(t) for t in taus]
    seeds = (np.random.SeedSequence(seed).spawn(len(taus)) if shots
             else [None] * len(taus))
    points = _pmap(_rabi_point,
                   [(tau, omega, detuning, rates, init_duration, settle,
                     readout_pump, readout_duration, shots, s, rtol, atol,
                     collection)
                    for tau, s in zip(taus, seeds)], workers)
    series = {"mean_counts": np.array([pt["mean"] for pt in points]),
              "std_counts": np.array([pt["std"] for pt in points])}
    units = {"mean_counts": "1", "std_counts": "1"}
    if shots:
        series["sampled_mean"] = np.array([pt["sampled_mean"] for pt in points])
        series["standard_error"] = np.array([pt["sem"] for pt in points])
        units["sampled_mean"] = "1"
        units["standard_error"] = "1"
    meta = {
        "experiment": "rabi",
        "mw_rabi_rad_per_us": omega,
        "mw_detuning_rad_per_us": detuning,
        "readout_pump_per_us": readout_pump,
        "readout_duration_us": readout_duration,
        "init_duration_us": init_duration,
        "settle_us": settle,
        "shots": shots,
        "seed": seed,
        "collection": collection,
        "rates": _rates_dict(rates),
        "max_normalization_error": max(pt["norm_err"] for pt in points),
        "max_leakage": max(pt["leakage"] for pt in points),
    }
    return ExperimentResult(x=np.array(taus), x_name="tau", x_unit="us",
                            series=series, units=units, metadata=meta)


# ---------------------------------------------------------------------------
# Saturation curve
# ---------------------------------------------------------------------------

def saturation_curve(powers_uw: Sequence[float], collection_scale: float,
                     background_slope: float, rates: RateSet | None = None,
                     workers: int = 1) -> ExperimentResult:
    """Detected fluorescence versus laser power, with an affine background.

    Per power the steady emission rate is the radiative flux of the
    stationary state; the detected NV series scales it by
    ``collection_scale`` and the background grows linearly with power.
    """
    if collection_scale < 0 or background_slope < 0:
        raise ConfigError("collection_scale and background_slope must be >= 0")
    rates = rates or RateSet()
    powers = np.array([float(p) for p in powers_uw])
    flux = np.array(_pmap(_saturation_point,
                          [(float(p), rates) for p in powers], workers))
    nv = collection_scale * flux
    background = background_slope * powers
    series = {"nv_counts": nv, "background": background, "total": nv + background}
    units = {name: "counts/us" for name in series}
    meta = {
        "experiment": "saturation",
        "collection_scale": collection_scale,
        "background_slope_per_uw": background_slope,
        "rates": _rates_dict(rates),
    }
    return ExperimentResult(x=powers, x_name="laser_power", x_unit="uW",
                            series=series, units=units, metadata=meta)


def _saturation_point(args) -> float:
    power, rates = args
    drive = DriveSegment(1.0, pump_rate=rates.pump_rate(power))
    return rates.gamma0 * steady_state(rates, drive).excited


# ---------------------------------------------------------------------------
# cwODMR
# ---------------------------------------------------------------------------

def _odmr_point(args) -> float:
    detuning, omega, pump, rates = args
    drive = DriveSegment(1.0, pump_rate=pump, rabi=omega, detuning=detuning)
    return rates.gamma0 * steady_state(rates, drive).excited


def cwodmr_sweep(omega: float, pump_rate: float,
                 detunings: Sequence[float] | None = None,
                 frequencies: Sequence[float] | None = None,
                 b_field: float | None = None, branch: str = "+",
                 rates: RateSet | None = None, workers: int = 1,
                 ) -> ExperimentResult:
    """Steady fluorescence versus microwave detuning, with a Lorentzian fit.

    Drive the NV continuously with laser and microwave and record the
    stationary emission rate per detuning. Input is either ``detunings``
    directly (rad/us) or absolute microwave ``frequencies`` (rad/us) plus a
    ``b_field`` (mT), mapped onto detunings from the selected spin
    resonance. The fitted dip yields the contrast
    ``c = (I_off - I_min) / I_off`` and the linewidth (half width at half
    minimum); if the fit fails the raw spectrum is returned with the
    contrast marked unavailable.
    """
    rates = rates or RateSet()
    if (detunings is None) == (frequencies is None):
        raise ConfigError("give exactly one of detunings or frequencies")
    if frequencies is not None:
        if b_field is None:
            raise ConfigError("frequency input needs a b_field")
        plus, minus = resonance_frequencies(b_field, rates)
        center = plus if branch == "+" else minus
        detunings = np.asarray(frequencies, dtype=float) - center
    detunings = np.asarray(detunings, dtype=float)
    intensities = np.array(_pmap(_odmr_point,
                                 [(float(d), omega, pump_rate, rates)
                                  for d in detunings], workers))
    meta = {
        "experiment": "odmr",
        "mw_rabi_rad_per_us": omega,
        "pump_rate_per_us": pump_rate,
        "rates": _rates_dict(rates),
    }
    series = {"intensity": intensities}
    units = {"intensity": "counts/us"}
    try:
        fit = lorentzian_fit(detunings, intensities)
        series["fit"] = fit.evaluate(detunings)
        units["fit"] = "counts/us"
        meta.update({
            "contrast_available": True,
            "contrast": fit.depth / fit.baseline,
            "linewidth_rad_per_us": fit.width,
            "center_rad_per_us": fit.center,
            "baseline_counts_per_us": fit.baseline,
            "fit_rms_residual": fit.residual,
        })
    except FitError as exc:
        meta.update({"contrast_available": False, "contrast": None,
                     "fit_error": str(exc)})
    return ExperimentResult(x=detunings, x_name="detuning", x_unit="rad/us",
                            series=series, units=units, metadata=meta)


# ---------------------------------------------------------------------------
# Lorentzian fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LorentzianFit:
    """Parameters of ``baseline - depth * w^2 / ((x - center)^2 + w^2)``."""

    center: float
    width: float            # half width at half minimum, same unit as x
    depth: float
    baseline: float
    residual: float         # RMS of the fit residuals

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        w2 = self.width ** 2
        return self.baseline - self.depth * w2 / ((x - self.center) ** 2 + w2)


def lorentzian_fit(x: Sequence[float], y: Sequence[float]) -> LorentzianFit:
    """Least-squares Lorentzian dip fit, deterministic given its inputs.

    A coarse grid over candidate widths and centers seeds a derivative-free
    simplex refinement. Degenerate results (non-finite parameters, zero or
    negative width) raise FitError.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.size < 5 or x.shape != y.shape:
        raise FitError("need at least 5 (x, y) points")
    span = float(x.max() - x.min())
    if span <= 0:
        raise FitError("x values are degenerate")

    def sse(params: np.ndarray) -> float:
        center, width, depth, baseline = params
        w2 = width * width
        model = baseline - depth * w2 / ((x - center) ** 2 + w2)
        r = y - model
        return float(r @ r)

    # Coarse grid: anchor the baseline on the wings, try a few widths and
    # centers near the sample minimum.
    edge = max(2, x.size // 10)
    order = np.argsort(x)
    baseline0 = float(np.median(np.concatenate((y[order][:edge], y[order][-edge:]))))
    depth0 = float(baseline0 - y.min())
    centers = x[np.argsort(y)[:3]]
    widths = np.geomspace(max(span / x.size, 1e-12), span, 12)
    best = None
    for c0 in centers:
        for w0 in widths:
            p = np.array([c0, w0, depth0, baseline0])
            val = sse(p)
            if best is None or val < best[1]:
                best = (p, val)
    p0 = best[0]
    res = minimize(sse, p0, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
    # A restart from the optimum guards against premature simplex collapse.
    res = minimize(sse, res.x, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
    center, width, depth, baseline = res.x
    width = abs(float(width))
    if not all(map(math.isfinite, (center, width, depth, baseline))):
        raise FitError("fit diverged to non-finite parameters")
    if width == 0.0:
        raise FitError("fit collapsed to zero width")
    residual = math.sqrt(sse(res.x) / x.size)
    return LorentzianFit(center=float(center), width=width, depth=float(depth),
                         baseline=float(baseline), residual=residual)
