"""Photon correlations: delay densities, g2(tau) and the Mandel Q parameter.

The second-order correlation is built from waiting times rather than from
intensity products: the first-emission delay density is the exact radiative
flux out of the zero-photon block, the all-emission density solves the
renewal (Volterra) equation, and g2 is that density normalized by its
long-delay plateau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCurveError, GridError, HorizonError, InvalidResetError
from .model import (
    DriveSchedule,
    DriveSegment,
    PhotonResolvedState,
    RateSet,
    StateBlock,
    evolve,
)
from .statistics import CountingDistribution
from .validation import steady_state

__all__ = [
    "DelayCurve",
    "MandelCurve",
    "post_emission_state",
    "delay_density",
    "renewal_solve",
    "g2",
    "mandel_q",
]

Q_FLOOR = 1e-9             # mean counts below this leave Q undefined
PLATEAU_FRACTION = 0.1     # trailing fraction of the horizon used as plateau
PLATEAU_SLOPE_TOL = 1e-3   # |plateau slope| bound, relative to plateau per us


@dataclass(frozen=True)
class DelayCurve:
    """Delay statistics after a detected emission at tau = 0."""

    taus: np.ndarray        # us
    d1: np.ndarray          # density of the *next* emission, 1/us
    d: np.ndarray           # density of *any* later emission, 1/us
    g2: np.ndarray          # d normalized by its plateau
    plateau: float          # long-delay emission density, 1/us
    norm_error: float = 0.0  # worst |trace + leakage - 1| of the underlying run


@dataclass(frozen=True)
class MandelCurve:
    """Mandel Q(t) with its antibunching minimum and zero crossing."""

    times: np.ndarray
    q: np.ndarray           # NaN where <n> is below the floor
    t_min: float
    q_min: float
    t_zero: float           # first upward zero crossing after t_min; NaN if none


def post_emission_state(rates: RateSet, drive: DriveSegment) -> StateBlock:
    """Ground-manifold state right after a radiative jump from steady state.

    The jump maps each excited population onto its ground partner and
    destroys all tracked coherence; the result is renormalized. This is the
    stationary reset state for autocorrelation measurements.
    """
    ss = steady_state(rates, drive)
    excited = ss.excited
    if excited <= 0:
        raise InvalidResetError("drive produces no steady emission to condition on")
    return StateBlock(p0=ss.pe0 / excited, p1=ss.pe1 / excited,
                      pm1=ss.pem1 / excited)


def delay_density(rates: RateSet, drive: DriveSegment, reset: StateBlock,
                  horizon: float, num: int = 2001,
                  validate_reset: bool = True, return_norm_error: bool = False,
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Density of the waiting time until the next emission after a reset.

    Evolves the zero-photon block from ``reset`` under the constant drive
    and returns the exact radiative flux ``gamma0 * excited population`` of
    that block, which equals -dP(0, t)/dt without numerical differentiation.

    Parameters
    ----------
    reset : StateBlock
        Post-emission state: unit trace, no excited population (checked
        unless ``validate_reset`` is False, a hook for analytic tests).
    horizon : float
        Largest delay, us.
    num : int
        Grid size; the grid is uniform including tau = 0.
    """
    if validate_reset:
        if abs(reset.trace - 1.0) > 1e-9:
            raise InvalidResetError(f"reset trace {reset.trace!r} != 1")
        if reset.excited > 1e-12:
            raise InvalidResetError("reset state has excited population")
    taus = np.linspace(0.0, horizon, num)
    data = np.zeros((2, 9))
    data[0] = reset.as_array()
    initial = PhotonResolvedState(data, time=0.0)
    schedule = DriveSchedule((DriveSegment(horizon, drive.pump_rate,
                                           drive.rabi, drive.detuning),))
    # Only block 0 matters here; it is exact at any cutoff, so the automatic
    # cutoff extension is disabled and emitted probability goes to leakage.
    states = evolve(initial, schedule, rates, taus, tail_tol=None)
    d1 = rates.gamma0 * np.array([s.excited_populations()[0] for s in states])
    if return_norm_error:
        return taus, d1, max(s.normalization_error() for s in states)
    return taus, d1


def renewal_solve(taus: np.ndarray, d1: np.ndarray) -> np.ndarray:
    """Density of any (not necessarily next) emission at delay tau.

    Solves ``d(tau) = d1(tau) + integral_0^tau d(tau') d1(tau - tau') dtau'``
    (a Volterra equation of the second kind) by forward marching with
    trapezoidal quadrature; the error is O(h^2) in the grid step.
    """
    taus = np.asarray(taus, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    if taus.ndim != 1 or taus.size < 2 or taus.shape != d1.shape:
        raise GridError("taus and d1 must be matching 1-d arrays")
    steps = np.diff(taus)
    h = steps[0]
    if h <= 0 or not np.allclose(steps, h, rtol=1e-8, atol=1e-12):
        raise GridError("renewal_solve requires a uniform tau grid")
    n = taus.size
    d = np.empty(n)
    d[0] = d1[0]
    denom = 1.0 - 0.5 * h * d1[0]
    for i in range(1, n):
        conv = np.dot(d[1:i], d1[i - 1:0:-1]) if i > 1 else 0.0
        d[i] = (d1[i] * (1.0 + 0.5 * h * d[0]) + h * conv) / denom
    return d


def g2(rates: RateSet, drive: DriveSegment, horizon: float, num: int | None = None,
       reset: StateBlock | None = None) -> DelayCurve:
    """Normalized intensity autocorrelation g2(tau) under a constant drive.

    Composes the delay density and the renewal equation, then normalizes by
    the plateau (the mean of the trailing 10% of the horizon, which smooths
    quadrature ripple). The reset state defaults to the post-jump steady
    state, matching a stationary autocorrelation measurement.

    ``num`` defaults to a 0.25 ns step: the antibunching recovery happens on
    the excited-state lifetime scale, and under-resolving it biases the
    renewal quadrature.

    Raises
    ------
    HorizonError
        If the all-emission density has not plateaued: the fitted slope over
        the trailing window exceeds 1e-3 of the plateau value per us.
    """
    if num is None:
        num = int(round(horizon / 2.5e-4)) + 1
    if reset is None:
        reset = post_emission_state(rates, drive)
    taus, d1, norm_error = delay_density(rates, drive, reset, horizon, num,
                                         return_norm_error=True)
    d = renewal_solve(taus, d1)
    window = taus >= taus[-1] * (1.0 - PLATEAU_FRACTION)
    plateau = float(d[window].mean())
    if plateau <= 0:
        raise HorizonError("no emission density at the end of the horizon")
    slope = float(np.polyfit(taus[window], d[window], 1)[0])
    if abs(slope) > PLATEAU_SLOPE_TOL * plateau:
        raise HorizonError(
            f"emission density still drifts ({slope:.3e}/us vs plateau "
            f"{plateau:.3e}); extend the horizon beyond {horizon} us")
    return DelayCurve(taus=taus, d1=d1, d=d, g2=d / plateau, plateau=plateau,
                      norm_error=norm_error)


def mandel_q(dist: CountingDistribution, q_floor: float = Q_FLOOR) -> MandelCurve:
    """Mandel Q(t) = variance-to-mean ratio of the counts minus one.

    Times where the mean count is at or below ``q_floor`` are NaN (the ratio
    is 0/0 there). The minimum is refined parabolically between grid
    neighbours; the zero crossing after it is located by linear
    interpolation.
    """
    p = np.clip(dist.pmf, 0.0, None)
    n = dist.n_values.astype(float)
    m1 = (n[:, None] * p).sum(axis=0)
    m2 = (n[:, None] ** 2 * p).sum(axis=0)
    defined = m1 > q_floor
    if not defined.any():
        raise EmptyCurveError("mean count never exceeds the floor; Q undefined")
    q = np.full(m1.shape, np.nan)
    q[defined] = (m2[defined] - m1[defined] ** 2) / m1[defined] - 1.0

    idx = np.flatnonzero(defined)
    k = idx[np.argmin(q[idx])]
    t_min, q_min = _refine_extremum(dist.times, q, k)
    t_zero = math.nan
    for j in range(k + 1, q.size):
        if not (np.isnan(q[j]) or np.isnan(q[j - 1])) and q[j - 1] < 0.0 <= q[j]:
            frac = -q[j - 1] / (q[j] - q[j - 1])
            t_zero = float(dist.times[j - 1] + frac * (dist.times[j] - dist.times[j - 1]))
            break
    return MandelCurve(times=dist.times, q=q, t_min=t_min, q_min=q_min,
                       t_zero=t_zero)


def _refine_extremum(x: np.ndarray, y: np.ndarray, k: int) -> tuple[float, float]:
    """Parabolic refinement of a grid extremum at index k (grid value fallback)."""
    if 0 < k < y.size - 1 and not (np.isnan(y[k - 1]) or np.isnan(y[k + 1])):
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom != 0.0:
            shift = 0.5 * (y0 - y2) / denom
            if abs(shift) <= 1.0:
                h = x[k] - x[k - 1]
                return float(x[k] + shift * h), float(y1 - 0.25 * (y0 - y2) * shift)
    return float(x[k]), float(y[k])
