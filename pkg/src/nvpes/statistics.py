"""Counting statistics and readout figures of merit.

Turns photon-resolved trajectories into the counting distribution P(n, t)
and derives moments, emission intensity, the log-likelihood ratio of a
binary spin readout, single-repetition error rates, the Chernoff
information, and sampled readout outcomes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import GridError, TruncationError
from .model import PhotonResolvedState

__all__ = [
    "CountingDistribution",
    "IntensityCurve",
    "ReadoutReport",
    "pes",
    "moments",
    "intensity",
    "log_likelihood_ratio",
    "error_rates",
    "chernoff",
    "readout_report",
    "sample_counts",
]

PMF_FLOOR = 1e-15          # below this a probability is treated as zero
LEAKAGE_WARN = 1e-6        # moments are tail-biased above this leakage
LEAKAGE_REFUSE = 1e-3      # sampling refuses materially truncated pmfs


@dataclass(frozen=True)
class CountingDistribution:
    """P(n, t) on a time grid, for n = 0 .. n_max.

    ``pmf[n, j]`` is the probability of having counted ``n`` photons by
    ``times[j]``; each column sums to ``1 - leakage[j]``. ``excited_total``
    carries the summed excited-state population at each time so the exact
    flux form of the intensity stays available; it is None for injected
    (synthetic) distributions.
    """

    times: np.ndarray                    # us, shape (T,)
    pmf: np.ndarray                      # shape (n_max + 1, T)
    leakage: np.ndarray                  # shape (T,)
    excited_total: np.ndarray | None = field(default=None)

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 2 or pmf.shape[1] != times.size:
            raise GridError(f"pmf shape {pmf.shape} does not match {times.size} times")
        leakage = np.broadcast_to(np.asarray(self.leakage, dtype=float),
                                  times.shape).copy()
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "leakage", leakage)
        if self.excited_total is not None:
            object.__setattr__(self, "excited_total",
                               np.asarray(self.excited_total, dtype=float))

    @property
    def n_values(self) -> np.ndarray:
        return np.arange(self.pmf.shape[0])

    def time_index(self, t: float) -> int:
        """Index of ``t`` on the grid; raises GridError if absent."""
        j = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[j], t, rel_tol=1e-9, abs_tol=1e-12):
            raise GridError(f"t = {t} us is not on the output grid")
        return j

    def column(self, t: float) -> np.ndarray:
        """P(., t) clamped to be non-negative."""
        return np.clip(self.pmf[:, self.time_index(t)], 0.0, None)

    @classmethod
    def from_pmf(cls, pmf, t: float = 0.0) -> "CountingDistribution":
        """Wrap a single injected pmf (leakage = residual of its sum)."""
        pmf = np.asarray(pmf, dtype=float).reshape(-1, 1)
        leak = 1.0 - pmf.sum()
        return cls(times=np.array([t]), pmf=pmf, leakage=np.array([leak]))


def pes(trajectory: list[PhotonResolvedState]) -> CountingDistribution:
    """Counting distribution of a trajectory: P(n, t) = trace of block n."""
    if not trajectory:
        raise ValueError("trajectory is empty")
    times = np.array([s.time for s in trajectory])
    pmf = np.column_stack([s.traces() for s in trajectory])
    leakage = np.array([s.leakage for s in trajectory])
    excited = np.array([s.excited_populations().sum() for s in trajectory])
    return CountingDistribution(times, pmf, leakage, excited)


def moments(dist: CountingDistribution, m: int, t: float) -> float:
    """m-th moment of the photon number at time ``t`` (a grid point).

    Warns when the leakage at ``t`` exceeds 1e-6, since the missing tail
    biases high moments.
    """
    if m < 1:
        raise ValueError(f"moment order must be >= 1, got {m}")
    j = dist.time_index(t)
    if dist.leakage[j] > LEAKAGE_WARN:
        warnings.warn(f"leakage {dist.leakage[j]:.2e} at t = {t} us biases "
                      f"the order-{m} moment")
    p = np.clip(dist.pmf[:, j], 0.0, None)
    return float((dist.n_values.astype(float) ** m * p).sum())


@dataclass(frozen=True)
class IntensityCurve:
    """Emission intensity: finite differences of <n>(t) and the exact flux."""

    times: np.ndarray
    from_moments: np.ndarray             # d<n>/dt by central differences
    from_flux: np.ndarray | None         # gamma0 * excited population, if known


def intensity(dist: CountingDistribution, gamma0: float | None = None,
              ) -> IntensityCurve:
    """Photon intensity <I(t)> = d<n>/dt in counts/us.

    Central finite differences on the grid (one-sided at the ends). When the
    distribution carries excited-state populations and ``gamma0`` is given,
    the exact flux form ``gamma0 * (pe0 + pe1 + pem1)`` is returned
    alongside; the two must agree wherever the grid resolves <n>(t).
    """
    if dist.times.size < 3:
        raise GridError("intensity needs at least 3 grid points")
    mean = (dist.n_values[:, None] * np.clip(dist.pmf, 0.0, None)).sum(axis=0)
    fd = np.gradient(mean, dist.times)
    flux = None
    if gamma0 is not None and dist.excited_total is not None:
        flux = gamma0 * dist.excited_total
    return IntensityCurve(dist.times, fd, flux)


def _check_compatible(dist0: CountingDistribution, dist1: CountingDistribution,
                      ) -> None:
    if dist0.pmf.shape[0] != dist1.pmf.shape[0]:
        raise GridError("distributions cover different photon-number ranges")
    if dist0.times.size != dist1.times.size or not np.allclose(
            dist0.times, dist1.times, rtol=1e-9, atol=1e-12):
        raise GridError("distributions live on different time grids")


def log_likelihood_ratio(dist0: CountingDistribution,
                         dist1: CountingDistribution, t: float) -> np.ndarray:
    """Per-count log-likelihood ratio ln[P0(n, t) / P1(n, t)].

    Bins where both probabilities are below 1e-15 are NaN (undefined);
    single-sided zeros give +-inf sentinels.
    """
    _check_compatible(dist0, dist1)
    p0 = dist0.column(t)
    p1 = dist1.column(t)
    lam = np.full(p0.shape, np.nan)
    both = (p0 >= PMF_FLOOR) & (p1 >= PMF_FLOOR)
    lam[both] = np.log(p0[both] / p1[both])
    lam[(p0 >= PMF_FLOOR) & (p1 < PMF_FLOOR)] = np.inf
    lam[(p0 < PMF_FLOOR) & (p1 >= PMF_FLOOR)] = -np.inf
    return lam


@dataclass(frozen=True)
class ReadoutReport:
    """Binary-readout figures of merit for one readout duration.

    The decision rule assigns the bright initial state (dist0's preparation)
    to counts above the threshold ``n_crossing`` and the dark one at or
    below it; ``eps0``/``eps1`` are the error rates conditioned on each
    preparation, ``eps_mean`` their average, and ``eps_bayes`` the
    per-count-optimal bound ``0.5 * sum_n min(P0, P1)`` which ``eps_mean``
    attains when the log-likelihood ratio changes sign once.
    """

    lam: np.ndarray
    n_crossing: int
    eps0: float
    eps1: float
    eps_mean: float
    eps_bayes: float
    chernoff: float | None = None
    s_star: float | None = None


def error_rates(dist0: CountingDistribution, dist1: CountingDistribution,
                t: float) -> ReadoutReport:
    """Threshold readout errors at time ``t``.

    The threshold is the largest count still assigned to the darker
    preparation: ``n_crossing`` is the largest n whose log-likelihood ratio
    is <= 0 among defined bins (ties go to the dark state), so
    ``eps0 = sum_{n <= n_c} P0`` and ``eps1 = sum_{n > n_c} P1``.
    """
    lam = log_likelihood_ratio(dist0, dist1, t)
    p0 = dist0.column(t)
    p1 = dist1.column(t)
    assigned_dark = np.where(~np.isnan(lam) & (lam <= 0))[0]
    n_c = int(assigned_dark[-1]) if assigned_dark.size else -1
    eps0 = float(p0[: n_c + 1].sum())
    eps1 = float(p1[n_c + 1:].sum())
    eps_bayes = float(0.5 * np.minimum(p0, p1).sum())
    return ReadoutReport(lam=lam, n_crossing=n_c, eps0=eps0, eps1=eps1,
                         eps_mean=0.5 * (eps0 + eps1), eps_bayes=eps_bayes)


def _golden_minimize(f, lo: float, hi: float, xtol: float) -> tuple[float, float]:
    """Golden-section minimum of a unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def chernoff(dist0: CountingDistribution, dist1: CountingDistribution,
             t: float, s_tol: float = 1e-6) -> tuple[float, float]:
    """Chernoff information between the two counting distributions at ``t``.

    ``C = -min over s in [0, 1] of ln sum_n P0^s P1^(1-s)`` with the sum
    restricted to bins where both probabilities are positive (bins with a
    zero on either side contribute nothing for interior s). The objective is
    convex in s and minimized by golden section to ``s_tol``. Distributions
    with no common support give ``(inf, nan)``.

    Returns
    -------
    (C, s_star)
    """
    _check_compatible(dist0, dist1)
    p0 = dist0.column(t)
    p1 = dist1.column(t)
    common = (p0 > 0) & (p1 > 0)
    if not common.any():
        return math.inf, math.nan
    l0 = np.log(p0[common])
    l1 = np.log(p1[common])

    def objective(s: float) -> float:
        return float(logsumexp(s * l0 + (1.0 - s) * l1))

    s_star, fmin = _golden_minimize(objective, 0.0, 1.0, s_tol)
    return max(0.0, -fmin), s_star


def readout_report(dist0: CountingDistribution, dist1: CountingDistribution,
                   t: float) -> ReadoutReport:
    """Full report: threshold errors plus Chernoff information."""
    report = error_rates(dist0, dist1, t)
    c, s_star = chernoff(dist0, dist1, t)
    return ReadoutReport(lam=report.lam, n_crossing=report.n_crossing,
                         eps0=report.eps0, eps1=report.eps1,
                         eps_mean=report.eps_mean, eps_bayes=report.eps_bayes,
                         chernoff=c, s_star=s_star)


def sample_counts(dist: CountingDistribution, t: float, shots: int,
                  seed) -> np.ndarray:
    """Draw ``shots`` readout outcomes from P(., t) by inverse-CDF sampling.

    ``seed`` may be anything accepted by ``numpy.random.default_rng`` or an
    existing Generator; equal seeds give identical samples.

    Raises
    ------
    TruncationError
        If the leakage at ``t`` exceeds 1e-3, i.e. the sampled distribution
        would be materially truncated.
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    j = dist.time_index(t)
    if dist.leakage[j] > LEAKAGE_REFUSE:
        raise TruncationError(
            f"leakage {dist.leakage[j]:.2e} at t = {t} us; distribution is "
            "materially truncated, increase the photon cutoff")
    p = np.clip(dist.pmf[:, j], 0.0, None)
    cdf = np.cumsum(p / p.sum())
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.searchsorted(cdf, rng.random(shots), side="right")
