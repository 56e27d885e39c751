"""Seven-level NV-center model with photon-number-resolved dynamics.

The electronic model couples the ground-state spin triplet {|0>, |1>, |-1>},
the excited triplet {|e0>, |e1>, |-e1>} and the metastable singlet |s>.
Laser light pumps each ground state to its excited partner at a rate
``pump_rate``; the excited states decay radiatively (emitting one photon)
or cross over into the singlet shelf, which in turn relaxes back into the
ground manifold. A resonant microwave drive rotates the {|0>, |1>} qubit.

To resolve photon counting, the density matrix is split into blocks
``rho(n, t)`` labelled by the number ``n`` of photons emitted in ``[0, t]``.
Each block evolves under the photon-conserving part of the generator, while
the radiative decay of block ``n - 1`` feeds block ``n``. Tracing each block
yields the counting distribution ``P(n, t)``.

Per block the state is 9 real numbers: three ground populations, the
complex |0><1| coherence (real and imaginary parts; the conjugate is implied)
and is the only coherence the drive can build, three excited populations,
and the singlet population.

Units: times in us, rates in 1/us, Rabi frequency and detuning in angular
MHz (rad/us), magnetic field in mT, laser power in uW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import CutoffOverflowError, GridError, InvalidStateError, StiffnessError

__all__ = [
    "RateSet",
    "DriveSegment",
    "DriveSchedule",
    "StateBlock",
    "PhotonResolvedState",
    "initial_state",
    "derivative",
    "evolve",
    "evolve_summed",
    "summed_generator_matrix",
    "resonance_frequencies",
    "default_n_max",
]

TWO_PI = 2.0 * math.pi

# Component layout of one photon-number block.
P0, P1, PM1, CRE, CIM, PE0, PE1, PEM1, PS = range(9)
N_COMPONENTS = 9
# Trace runs over populations only (coherence components excluded).
TRACE_COMPONENTS = np.array([P0, P1, PM1, PE0, PE1, PEM1, PS])
EXCITED_COMPONENTS = np.array([PE0, PE1, PEM1])

POSITIVITY_SLACK = 1e-10       # tolerated negative excursion of populations
NORMALIZATION_TOL = 1e-8       # |sum of traces + leakage - 1| bound


@dataclass(frozen=True)
class RateSet:
    """Incoherent rates and physical constants of the NV model.

    Defaults are typical room-temperature values for a single NV center.
    All rates are in 1/us (numerically equal to MHz); ``zfs`` and ``gyro``
    are angular frequencies (rad/us and rad/us/mT).
    """

    gamma0: float = 63.0            # radiative decay |ei> -> |i|, 1/us
    gamma_f0: float = 12.0          # |e0> -> |s> crossing, 1/us
    gamma_f1: float = 80.0          # |+-e1> -> |s> crossing, 1/us
    gamma_s0: float = 3.3           # |s> -> |0> decay, 1/us
    gamma_s1: float = 2.4           # |s> -> |1> and |s> -> |-1> decay, each, 1/us
    gamma1: float = 0.0             # longitudinal ground-state relaxation 1/T1, 1/us
    gamma2: float = 0.0             # transverse ground-state dephasing 1/T2, 1/us
    c_laser: float = 0.1            # excitation rate per laser power, MHz/uW
    zfs: float = TWO_PI * 2870.0    # zero-field splitting D, rad/us
    gyro: float = TWO_PI * 28.024   # electron gyromagnetic ratio, rad/us/mT

    def __post_init__(self):
        for name in ("gamma0", "gamma_f0", "gamma_f1", "gamma_s0", "gamma_s1",
                     "gamma1", "gamma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.c_laser > 0:
            raise ValueError(f"c_laser must be > 0, got {self.c_laser}")

    def pump_rate(self, laser_power: float) -> float:
        """Excitation rate (1/us) for a laser power in uW."""
        return self.c_laser * laser_power

    def replace(self, **kwargs) -> "RateSet":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class DriveSegment:
    """One piecewise-constant interval of laser and microwave drive."""

    duration: float         # us
    pump_rate: float = 0.0  # laser excitation rate Gamma_P, 1/us
    rabi: float = 0.0       # microwave Rabi frequency Omega, rad/us
    detuning: float = 0.0   # microwave detuning Delta, rad/us

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if self.pump_rate < 0:
            raise ValueError(f"pump_rate must be >= 0, got {self.pump_rate}")

    @classmethod
    def from_power(cls, duration: float, laser_power: float, rates: RateSet,
                   rabi: float = 0.0, detuning: float = 0.0) -> "DriveSegment":
        """Build a segment from a laser power in uW instead of a pump rate."""
        return cls(duration, rates.pump_rate(laser_power), rabi, detuning)


@dataclass(frozen=True)
class DriveSchedule:
    """Ordered sequence of drive segments (e.g. polarize -> MW -> readout)."""

    segments: tuple[DriveSegment, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        object.__setattr__(self, "segments", segments)
        if not segments:
            raise ValueError("schedule must contain at least one segment")

    @classmethod
    def constant(cls, duration: float, pump_rate: float = 0.0,
                 rabi: float = 0.0, detuning: float = 0.0) -> "DriveSchedule":
        return cls((DriveSegment(duration, pump_rate, rabi, detuning),))

    @property
    def total_duration(self) -> float:
        return sum(seg.duration for seg in self.segments)

    def boundaries(self) -> np.ndarray:
        """Cumulative segment start/end times, length ``len(segments) + 1``."""
        return np.concatenate(([0.0], np.cumsum([s.duration for s in self.segments])))


@dataclass(frozen=True)
class StateBlock:
    """State of one photon-number block (all entries dimensionless)."""

    p0: float = 0.0
    p1: float = 0.0
    pm1: float = 0.0
    coh01: complex = 0.0
    pe0: float = 0.0
    pe1: float = 0.0
    pem1: float = 0.0
    ps: float = 0.0

    @property
    def trace(self) -> float:
        return self.p0 + self.p1 + self.pm1 + self.pe0 + self.pe1 + self.pem1 + self.ps

    @property
    def excited(self) -> float:
        return self.pe0 + self.pe1 + self.pem1

    def as_array(self) -> np.ndarray:
        out = np.zeros(N_COMPONENTS)
        out[P0], out[P1], out[PM1] = self.p0, self.p1, self.pm1
        out[CRE], out[CIM] = self.coh01.real, self.coh01.imag
        out[PE0], out[PE1], out[PEM1], out[PS] = self.pe0, self.pe1, self.pem1, self.ps
        return out

    @classmethod
    def from_array(cls, a) -> "StateBlock":
        a = np.asarray(a, dtype=float)
        if a.shape != (N_COMPONENTS,):
            raise InvalidStateError(f"expected {N_COMPONENTS} components, got shape {a.shape}")
        return cls(p0=a[P0], p1=a[P1], pm1=a[PM1],
                   coh01=complex(a[CRE], a[CIM]),
                   pe0=a[PE0], pe1=a[PE1], pem1=a[PEM1], ps=a[PS])

    @classmethod
    def thermal(cls) -> "StateBlock":
        third = 1.0 / 3.0
        return cls(p0=third, p1=third, pm1=third)


@dataclass(frozen=True)
class PhotonResolvedState:
    """Photon-number-resolved state: blocks for n = 0 .. n_max plus leakage.

    ``data[n]`` holds the 9 components of block ``n``; ``leakage`` is the
    cumulative probability that has flowed past the cutoff.
    """

    data: np.ndarray    # shape (n_max + 1, 9)
    time: float         # us
    leakage: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != N_COMPONENTS or data.shape[0] < 1:
            raise InvalidStateError(f"bad block array shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def n_max(self) -> int:
        return self.data.shape[0] - 1

    def block(self, n: int) -> StateBlock:
        return StateBlock.from_array(self.data[n])

    @property
    def blocks(self) -> tuple[StateBlock, ...]:
        return tuple(StateBlock.from_array(row) for row in self.data)

    def traces(self) -> np.ndarray:
        """Trace of each block; these are the probabilities P(n, t)."""
        return self.data[:, TRACE_COMPONENTS].sum(axis=1)

    def excited_populations(self) -> np.ndarray:
        """Total excited-state population of each block."""
        return self.data[:, EXCITED_COMPONENTS].sum(axis=1)

    def normalization_error(self) -> float:
        return abs(self.traces().sum() + self.leakage - 1.0)

    def padded(self, n_max: int) -> "PhotonResolvedState":
        """Return a copy extended with empty blocks up to ``n_max``."""
        if n_max < self.n_max:
            raise InvalidStateError("cannot shrink the photon cutoff")
        data = np.zeros((n_max + 1, N_COMPONENTS))
        data[: self.data.shape[0]] = self.data
        return PhotonResolvedState(data, self.time, self.leakage)


def initial_state(kind: str, n_max: int, block: StateBlock | None = None,
                  ) -> PhotonResolvedState:
    """Prepare a zero-photon initial state.

    Parameters
    ----------
    kind : {"thermal", "ket0", "ket1", "ketm1", "custom"}
        ``thermal`` places 1/3 in each ground population (room-temperature
        ground manifold); the ``ket*`` kinds put all weight in the named
        ground state; ``custom`` embeds ``block`` verbatim.
    n_max : int
        Photon cutoff, at least 1.
    block : StateBlock, optional
        Required for ``kind="custom"``; must have unit trace.
    """
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    if kind == "thermal":
        block = StateBlock.thermal()
    elif kind == "ket0":
        block = StateBlock(p0=1.0)
    elif kind == "ket1":
        block = StateBlock(p1=1.0)
    elif kind == "ketm1":
        block = StateBlock(pm1=1.0)
    elif kind == "custom":
        if block is None:
            raise InvalidStateError("custom initial state requires a block")
        if abs(block.trace - 1.0) > 1e-12:
            raise InvalidStateError(f"custom block trace {block.trace!r} != 1")
    else:
        raise ValueError(f"unknown initial state kind {kind!r}")
    data = np.zeros((n_max + 1, N_COMPONENTS))
    data[0] = block.as_array()
    return PhotonResolvedState(data, time=0.0, leakage=0.0)


def default_n_max(rates: RateSet, duration: float) -> int:
    """Photon cutoff heuristic: generous bound on counts emitted in ``duration``."""
    return max(16, math.ceil(3.0 * rates.gamma0 * duration))


# ---------------------------------------------------------------------------
# Equations of motion
# ---------------------------------------------------------------------------

def _hierarchy_rhs(data: np.ndarray, segment: DriveSegment, rates: RateSet,
                   collection: float = 1.0) -> tuple[np.ndarray, float]:
    """Time derivative of all blocks plus the leakage rate past the cutoff.

    Vectorized over blocks: the generator is lower block-bidiagonal, the
    only inter-block coupling being the radiative feed of block ``n`` by the
    excited populations of block ``n - 1``. The radiative flux of the top
    block has nowhere to go and is returned as the leakage rate.

    ``collection`` is the fraction of radiative jumps that reach the photon
    counter: detected jumps advance the photon index, the rest refill the
    ground states of the same block. At 1.0 (the default) every emitted
    photon is counted.
    """
    gp, om, de = segment.pump_rate, segment.rabi, segment.detuning
    g0 = rates.gamma0
    g1h = 0.5 * rates.gamma1
    kappa = g1h + 0.5 * rates.gamma2 + gp

    p0 = data[:, P0]
    p1 = data[:, P1]
    pm1 = data[:, PM1]
    cre = data[:, CRE]
    cim = data[:, CIM]
    pe0 = data[:, PE0]
    pe1 = data[:, PE1]
    pem1 = data[:, PEM1]
    ps = data[:, PS]

    out = np.empty_like(data)
    out[:, P0] = (om * cim - g1h * (p0 - p1) - g1h * (p0 - pm1)
                  - gp * p0 + rates.gamma_s0 * ps)
    out[:, P1] = -om * cim + g1h * (p0 - p1) - gp * p1 + rates.gamma_s1 * ps
    out[:, PM1] = g1h * (p0 - pm1) - gp * pm1 + rates.gamma_s1 * ps
    out[:, CRE] = -kappa * cre - de * cim
    out[:, CIM] = de * cre - kappa * cim + 0.5 * om * (p1 - p0)
    out[:, PE0] = gp * p0 - (g0 + rates.gamma_f0) * pe0
    out[:, PE1] = gp * p1 - (g0 + rates.gamma_f1) * pe1
    out[:, PEM1] = gp * pm1 - (g0 + rates.gamma_f1) * pem1
    out[:, PS] = (rates.gamma_f0 * pe0 + rates.gamma_f1 * (pe1 + pem1)
                  - (rates.gamma_s0 + 2.0 * rates.gamma_s1) * ps)

    # Radiative jump: a detected emission in block n - 1 feeds block n.
    feed = collection * g0
    out[1:, P0] += feed * pe0[:-1]
    out[1:, P1] += feed * pe1[:-1]
    out[1:, PM1] += feed * pem1[:-1]
    if collection != 1.0:
        # Undetected emissions refill the ground states of the same block.
        refill = (1.0 - collection) * g0
        out[:, P0] += refill * pe0
        out[:, P1] += refill * pe1
        out[:, PM1] += refill * pem1

    leak_rate = feed * (pe0[-1] + pe1[-1] + pem1[-1])
    return out, leak_rate


def derivative(state: PhotonResolvedState, segment: DriveSegment, rates: RateSet,
               collection: float = 1.0) -> PhotonResolvedState:
    """Generator applied to ``state``: a state-shaped object holding d/dt values.

    The returned object's ``data`` are the block derivatives and its
    ``leakage`` field is the instantaneous leakage rate, so total trace plus
    leakage is conserved exactly.
    """
    _check_collection(collection)
    out, leak_rate = _hierarchy_rhs(state.data, segment, rates, collection)
    return PhotonResolvedState(out, time=state.time, leakage=leak_rate)


def _check_collection(collection: float) -> None:
    if not 0.0 < collection <= 1.0:
        raise ValueError(f"collection must be in (0, 1], got {collection}")


def summed_generator_matrix(pump_rate: float, rabi: float, detuning: float,
                            rates: RateSet) -> np.ndarray:
    """9x9 generator of the photon-number-summed system.

    Identical physics to the hierarchy, but radiative decay refills the
    ground states of the same (single) block; this is the plain master
    equation whose solution is the sum of all photon blocks.
    """
    g0 = rates.gamma0
    g1h = 0.5 * rates.gamma1
    kappa = g1h + 0.5 * rates.gamma2 + pump_rate
    a = np.zeros((N_COMPONENTS, N_COMPONENTS))

    a[P0, P0] = -2.0 * g1h - pump_rate
    a[P0, P1] = g1h
    a[P0, PM1] = g1h
    a[P0, CIM] = rabi
    a[P0, PE0] = g0
    a[P0, PS] = rates.gamma_s0

    a[P1, P0] = g1h
    a[P1, P1] = -g1h - pump_rate
    a[P1, CIM] = -rabi
    a[P1, PE1] = g0
    a[P1, PS] = rates.gamma_s1

    a[PM1, P0] = g1h
    a[PM1, PM1] = -g1h - pump_rate
    a[PM1, PEM1] = g0
    a[PM1, PS] = rates.gamma_s1

    a[CRE, CRE] = -kappa
    a[CRE, CIM] = -detuning

    a[CIM, CRE] = detuning
    a[CIM, CIM] = -kappa
    a[CIM, P1] = 0.5 * rabi
    a[CIM, P0] = -0.5 * rabi

    a[PE0, P0] = pump_rate
    a[PE0, PE0] = -(g0 + rates.gamma_f0)

    a[PE1, P1] = pump_rate
    a[PE1, PE1] = -(g0 + rates.gamma_f1)

    a[PEM1, PM1] = pump_rate
    a[PEM1, PEM1] = -(g0 + rates.gamma_f1)

    a[PS, PE0] = rates.gamma_f0
    a[PS, PE1] = rates.gamma_f1
    a[PS, PEM1] = rates.gamma_f1
    a[PS, PS] = -(rates.gamma_s0 + 2.0 * rates.gamma_s1)
    return a


# ---------------------------------------------------------------------------
# Time integration
# ---------------------------------------------------------------------------

def _validate_grid(grid: np.ndarray, total: float) -> None:
    if grid.ndim != 1 or grid.size == 0:
        raise GridError("output grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise GridError("output grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > total * (1 + 1e-12) + 1e-12:
        raise GridError(f"grid must lie within [0, {total}] us")


def _integrate_hierarchy(initial: PhotonResolvedState, schedule: DriveSchedule,
                         rates: RateSet, grid: np.ndarray,
                         rtol: float, atol: float,
                         collection: float) -> list[PhotonResolvedState]:
    n_blocks = initial.data.shape[0]

    def rhs(_t, y, segment):
        d, leak_rate = _hierarchy_rhs(y[:-1].reshape(n_blocks, N_COMPONENTS),
                                      segment, rates, collection)
        return np.concatenate((d.ravel(), [leak_rate]))

    y = np.concatenate((initial.data.ravel(), [initial.leakage]))
    states: list[PhotonResolvedState] = []
    remaining = list(grid)
    if remaining and remaining[0] == 0.0:
        states.append(PhotonResolvedState(initial.data.copy(), 0.0, initial.leakage))
        remaining.pop(0)

    t0 = 0.0
    for segment in schedule.segments:
        if not remaining:
            break
        t1 = t0 + segment.duration
        eps = 1e-12 * max(t1, 1.0)
        n_local = sum(1 for t in remaining if t <= t1 + eps)
        # Clip round-off so scipy accepts points at the segment end.
        local = [min(t - t0, segment.duration) for t in remaining[:n_local]]
        remaining = remaining[n_local:]
        t_eval = list(local)
        if remaining and (not t_eval or t_eval[-1] < segment.duration):
            t_eval.append(segment.duration)  # needed to continue into next segment
        sol = solve_ivp(rhs, (0.0, segment.duration), y, method="RK45",
                        t_eval=t_eval, rtol=rtol, atol=atol, args=(segment,))
        if not sol.success:
            raise StiffnessError(t0 + (sol.t[-1] if sol.t.size else 0.0), sol.message)
        for k, tloc in enumerate(local):
            yk = sol.y[:, k]
            states.append(PhotonResolvedState(
                yk[:-1].reshape(n_blocks, N_COMPONENTS).copy(),
                time=t0 + tloc, leakage=float(yk[-1])))
        y = sol.y[:, -1]
        t0 = t1
    return states


def evolve(initial: PhotonResolvedState, schedule: DriveSchedule, rates: RateSet,
           grid, rtol: float = 1e-8, atol: float = 1e-10,
           tail_tol: float | None = 1e-10, max_n_max: int = 4096,
           collection: float = 1.0) -> list[PhotonResolvedState]:
    """Integrate the photon-resolved hierarchy over a drive schedule.

    Uses an adaptive explicit Runge-Kutta pair (Dormand-Prince 4(5)) with
    dense output at the requested grid times; each segment boundary restarts
    the integrator so piecewise-constant drives are handled exactly.

    If any output state's top block carries more than ``tail_tol`` of trace,
    the cutoff is doubled (initial state padded with empty blocks) and the
    integration is repeated, up to ``max_n_max``. Pass ``tail_tol=None`` to
    keep the cutoff fixed; probability flowing past it is then accounted in
    ``leakage`` rather than dropped.

    Parameters
    ----------
    initial : PhotonResolvedState
        State at t = 0.
    schedule : DriveSchedule
        Piecewise-constant drive; total duration bounds the grid.
    rates : RateSet
        Model rates.
    grid : array_like
        Strictly increasing output times (us) within the schedule.
    rtol, atol : float
        Integrator tolerances.
    collection : float
        Detected fraction of radiative jumps; see ``derivative``. Defaults
        to counting every emitted photon.

    Returns
    -------
    list of PhotonResolvedState
        One state per grid time.

    Raises
    ------
    StiffnessError
        If the integrator's step size underflows.
    CutoffOverflowError
        If the tail criterion still fails at ``max_n_max`` blocks.
    GridError
        If the grid is malformed or outside the schedule.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    _validate_grid(grid, schedule.total_duration)
    _check_collection(collection)
    state = initial
    while True:
        states = _integrate_hierarchy(state, schedule, rates, grid, rtol, atol,
                                      collection)
        if tail_tol is None:
            return states
        worst_tail = max(s.traces()[-1] for s in states)
        if worst_tail <= tail_tol:
            return states
        if state.n_max >= max_n_max:
            raise CutoffOverflowError(
                f"top block holds {worst_tail:.3e} of trace at cutoff "
                f"n_max = {state.n_max} (hard cap {max_n_max})")
        state = state.padded(min(max(2 * state.n_max, 16), max_n_max))


def evolve_summed(block, schedule: DriveSchedule, rates: RateSet, grid,
                  ) -> np.ndarray:
    """Evolve the photon-number-summed 9-component system.

    Since each segment's generator is constant, the propagator is a matrix
    exponential per segment; no truncation or integrator error is involved.
    Used to carry the internal state through pulse stages where photon
    counting is not needed.

    Parameters
    ----------
    block : StateBlock or array_like
        Initial 9-component state.
    grid : array_like
        Strictly increasing output times (us) within the schedule.

    Returns
    -------
    numpy.ndarray, shape (len(grid), 9)
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    _validate_grid(grid, schedule.total_duration)
    y = block.as_array() if isinstance(block, StateBlock) else np.asarray(block, float).copy()
    out = np.empty((grid.size, N_COMPONENTS))
    k = 0
    if grid[0] == 0.0:
        out[0] = y
        k = 1
    t0 = 0.0
    for segment in schedule.segments:
        if k >= grid.size:
            break
        t1 = t0 + segment.duration
        eps = 1e-12 * max(t1, 1.0)
        gen = summed_generator_matrix(segment.pump_rate, segment.rabi,
                                      segment.detuning, rates)
        seg_start = y
        while k < grid.size and grid[k] <= t1 + eps:
            dt = min(grid[k] - t0, segment.duration)
            out[k] = expm(gen * dt) @ seg_start
            k += 1
        y = expm(gen * segment.duration) @ seg_start
        t0 = t1
    return out


def resonance_frequencies(b_field: float, rates: RateSet) -> tuple[float, float]:
    """Spin transition frequencies (omega_plus, omega_minus) at a given field.

    ``omega = D +- gamma_e * B_z`` for the |0> <-> |+1| and |0> <-> |-1>
    transitions; both in rad/us.
    """
    if b_field < 0:
        raise ValueError(f"b_field must be >= 0, got {b_field}")
    shift = rates.gyro * b_field
    return rates.zfs + shift, rates.zfs - shift
