"""Photon-counting statistics of a single NV center.

A small numpy/scipy library that propagates the photon-number-resolved
master equation of the seven-level NV model and derives every measurable
quantity of interest from it: counting distributions P(n, t), readout error
rates and Chernoff information, intensity correlations g2(tau) and the
Mandel Q parameter, fluorescence saturation curves, and cwODMR spectra.
"""

from ._version import __version__
from .errors import (
    ConfigError,
    CutoffOverflowError,
    EmptyCurveError,
    FitError,
    GridError,
    HorizonError,
    InvalidResetError,
    InvalidStateError,
    SimulationError,
    StiffnessError,
    TruncationError,
)
from .model import (
    DriveSchedule,
    DriveSegment,
    PhotonResolvedState,
    RateSet,
    StateBlock,
    default_n_max,
    derivative,
    evolve,
    evolve_summed,
    initial_state,
    resonance_frequencies,
)
from .statistics import (
    CountingDistribution,
    IntensityCurve,
    ReadoutReport,
    chernoff,
    error_rates,
    intensity,
    log_likelihood_ratio,
    moments,
    pes,
    readout_report,
    sample_counts,
)
from .correlation import (
    DelayCurve,
    MandelCurve,
    delay_density,
    g2,
    mandel_q,
    post_emission_state,
    renewal_solve,
)
from .experiments import (
    ExperimentResult,
    LorentzianFit,
    SweepSpec,
    chernoff_map,
    cwodmr_sweep,
    lorentzian_fit,
    rabi_experiment,
    saturation_curve,
)
from .validation import (
    TiltedEvaluation,
    counting_field_evaluation,
    counting_field_pmf,
    random_parameters,
    steady_state,
    steady_state_intensity,
)
