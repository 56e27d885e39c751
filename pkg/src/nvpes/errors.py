"""Exception types raised by the simulator."""


class SimulationError(Exception):
    """Base class for all errors raised by this package."""


class InvalidStateError(SimulationError, ValueError):
    """A state block violates its constraints (trace, positivity, shape)."""


class InvalidResetError(SimulationError, ValueError):
    """A post-emission reset state carries excited-state population."""


class StiffnessError(SimulationError, RuntimeError):
    """The adaptive integrator underflowed its step size.

    Attributes
    ----------
    time : float
        Integration time (us) at which the step size collapsed.
    """

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"integrator step size underflow at t = {time:.6g} us")


class CutoffOverflowError(SimulationError, RuntimeError):
    """The photon-number cutoff grew past its hard cap."""


class GridError(SimulationError, ValueError):
    """A time/tau grid is malformed, mismatched or a point is off-grid."""


class TruncationError(SimulationError, RuntimeError):
    """A distribution is materially truncated (leakage or aliasing too large)."""


class HorizonError(SimulationError, RuntimeError):
    """The requested horizon is too short for a plateau to form."""


class EmptyCurveError(SimulationError, RuntimeError):
    """Every point of a derived curve is undefined."""


class FitError(SimulationError, RuntimeError):
    """A least-squares fit failed or returned a degenerate model."""


class ConfigError(SimulationError, ValueError):
    """A run configuration is invalid.

    Attributes
    ----------
    line : int or None
        1-based line number in the config text, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
