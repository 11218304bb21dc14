"""Exception types raised by the library."""


class BrokenOrbitsError(Exception):
    """Base class for all library errors."""


class NonConvergence(BrokenOrbitsError):
    """An iterative solver (Newton, shooting, descent) exhausted its budget."""


class NoConvergence(NonConvergence):
    """Alias kept for the shooting solvers."""


class ClampTooTight(BrokenOrbitsError):
    """No clamp radius separates the energy sublevel from the quadratic zone."""


class StepFailure(BrokenOrbitsError):
    """The adaptive integrator underflowed its step size or hit the step cap."""


class EnergyDriftExceeded(BrokenOrbitsError):
    """Integrated trajectory violated the energy-conservation tolerance."""


class NotCritical(BrokenOrbitsError):
    """Operation requires a critical loop but the gradient norm is too large."""


class Degenerate(BrokenOrbitsError):
    """Segment boundary problem has (numerically) vanishing Jacobi determinant."""


class BelowE0(BrokenOrbitsError):
    """Free-time segment requested below the stationary-energy threshold."""


class ScaleNotFound(BrokenOrbitsError):
    """Certified shooting scales not found above the hard floor."""


class PeriodCollapse(BrokenOrbitsError):
    """Descent drove the segment time to its floor."""


class SegmentFailure(BrokenOrbitsError):
    """A loop evaluation failed because one of its segments could not be shot."""


class PathBudgetExceeded(BrokenOrbitsError):
    """The minimax path relaxation did not stabilize within its sweep budget."""


class MinimizerNotFound(BrokenOrbitsError):
    """Multi-start search exhausted its seed budget without a witness."""


class ConfigError(BrokenOrbitsError):
    """Malformed or unknown configuration input."""
