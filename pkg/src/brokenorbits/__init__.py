"""Periodic orbits of Tonelli Lagrangian systems on the flat 2-torus.

Broken-orbit discretization of the free-period action functional with
exact first and second derivatives, index/nullity machinery, descent and
mountain-pass searches, and critical-energy estimation.
"""

__version__ = "0.1.0"

from .torus import TorusConfig, torus_distance
from .models import (
    TangentState,
    LagrangianModel,
    KineticModel,
    MechanicalModel,
    MagneticModel,
    ClampedModel,
    FourierSeries2D,
    energy,
    energy_gradients,
    legendre,
    clamp_quadratic_at_infinity,
    build_model,
    standard_magnetic_fixture,
)
from .flow import Trajectory, Propagator, integrate, linearized_flow, monodromy
from .shoot import (
    SegmentSolution,
    InjectivityScales,
    fixed_time_minimizer,
    free_time_minimizer,
    boundary_jacobi_field,
    psi_field,
    estimate_scales,
)
from .action import (
    DiscreteLoop,
    GradientVector,
    SpectralReport,
    LoopEvaluator,
    discrete_action,
    discrete_gradient,
    discrete_hessian,
    index_nullity,
    iterate,
    nullity_via_monodromy,
    nullity_partition,
    auto_h,
)
from .fixtures import (
    CounterexampleParams,
    CounterexampleModel,
    counterexample_model,
    closed_form_flow,
    reference_orbits,
    maslov_indices,
)
from .kernels import HAVE_COMPILED, backend_name
from . import search, mane, config
from .search import (
    DescentOptions,
    OrbitRecord,
    MinimaxResult,
    descend,
    find_local_minimizer,
    minimax,
    multiplicity_scan,
    period_bound,
    length_bound,
)
from .mane import ManeEstimate, e0, c_upper_bound, c_lower_bound, mane_estimate

__all__ = [name for name in dir() if not name.startswith("_")]
