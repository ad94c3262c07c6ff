"""General linear methods with inherent quadratic stability (GLMQS)."""

from ._accel import USE_NUMBA, backend_name
from .tableau import (
    BUILTIN_NAMES, GlmTableau, TableauError, UnknownMethodError, builtin_tableau, error_constant,
    order_condition_residual, verify_iqs,
)
from .stability import (
    check_l_stability, check_quadratic_form, scan_a_stability, stability_matrix, stability_polynomial,
)
from .solver import NewtonConfig, OdeSystem, StageFailure, solve_stages
from .linear import FactorizationError, linear_backend
from .integrator import NordsieckState, integrate, start_nordsieck, step
from .problems import burgers_system, grayscott_system, make_problem, synthetic_system, vdp_system
from .harness import StudySpec, estimate_order, reference_solution, run_study

__version__ = "0.1.0"
