"""Indirect shooting for optimal control problems affine in part of the control.

The library eliminates the controls from the stationarity system of the
pre-Hamiltonian, propagates the reduced state-costate dynamics with fixed
step schemes, drives the shooting residual to zero with Gauss-Newton, and
certifies local convergence through a coercivity check of the second-order
sufficient condition in Goh-transformed variables.
"""

from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _dist_version

try:
    __version__ = _dist_version("parshoot")
except PackageNotFoundError:  # running from a source tree without metadata
    __version__ = "0.1.0"

from .model import (
    EndpointConstraints,
    EndpointCost,
    Multiplier,
    ProblemDef,
    ProblemSetup,
    Reduction,
    TrajectoryGrid,
    VectorField,
    available_problems,
    builtin_problem,
    check_qualification,
    ds_example,
    ds_reduced,
    get_setup,
    negate_cost,
    register_problem,
    validate_problem,
)
from .hamiltonian import (
    HamiltonianPoint,
    elimination_jacobian,
    gamma_udot,
    h_gradients,
    h_value,
    hv_ddot,
    hv_dot,
    lie_bracket,
)
from .eliminate import check_legendre, eliminate_controls
from .integrate import export_trajectory, import_trajectory, propagate, rhs_reduced
from .shooting import (
    GNReport,
    ShootingMap,
    ShootingPoint,
    convergence_order,
    endpoint_lagrangian,
    gauss_newton,
    make_shooting_map,
    shooting_jacobian,
    shooting_residual,
)
from .ssc import (
    GohDirection,
    LinearizedDirection,
    SSCReport,
    check_necessary,
    coercivity_check,
    gamma_order,
    gamma_order_from_v,
    goh_transform,
    multiplier_for,
    nominal_coefficients,
    omega_bar,
    omega_bar_coeffs,
    propagate_linearized,
    second_variation_omega,
)

__all__ = [name for name in dir() if not name.startswith("_")]
