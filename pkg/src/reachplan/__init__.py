"""Grid-based Hamilton-Jacobi reachability and sequential multi-vehicle planning."""

from .grid import (
    Grid,
    ScalarField,
    TimeIndexedField,
    dilate,
    field_complement,
    field_intersection,
    field_union,
    interpolate,
    make_grid,
    minkowski_sum_translate,
    project_min,
    read_field,
    reinitialize,
    signed_distance_ball,
    write_field,
)
from .levelset import (
    GradientPair,
    Hamiltonian,
    lax_friedrichs_step,
    tvd_rk_step,
    upwind_derivatives,
)
from .reachability import (
    BrsProblem,
    FrsProblem,
    KernelResult,
    UnreachableError,
    converge_invariant_kernel,
    latest_departure_time,
    solve_brs,
    solve_frs,
)
from .vehicles import (
    DubinsModel,
    ErrorModel,
    LeastRestrictivePolicy,
    NominalTrajectory,
    OptimalPolicy,
    TrackingPolicy,
    argmax_disturbance,
    argmin_control,
    error_flow,
    ham_brs_minmax,
    ham_error_maxminmin,
    ham_frs_closed_loop,
    ham_frs_maxmax,
    least_restrictive_control,
    tracking_control,
)
from .spp import (
    InfeasiblePlanError,
    NumericsConfig,
    PlanResult,
    VehicleSpec,
    induced_obstacle,
    plan,
    plan_centralized,
    plan_least_restrictive,
    plan_robust_tracking,
    tracking_kernel,
)
from .sim import (
    DisturbancePolicy,
    Trajectory,
    check_arrival,
    check_safety,
    simulate_fleet,
)

__version__ = "0.1.0"
