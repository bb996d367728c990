"""Riemannian metrics and observers for differential detectability of
nonlinear systems."""

from .detectability import (
    DetectabilityReport,
    box_sampler,
    check_detectability,
    check_split_condition,
    estimate_rate_pair,
)
from .errors import RiemobsError
from .highgain import (
    ImmersionData,
    LmiCertificate,
    build_immersion,
    immersion_metric,
    solve_lmi,
)
from .lagrangian import (
    LagrangianSystem,
    euler_lagrange_dynamics,
    exp_metric_toy,
    sasaki_metric,
    verify_tangential_identity,
)
from .observers import (
    ObserverSpec,
    SimulationTrace,
    eisenhart_coordinates,
    ekf_rhs,
    full_order_rhs,
    kleinman_rhs,
    reduced_order_rhs,
    simulate,
)
from .riccati import (
    MetricGrid,
    RiccatiConfig,
    build_grid,
    build_oscillator_grid,
    compute_metric_at,
    compute_metric_radon,
    grammian,
    grid_metric_field,
    oscillator_scaled_lookup,
    reconstructibility_margin,
)
from .systems import (
    SystemModel,
    TrajectorySegment,
    get_model,
    harmonic_oscillator,
    lagrangian_toy,
    oscillator_analytic_metric,
    oscillator_weak_metric,
)
from .tensor import (
    GeodesicResult,
    MetricField,
    christoffel,
    constant_metric,
    geodesic_distance,
    geodesic_shoot,
    lie_derivative,
    pushforward_metric,
    riemannian_gradient,
    riemannian_hessian,
)

__version__ = "0.1.0"
