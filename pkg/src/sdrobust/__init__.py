"""Robustness of sampled-data loops under rank-one boundary perturbations.

Diagonal generators on truncated ``l^q`` spaces, perturbed semigroups,
zero-order-hold feedback loops and their stability margins.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .spectral_core import (
    DiagonalGenerator,
    DualFunctional,
    ExtrapolationVector,
    StateVector,
    operator_norm,
    resolvent_apply,
    semigroup_apply,
    state_norm,
    xminus1_norm,
)
from .perturbation import (
    RankOnePerturbation,
    StrongOperatorPath,
    TruncatedOperator,
    build_perturbed_matrix,
    lambda_star_search,
    perturbed_semigroup_expm,
    perturbed_semigroup_volterra,
    resolvent_identity_check,
    variation_of_constants_residual,
    volterra_norm_estimate,
)
from .sampled_loop import (
    ControlOperator,
    SampledSystem,
    Trajectory,
    closed_loop,
    hold_nominal,
    hold_perturbed,
    simulate,
)
from .stability import (
    RadiusReport,
    StabilityReport,
    analyze,
    convergence_study,
    decay_fit,
    power_stability,
    spectral_radius,
    stability_radius,
)
from .heat import (
    DiagonalSystemSpec,
    FDGrid,
    HeatSystemSpec,
    admissibility_probe,
    build_diagonal_system,
    build_heat_system,
    eta_consistency_check,
    fd_simulate,
)
