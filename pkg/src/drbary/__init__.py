"""Doubly regularized entropic barycenters of discrete measures.

Two pipelines around one dual objective:

* fixed support: damped Sinkhorn iterations on the reference grid with a
  machine-checkable suboptimality certificate each iteration;
* free support: the same damped scheme driven by Monte-Carlo marginal
  estimates, with samples produced by unadjusted Langevin chains on a
  smoothed barycenter density.
"""

__version__ = "0.1.0"

from .dual import (
    Certificate,
    DualState,
    barycenter_from_duals,
    directional_derivative,
    dual_objective,
    primal_kl_bound,
    pushforward_marginal,
    suboptimality_certificate,
)
from .entropic import Potential, coupling_from_potentials, semidual_value, softmin_potential
from .free_support import (
    DiscreteSamplingOracle,
    ExactOracle,
    FreeSupportResult,
    MonteCarloOracle,
    OracleParams,
    approx_damped_step,
    grid_reference,
    run_free_support,
)
from .langevin import (
    Domain,
    SamplerBudget,
    SmoothedTarget,
    choose_sigma,
    compute_lipschitz,
    grad_V_sigma,
    project_domain,
    stationary_point,
    ula_sample,
)
from .measures import (
    CostOracle,
    DiscreteMeasure,
    SolverConfig,
    ValidationReport,
    dirac,
    validate_problem,
)
from .oracle import (
    OracleOutput,
    PropertyReport,
    accuracy_bound,
    choose_oracle_params,
    mc_marginal_estimate,
    mix_with_marginal,
    verify_oracle_properties,
)
from .reference import (
    Instance,
    dense_dual_ascent,
    finite_difference_gradient,
    random_instance,
)
from .sinkhorn import (
    ConvergenceTrace,
    SolveResult,
    damped_step,
    initial_state,
    run,
    undamped_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
