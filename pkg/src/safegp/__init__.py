"""Safe Gaussian-process bandit optimization and a seeded benchmark harness."""

from .algorithms import (
    AlgoConfig,
    TPrimePolicy,
    estimated_safe_set,
    lambda_minus,
    lipschitz_constant,
    phase2_select,
    plateau_stop,
    reachability_closure,
    run_naive_sgp_ucb,
    run_oracle_gp_ucb,
    run_safeopt_mc,
    run_sgp_ucb,
    run_stageopt,
    run_uncertainty_sampling,
    t_prime_finite,
    t_prime_infinite,
)
from .analysis import (
    BoundReport,
    approx_variance_gap,
    b_constant,
    build_bound_report,
    c1_constant,
    chernoff_trial,
    info_gain_bound,
    info_gain_empirical,
    regret_rhs,
)
from .environment import (
    DecisionSet,
    InstanceConfig,
    ProblemInstance,
    RegretTrace,
    instance_from_json,
    instance_to_json,
    make_instance,
    observe,
    regret_of,
    sample_instance,
)
from .gp import ConfidenceBand, GPPosterior, beta, confidence_bounds, variance_via_features
from .kernels import (
    FeatureMapSpec,
    KernelSpec,
    explicit_features,
    explicit_map,
    qff_error_bound,
    qff_feature_map,
    qff_map,
    rff_dim_bound,
    rff_feature_map,
    rff_map,
)

__version__ = "0.1.0"
