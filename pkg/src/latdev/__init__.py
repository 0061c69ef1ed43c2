"""Deviation rates and exact conditional laws for conditioned lattice sums.

The public surface mirrors the pipeline: build a lattice law or a marked
pair, evaluate its log-Laplace transforms and conjugates, tilt it, read
off rate functions and point-probability approximations, and validate
everything against exact DP and sampling oracles.
"""

from .errors import (
    AlternatingCancellation,
    DegenerateDistribution,
    DegenerateResidual,
    DomainViolation,
    InvalidLaw,
    LatdevError,
    MarkDomainViolation,
    MaxRejectionsExceeded,
    MeanMismatch,
    NonConvergence,
    QuadratureUnresolved,
    SpanNotOne,
    StateBudgetExceeded,
    TargetOutsideRange,
    TruncationInfeasible,
    ZeroProbabilityEvent,
)
from .lattice import (
    ConditioningSpec,
    JointLaw,
    LatticeDistribution,
    Mark,
    Moments,
    Span,
    charfn,
    joint_from_obj,
    joint_to_obj,
    law_from_obj,
    law_to_obj,
    load_law_file,
    materialize,
    materialize_joint,
    moments,
    span,
    tree_fn,
)
from .cgf import (
    CgfEvaluator,
    ConjugateResult,
    DomainReport,
    JointCgfEvaluator,
    TiltSolution,
    conjugate,
    conjugate2,
    domain_probe,
    solve_tilt,
)
from .tilting import CheckedPair, check_pair, hat_tilt, mdp_tilt, tilt_lattice
from .locallimit import (
    PointProbability,
    SpanCounterexampleReport,
    central_local_limit,
    dp_point_prob,
    exact_point_prob,
    log_exact_point_prob,
    log_tilted_local_limit,
    span_counterexample_report,
    tilted_local_limit,
)
from .rates import (
    ConditionalLaplace,
    ConsistencyReport,
    MdpResult,
    RateCurve,
    bartlett_laplace,
    default_y_grid,
    gibbs_point,
    ldp_rate,
    mdp_consistency_check,
    mdp_params,
    rate_at,
    write_rate_csv,
)
from .oracle import (
    ConditionalLawExact,
    EmpiricalRatePoint,
    SampleResult,
    SimConfig,
    empirical_rate,
    exact_conditional_law,
    mdp_empirical,
    occupancy_oracle,
    sample_conditioned,
)
from .presets import (
    FigureJob,
    Preset,
    ConditioningTemplate,
    figure_emit,
    preset_expand,
)

__version__ = "0.1.0"
