"""Risk-sharing rules induced by randomizing parametrized capital-allocation
principles: build the aggregate-capital curve, invert it at the realized
aggregate loss, and evaluate the allocation family at the sampled parameter."""

from .scenario import (
    CopulaSpec,
    JointModel,
    MarginalSpec,
    ScenarioSet,
    marginal_cdf,
    marginal_quantile,
    sample_joint,
)
from .empirical import (
    AlphaMixRoot,
    BinnedConditionalMean,
    EmpiricalDistribution,
    alpha_mixed_inverse_root,
    comonotonic_sum_quantile,
    conditional_mean_given_sum,
    empirical_quantile,
)
from .distortion import (
    DistortionFamily,
    distortion_eval,
    distortion_risk_measure,
    load_user_table,
    validate_family,
)
from .capital import (
    CapitalCurve,
    InversePolicy,
    SurjectivityError,
    build_capital_curve,
    check_surjectivity,
    right_inverse,
    sample_parameter,
)
from .allocation import (
    EulerDistortion,
    Holistic,
    OptAbsolute,
    OptSquared,
    Physical,
    TailIndicator,
    WeightFunction,
    WeightTable,
    WeightedRisk,
    euler_distortion_allocate,
    holistic_allocate,
    opt_absolute_allocate,
    opt_squared_allocate,
    tail_preference_mean,
    weighted_allocate,
    weighted_mlr_check,
)
from .engine import (
    SharingResult,
    capital_curve_for,
    comonotonicity_diagnostic,
    distortion_capital_curve,
    holistic_capital_curve,
    induce_sharing,
    scenario_pareto_check,
    var_capital_curve,
    weighted_capital_curve,
)
from . import oracles

__version__ = "0.1.0"
