"""Causal decomposition of outcome variability over randomized factors.

Estimates how much each factor, factor group, or pairwise interaction
causally accounts for the variability of an outcome, from i.i.d. data whose
factors are independently randomized. Provides plug-in and one-step
cross-fitted estimators with normal intervals, an exact randomization test
with a sequential confidence procedure, a hierarchical factor screen, and a
simulation harness with exact oracles.
"""

__version__ = "0.1.0"

from .core import (
    BuildingBlock,
    Continuous,
    Dataset,
    Discrete,
    EstimandSpec,
    SignedBlockCombination,
    anchored_decomposition_check,
    expand_estimand,
    interaction,
    total,
    validate_dataset,
)
from .errors import (
    CausalAnovaError,
    ConfigError,
    DegenerateVariance,
    EmptyData,
    InputError,
    LengthMismatch,
    MissingStdError,
    MissingSubset,
    NonFiniteOutcome,
    NonFiniteValue,
    NumericalError,
    SingularDesign,
    TooFewObservations,
    UnknownLevel,
    UnsupportedForm,
)
from .estimators import (
    METHODS,
    EstimateReport,
    PerObservationRecord,
    delta_method_combine,
    estimate_many,
    one_step_estimate,
    phi_eif,
    phi_if,
    plugin_estimate,
)
from .inference import (
    ConfidenceSet,
    InferenceResult,
    RandomizationConfig,
    RandomizationTestResult,
    ScreenResult,
    ScreenRow,
    confidence_interval,
    hierarchical_screen,
    permute_subset,
    randomization_test,
    sequential_confidence_set,
)
from .io import load_dataset, read_schema, read_table
from .nuisance import (
    ENUM_CAP,
    QUAD_NODES,
    VAR_FLOOR,
    FoldPlan,
    LearnerConfig,
    NuisanceFit,
    block_value,
    conditional_mean_excluding,
    conditional_moment_centered,
    conditional_moment_given_factor,
    fit_nuisances,
    make_fold_plan,
    mean_of_outcome,
    variance_of_outcome,
)
from .simulation import (
    DgpSpec,
    NormalFactor,
    OracleValue,
    StudyCell,
    StudyResult,
    StudyRow,
    UniformFactor,
    additive_gaussian_dgp,
    coverage_grid_cells,
    cubic_interaction_dgp,
    custom_polynomial_dgp,
    generate,
    oracle_value,
    run_study,
    true_nuisance_fit,
)

__all__ = [
    "__version__",
    "BuildingBlock",
    "CausalAnovaError",
    "ConfidenceSet",
    "ConfigError",
    "Continuous",
    "Dataset",
    "DegenerateVariance",
    "DgpSpec",
    "Discrete",
    "EmptyData",
    "ENUM_CAP",
    "EstimandSpec",
    "EstimateReport",
    "FoldPlan",
    "InferenceResult",
    "InputError",
    "LearnerConfig",
    "LengthMismatch",
    "METHODS",
    "MissingStdError",
    "MissingSubset",
    "NonFiniteOutcome",
    "NonFiniteValue",
    "NormalFactor",
    "NuisanceFit",
    "NumericalError",
    "OracleValue",
    "PerObservationRecord",
    "QUAD_NODES",
    "RandomizationConfig",
    "RandomizationTestResult",
    "ScreenResult",
    "ScreenRow",
    "SignedBlockCombination",
    "SingularDesign",
    "StudyCell",
    "StudyResult",
    "StudyRow",
    "TooFewObservations",
    "UniformFactor",
    "UnknownLevel",
    "UnsupportedForm",
    "VAR_FLOOR",
    "additive_gaussian_dgp",
    "anchored_decomposition_check",
    "block_value",
    "conditional_mean_excluding",
    "conditional_moment_centered",
    "conditional_moment_given_factor",
    "confidence_interval",
    "coverage_grid_cells",
    "cubic_interaction_dgp",
    "custom_polynomial_dgp",
    "delta_method_combine",
    "estimate_many",
    "expand_estimand",
    "fit_nuisances",
    "generate",
    "hierarchical_screen",
    "interaction",
    "load_dataset",
    "make_fold_plan",
    "mean_of_outcome",
    "one_step_estimate",
    "oracle_value",
    "permute_subset",
    "phi_eif",
    "phi_if",
    "plugin_estimate",
    "randomization_test",
    "read_schema",
    "read_table",
    "run_study",
    "sequential_confidence_set",
    "total",
    "validate_dataset",
    "variance_of_outcome",
]
