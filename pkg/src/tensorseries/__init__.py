"""Convergent series of elementary tensors on normed tensor products.

Any element of a (completed) tensor product, under any norm, admits a series
of rank-one terms whose partial sums converge with explicit certified bounds.
This package builds such series constructively at desk scale: finite real
model spaces, exactly computable norms, replication-based prefix bounds,
telescoping over certified approximation schemes, and independent
re-verification of every certificate.
"""

from .construct import (
    AbsoluteSumCertificate,
    BoundCertificate,
    CertificateViolationError,
    DictionaryAtom,
    DictionaryBudgetError,
    ScalarSeriesStream,
    ScalarSeriesTerm,
    ScalarStageRecord,
    SchemeContractError,
    StopRule,
    absolute_sum,
    dense_span_series,
    expand,
    flatten_bounded,
    flatten_seminorm,
    next_pow2,
    plan_replication,
    projective_absolute,
    telescope,
)
from .model import (
    BlockRecord,
    CoefficientTensor,
    DimensionMismatchError,
    ElementaryTensor,
    ReconstructionError,
    ReplicationPlan,
    Representation,
    SeriesBlock,
    SeriesStream,
    SpaceSpec,
    outer_sum,
    prefix,
)
from .norms import (
    NORM_KINDS,
    CrossnormReport,
    MaskedAbsSup,
    MaskedColumnSup,
    NormEvaluator,
    SeminormFamily,
    crossnorm_check,
    default_spaces,
    eval_norm,
    evaluator_for,
    nested_column_sup_family,
    nested_sup_family,
    vector_norm,
)
from .schemes import (
    ApproximationScheme,
    CauchyAdapter,
    DictionaryProjectionScheme,
    DictionaryStages,
    GridFunction,
    GridInterpolationScheme,
    Stage,
    SvdTruncationScheme,
    cauchy_adapter,
    dictionary_projection_scheme,
    grid_interpolation_scheme,
    svd_truncation_scheme,
)
from .verify import (
    ConvergenceTrace,
    PrefixBoundReport,
    StressReport,
    TraceRow,
    convergence_trace,
    permutation_stress,
    prefix_bound_report,
    subset_bound_scan,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
