"""Kronecker-structured covariance estimation: partial-trace, flip-flop MLE and
rescaled partial-trace estimators, their Fisher geometry, tests on the factors
and Monte Carlo risk experiments.
"""
from .errors import (
    ConfigError,
    DataError,
    DegenerateSampleError,
    DimensionError,
    KronCovError,
    NotPositiveDefiniteError,
    NumericalError,
    RankDeficientError,
    SizeLimitError,
)
from .geometry import (
    avar_ratio_exact,
    avar_ratio_lower_bound,
    cos_sq_angle,
    fim_orthogonality_check,
    kron_cos,
    orthog_param,
    orthog_unparam,
    principal_angles,
    spiked_cos_inv_sq,
)
from .inference import (
    compound_symmetry_lrt,
    independence_experiment,
    intersection_test,
    sphericity_quantile,
    sphericity_stat,
)
from .linalg import (
    KroneckerCov,
    SampleCov,
    TensorSample,
    affine_invariant_distance,
    fim_inner,
    sample_tensors,
    sample_wishart,
)
from .mle import MleConfig, MleResult, gaussian_nll, mle_flip_flop
from .partial_trace import (
    MaskedTensor,
    masked_pt_estimator,
    partial_trace,
    pt_estimator,
    rpt_estimator,
)
from .profiles import eigen_profile
from .simulation import (
    RiskTable,
    Scenario,
    convergence_rate_check,
    relative_frobenius_loss,
    risk_experiment,
)

__version__ = "0.1.0"
