"""Off-policy evaluation of bandit policies with clipped and double-clipped IPS."""

from doubleclip.core import (
    ClipConfig,
    ClipStats,
    Dataset,
    Estimate,
    LogRecord,
    OverlapError,
    cips,
    dcips,
    effective_weights,
    importance_weight,
    importance_weights,
    ips,
    logging_mean,
)
from doubleclip.harness import (
    SweepConfig,
    SweepResult,
    decompose_error,
    run_sweep,
    standard_error,
)
from doubleclip.oracle import (
    BiasReport,
    bias_cips_exact,
    bias_dcips_exact,
    check_clip_decomposition,
    check_is_identity,
    exact_expected_estimate,
    exact_true_reward,
)
from doubleclip.synth import (
    GaussianFeatureEnv,
    LinearSoftmaxPolicy,
    Seed,
    TabularEnvironment,
    evaluate_target_propensities,
    realize_reward,
    sample_features,
    simulate,
    softmax_propensities,
    tabular_simulate,
    true_reward_mc,
)

__version__ = "0.1.0"
