"""Approximate marginal posterior inclusion probabilities for spike-and-slab
linear regression via a per-coefficient rotation and a Gaussian predictive
approximation (BCR or AMP), with an exact enumeration oracle for small p."""

__version__ = "0.1.0"

from rotmarg.core import (  # noqa: E402
    Dataset,
    GaussianPredictive,
    MarginalResult,
    RotatedProblem,
    SpikeSlabPrior,
    combine_marginal,
    combine_mixture,
    moment_match,
    rotate_for_index,
    standardize,
)
from rotmarg.exact import exact_inclusion_probs, exact_rotated_predictive, model_log_evidence  # noqa: E402
from rotmarg.bcr import BcrConfig, bcr_predictive  # noqa: E402
from rotmarg.amp import AmpConfig, amp_predictive, amp_run, em_tune, spike_slab_denoise  # noqa: E402
from rotmarg.marginals import ExactConfig, approximate_all_marginals, fit_marginals, tune_prior  # noqa: E402

__all__ = [
    "Dataset", "SpikeSlabPrior", "RotatedProblem", "GaussianPredictive", "MarginalResult",
    "standardize", "rotate_for_index", "combine_marginal", "combine_mixture", "moment_match",
    "exact_inclusion_probs", "exact_rotated_predictive", "model_log_evidence",
    "BcrConfig", "bcr_predictive", "AmpConfig", "amp_run", "amp_predictive", "em_tune",
    "spike_slab_denoise", "ExactConfig", "approximate_all_marginals", "fit_marginals", "tune_prior",
]
