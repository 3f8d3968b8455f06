"""Evaluate forecasts of noisy experimental results against simple models.

Uncertainty comes from three places: which treatments were tested, which
forecasters were asked, and noise in the experimental estimates. The first
two are handled by a two-level Bayesian bootstrap, the last by empirical
Bayes posteriors for the true effects.
"""

__version__ = "0.1.0"

from .data_model import (  # noqa: E402
    DataValidationError,
    EffectEstimates,
    ForecastMatrix,
    ReplicationDataset,
    backout_replication_effect,
    load_effect_study,
    load_replication_study,
)
from .losses import LossKind, loss  # noqa: E402
from .empirical_bayes import (  # noqa: E402
    PosteriorSampler,
    fit_nonparametric_eb,
    fit_parametric_eb,
    oracle_predictions,
    sample_posterior,
)
from .inference import (  # noqa: E402
    EstimandKind,
    EstimandSpec,
    category_bias,
    estimate,
    per_treatment_bias_simultaneous,
    subgroup_bias,
)

__all__ = [
    "DataValidationError",
    "EffectEstimates",
    "ForecastMatrix",
    "ReplicationDataset",
    "backout_replication_effect",
    "load_effect_study",
    "load_replication_study",
    "LossKind",
    "loss",
    "PosteriorSampler",
    "fit_nonparametric_eb",
    "fit_parametric_eb",
    "oracle_predictions",
    "sample_posterior",
    "EstimandKind",
    "EstimandSpec",
    "category_bias",
    "estimate",
    "per_treatment_bias_simultaneous",
    "subgroup_bias",
]
