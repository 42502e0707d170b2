"""Time-to-shortfall forecasting toolkit.

Discrete-time survival modelling of supplier-to-plant part deliveries:
a small reverse-mode tensor engine, a sequence-to-survival model with
group embeddings and attention, a synthetic lane generator with ground
truth, adapted time-aware quality metrics, and Shapley explanations.
"""

from .errors import (
    EmbeddingIndexError,
    NonConvergenceError,
    SchemaError,
    ShapeError,
    ShortfallError,
    TrainingAbortError,
    ValidationError,
)
from .survival import (
    ObservedOutcome,
    fit_linear_logistic_hazard,
    kaplan_meier,
    median_survival_time,
    negative_log_likelihood,
    restricted_mean_survival,
    survival_from_hazard,
)

__version__ = "1.0.0"

__all__ = [
    "EmbeddingIndexError",
    "NonConvergenceError",
    "ObservedOutcome",
    "SchemaError",
    "ShapeError",
    "ShortfallError",
    "TrainingAbortError",
    "ValidationError",
    "fit_linear_logistic_hazard",
    "kaplan_meier",
    "median_survival_time",
    "negative_log_likelihood",
    "restricted_mean_survival",
    "survival_from_hazard",
]
