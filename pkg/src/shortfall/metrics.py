"""Adapted classification metrics over time-to-shortfall predictions.

A prediction is "positive" when the predicted time falls within the
forecasting horizon. An actual positive is an event observed within the
horizon. A positive prediction of an actual positive only counts as a true
positive when it lands within the margin of error of the actual time;
otherwise it is a false alarm at the wrong time. Cases censored before the
horizon without a prediction inside it have unknowable ground truth and
are excluded from the counted cells.
"""

from dataclasses import dataclass
from typing import Optional

from .errors import ValidationError

ATP, AFP, ATN, AFN, EXCLUDED = "ATP", "AFP", "ATN", "AFN", "EXCLUDED"

__all__ = [
    "ATP", "AFP", "ATN", "AFN", "EXCLUDED",
    "EvalConfig", "EvalCase", "AdaptedConfusion",
    "classify_case", "tally_cases", "precision_recall", "normalized_confusion",
]


@dataclass(frozen=True)
class EvalConfig:
    horizon_days: int = 28        # forecasting horizon, days from the origin
    margin_days: int = 7          # margin of error around the actual time

    def __post_init__(self):
        if self.horizon_days < 1:
            raise ValidationError("horizon must be at least one day")
        if not 0 <= self.margin_days < self.horizon_days:
            raise ValidationError("margin must satisfy 0 <= margin < horizon")


@dataclass(frozen=True)
class EvalCase:
    predicted_t: int                  # days from the origin; horizon+1 token allowed
    actual_t: int                     # event time if event_observed, else censor time
    event_observed: bool

    def __post_init__(self):
        if self.predicted_t < 1 or self.actual_t < 1:
            raise ValidationError("times must be at least one day")


@dataclass
class AdaptedConfusion:
    atp: int = 0
    afp: int = 0
    atn: int = 0
    afn: int = 0
    excluded: int = 0

    @property
    def counted(self):
        return self.atp + self.afp + self.atn + self.afn


def classify_case(case, config):
    """Assign exactly one of ATP/AFP/ATN/AFN/EXCLUDED to a case."""
    delta, eps = config.horizon_days, config.margin_days
    pred_pos = case.predicted_t <= delta
    act_pos = case.event_observed and case.actual_t <= delta
    if pred_pos and act_pos:
        return ATP if abs(case.predicted_t - case.actual_t) <= eps else AFP
    if pred_pos:
        return AFP
    if act_pos:
        return AFN
    observed_through = case.event_observed or case.actual_t >= delta
    return ATN if observed_through else EXCLUDED


def tally_cases(cases, config):
    confusion = AdaptedConfusion()
    for case in cases:
        label = classify_case(case, config)
        if label == ATP:
            confusion.atp += 1
        elif label == AFP:
            confusion.afp += 1
        elif label == ATN:
            confusion.atn += 1
        elif label == AFN:
            confusion.afn += 1
        else:
            confusion.excluded += 1
    return confusion


def precision_recall(confusion) -> tuple:
    """(precision, recall); an undefined ratio comes back as None."""
    precision: Optional[float] = None
    recall: Optional[float] = None
    if confusion.atp + confusion.afp > 0:
        precision = confusion.atp / (confusion.atp + confusion.afp)
    if confusion.atp + confusion.afn > 0:
        recall = confusion.atp / (confusion.atp + confusion.afn)
    return precision, recall


def normalized_confusion(confusion):
    """Proportions (tp, fn, fp, tn) over the four counted cells."""
    total = confusion.counted
    if total == 0:
        raise ValidationError("no counted cases to normalize")
    return (confusion.atp / total, confusion.afn / total,
            confusion.afp / total, confusion.atn / total)
