import numpy as np
import pytest

from shortfall.errors import ValidationError
from shortfall.metrics import (
    ATN,
    ATP,
    AFN,
    AFP,
    EXCLUDED,
    AdaptedConfusion,
    EvalCase,
    EvalConfig,
    classify_case,
    normalized_confusion,
    precision_recall,
    tally_cases,
)

CONFIG = EvalConfig(horizon_days=28, margin_days=7)


def oracle_classify(case, config):
    """Independent restatement of the adapted rule, written as a flat
    truth table rather than the production control flow."""
    delta, eps = config.horizon_days, config.margin_days
    pred_pos = case.predicted_t <= delta
    act_pos = case.event_observed and case.actual_t <= delta
    if pred_pos and act_pos:
        return ATP if abs(case.predicted_t - case.actual_t) <= eps else AFP
    if pred_pos and not act_pos:
        return AFP
    if not pred_pos and act_pos:
        return AFN
    # Negative prediction, no event inside the horizon: a true negative
    # only when the case was actually observed through the horizon
    # (censoring exactly at day delta still covers all delta days).
    observed_through = case.event_observed or case.actual_t >= delta
    return ATN if observed_through else EXCLUDED


def random_case(rng):
    predicted = int(rng.integers(1, 90))
    actual = int(rng.integers(1, 90))
    observed = bool(rng.integers(0, 2))
    return EvalCase(predicted_t=predicted, actual_t=actual,
                    event_observed=observed)


class TestClassifyCase:
    def test_matches_oracle_on_10k_random_cases(self):
        rng = np.random.default_rng(123)
        for _ in range(10000):
            case = random_case(rng)
            assert classify_case(case, CONFIG) == oracle_classify(case, CONFIG)

    def test_matches_oracle_on_boundary_grid(self):
        # Every combination near the horizon and margin boundaries.
        for predicted in (1, 21, 27, 28, 29, 35, 36, 80):
            for actual in (1, 21, 27, 28, 29, 35, 36, 80):
                for observed in (False, True):
                    case = EvalCase(predicted, actual, observed)
                    assert classify_case(case, CONFIG) == \
                        oracle_classify(case, CONFIG), case

    def test_within_margin_is_true_positive(self):
        assert classify_case(EvalCase(10, 17, True), CONFIG) == ATP

    def test_beyond_margin_is_false_positive(self):
        assert classify_case(EvalCase(10, 18, True), CONFIG) == AFP

    def test_predicted_but_no_event_is_false_positive(self):
        assert classify_case(EvalCase(10, 60, True), CONFIG) == AFP

    def test_predicted_but_censored_early_is_false_positive(self):
        # A positive prediction is never excused by early censoring.
        assert classify_case(EvalCase(10, 5, False), CONFIG) == AFP

    def test_missed_event_is_false_negative(self):
        assert classify_case(EvalCase(50, 20, True), CONFIG) == AFN

    def test_quiet_lane_is_true_negative(self):
        assert classify_case(EvalCase(50, 60, True), CONFIG) == ATN

    def test_censored_before_horizon_is_excluded(self):
        assert classify_case(EvalCase(50, 10, False), CONFIG) == EXCLUDED

    def test_censored_after_horizon_counts_as_negative(self):
        assert classify_case(EvalCase(50, 29, False), CONFIG) == ATN


class TestEvalConfig:
    def test_margin_must_be_smaller_than_horizon(self):
        with pytest.raises(ValidationError):
            EvalConfig(horizon_days=7, margin_days=7)

    def test_nonnegative_margin(self):
        with pytest.raises(ValidationError):
            EvalConfig(horizon_days=28, margin_days=-1)


class TestTally:
    def test_counts_partition_the_cases(self):
        rng = np.random.default_rng(7)
        cases = [random_case(rng) for _ in range(500)]
        confusion = tally_cases(cases, CONFIG)
        assert (confusion.atp + confusion.afp + confusion.atn
                + confusion.afn + confusion.excluded) == 500
        assert confusion.counted == 500 - confusion.excluded

    def test_precision_recall_formulas(self):
        confusion = AdaptedConfusion(atp=23, afp=4, atn=68, afn=5, excluded=0)
        precision, recall = precision_recall(confusion)
        assert abs(precision - 23 / 27) < 1e-12
        assert abs(recall - 23 / 28) < 1e-12

    def test_degenerate_rates_are_none(self):
        confusion = AdaptedConfusion(atp=0, afp=0, atn=10, afn=0, excluded=0)
        precision, recall = precision_recall(confusion)
        assert precision is None and recall is None

    def test_normalized_confusion_sums_to_one(self):
        confusion = AdaptedConfusion(atp=23, afp=4, atn=68, afn=5, excluded=3)
        tp, fn, fp, tn = normalized_confusion(confusion)
        assert abs(tp + fn + fp + tn - 1.0) < 1e-12
        assert abs(tp - 0.23) < 1e-12
        assert abs(tn - 0.68) < 1e-12

    def test_normalized_confusion_rejects_empty(self):
        with pytest.raises(ValidationError):
            normalized_confusion(AdaptedConfusion(0, 0, 0, 0, 5))


class TestPublishedOperatingPoint:
    def test_reference_cell_counts_give_reference_rates(self):
        # 23/5/4/68 true/false positives/negatives over 100 counted cases.
        confusion = AdaptedConfusion(atp=23, afp=4, atn=68, afn=5, excluded=0)
        precision, recall = precision_recall(confusion)
        assert round(precision, 3) == 0.852
        assert round(recall, 3) == 0.821
