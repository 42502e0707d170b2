import numpy as np
import pytest

from shortfall.errors import ValidationError
from shortfall import model as M
from shortfall import qa, synth
from shortfall.metrics import AdaptedConfusion, EvalConfig
from shortfall.pipeline import LaneKey, LaneSeries, NUM_FEATURES, build_dataset
from shortfall.qa import (
    QAIteration,
    QAReport,
    _truncate_lane,
    evaluate_checkpoint,
    format_qa_report,
    rolling_qa,
)


def small_corpus(days=240, seed=3):
    cfg = synth.GeneratorConfig(n_sites=1, n_plants=2, n_parts=8,
                                days=days, seed=seed)
    lanes, _ = synth.generate_corpus(cfg)
    return lanes


class TestTruncation:
    def test_cuts_history_and_event(self):
        rng = np.random.default_rng(0)
        lane = LaneSeries(key=LaneKey("a", "b", "c"),
                          features=rng.uniform(0, 1, (100, NUM_FEATURES)),
                          event_day=90, last_observed_day=100)
        cut = _truncate_lane(lane, 60)
        assert cut.last_observed_day == 60
        assert cut.event_day is None
        assert cut.features.shape[0] == 60

    def test_keeps_event_inside_cut(self):
        rng = np.random.default_rng(1)
        lane = LaneSeries(key=LaneKey("a", "b", "c"),
                          features=rng.uniform(0, 1, (80, NUM_FEATURES)),
                          event_day=50, last_observed_day=80)
        cut = _truncate_lane(lane, 60)
        assert cut.event_day == 50


class TestRollingQA:
    def test_runs_and_reports(self):
        lanes = small_corpus()
        config = M.ModelConfig(vocab_sizes=(1, 1, 1), encoder_hidden=4,
                               embed_dim=2, group_mlp_hidden=4, horizon=40)
        settings = M.TrainSettings(batch_size=32, max_epochs=2, patience=2, seed=0)
        report = rolling_qa(lanes, config, eval_config=EvalConfig(28, 7),
                            iterations=2, step=7, stride=14, settings=settings)
        assert len(report.iterations) == 2
        assert report.iterations[1].origin_day == report.iterations[0].origin_day + 7
        for it in report.iterations:
            assert it.cases >= 0
            assert it.confusion.counted + it.confusion.excluded == it.cases

    def test_too_short_corpus_raises(self):
        lanes = small_corpus(days=60)
        config = M.ModelConfig(vocab_sizes=(1, 1, 1), horizon=40)
        with pytest.raises(ValidationError):
            rolling_qa(lanes, config, iterations=4, step=7)

    def test_report_formatting(self):
        report = QAReport(eval_config=EvalConfig(28, 7))
        report.iterations.append(QAIteration(
            origin_day=100,
            confusion=AdaptedConfusion(atp=2, afp=1, atn=5, afn=1, excluded=1),
            precision=2 / 3, recall=2 / 3, cases=10))
        text = format_qa_report(report)
        assert "origin" in text and "100" in text
        assert "0.667" in text
        assert text.strip().splitlines()[-1].startswith("average")


class TestEvaluateCheckpoint:
    def test_confusion_covers_all_samples(self):
        lanes = small_corpus()
        ds = build_dataset(lanes, stride=14, horizon=40, val_fraction=0.25)
        config = M.ModelConfig(
            vocab_sizes=tuple(len(ds.vocabularies[k]) + 1
                              for k in ("site", "plant", "part")),
            encoder_hidden=4, embed_dim=2, group_mlp_hidden=4, horizon=40)
        settings = M.TrainSettings(batch_size=32, max_epochs=1, patience=1, seed=0)
        ck = M.train(ds, config, settings)
        confusion = evaluate_checkpoint(ck, ds.validation, EvalConfig(28, 7))
        assert confusion.counted + confusion.excluded == len(ds.validation)

    def test_empty_samples_rejected(self):
        with pytest.raises(ValidationError):
            evaluate_checkpoint(None, [], EvalConfig(28, 7))
