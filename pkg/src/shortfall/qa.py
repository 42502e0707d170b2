"""Rolling retrain-and-evaluate harness and the heterogeneity ablation.

Each QA iteration picks a weekly origin, retrains the model on everything
observable before that origin, predicts for the lanes still active at the
origin, and scores the predictions with the adapted confusion rules. The
ablation experiment trains the full model and its group-effect-stripped
twin on the same corpus and compares adapted recall and held-out NLL.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import model as model_mod
from . import pipeline, survival
from .errors import ValidationError
from .metrics import EvalCase, EvalConfig, precision_recall, tally_cases
from .model import ModelConfig, TrainSettings

__all__ = [
    "QAIteration", "QAReport", "rolling_qa", "format_qa_report",
    "evaluate_checkpoint", "AblationResult", "heterogeneity_ablation",
]


@dataclass
class QAIteration:
    origin_day: int
    confusion: object
    precision: Optional[float]
    recall: Optional[float]
    cases: int


@dataclass
class QAReport:
    eval_config: EvalConfig
    iterations: list = field(default_factory=list)

    def averages(self):
        precisions = [it.precision for it in self.iterations if it.precision is not None]
        recalls = [it.recall for it in self.iterations if it.recall is not None]
        return (
            sum(precisions) / len(precisions) if precisions else None,
            sum(recalls) / len(recalls) if recalls else None,
        )


def _truncate_lane(lane, day):
    """Observation of a lane up to (and including) a day."""
    cut = min(lane.last_observed_day, day)
    if cut < 1:
        return None
    event = lane.event_day if lane.event_day is not None and lane.event_day <= cut else None
    return pipeline.LaneSeries(key=lane.key, features=lane.features[:cut],
                               event_day=event, last_observed_day=cut)


def _resolve_ids(key, vocabularies):
    return np.array([
        vocabularies["site"].get(key.site, model_mod.UNKNOWN_ID),
        vocabularies["plant"].get(key.plant, model_mod.UNKNOWN_ID),
        vocabularies["part"].get(key.part, model_mod.UNKNOWN_ID),
    ], dtype=np.intp)


def _predict_times(checkpoint, windows, ids):
    hazards = model_mod.predict_hazard(np.asarray(windows), np.asarray(ids), checkpoint)
    surv = np.cumprod(1.0 - hazards, axis=1)
    return [survival.median_survival_time(s) for s in surv]


def rolling_qa(lanes, config, eval_config=EvalConfig(), iterations=4, step=7,
               stride=7, settings=TrainSettings(), log=None):
    """Weekly retrain/evaluate loop over the tail of the corpus.

    config may omit vocab sizes here; vocabularies are rebuilt per iteration
    from the training cut, mirroring a production weekly refresh.
    """
    lanes = list(lanes)
    if not lanes:
        raise ValidationError("empty corpus")
    horizon = config.horizon
    last = max(lane.last_observed_day for lane in lanes)
    first_origin = last - (iterations - 1) * step - eval_config.horizon_days
    min_required = pipeline.WINDOW_LEN + horizon // 4 + eval_config.horizon_days
    if first_origin < pipeline.WINDOW_LEN + step:
        raise ValidationError(
            f"corpus too short for {iterations} weekly iterations; "
            f"needs at least {min_required} days of history")

    report = QAReport(eval_config=eval_config)
    for j in range(iterations):
        origin = first_origin + j * step
        truncated = [t for t in (_truncate_lane(lane, origin - 1) for lane in lanes)
                     if t is not None]
        dataset = pipeline.build_dataset(truncated, stride=stride,
                                         split_seed=settings.seed + j,
                                         horizon=horizon)
        vocab_sizes = tuple(len(dataset.vocabularies[k]) + 1
                            for k in ("site", "plant", "part"))
        iter_config = replace(config, vocab_sizes=vocab_sizes)
        iter_settings = replace(settings, seed=settings.seed + 1000 * j)
        checkpoint = model_mod.train(dataset, iter_config, iter_settings, log=log)

        windows, ids, cases_meta = [], [], []
        for lane in lanes:
            if lane.last_observed_day < origin:
                continue
            if lane.event_day is not None and lane.event_day <= origin:
                continue
            if origin < pipeline.WINDOW_LEN:
                continue
            raw = lane.features[origin - pipeline.WINDOW_LEN:origin]
            windows.append(pipeline.apply_normalization(raw, dataset.stats))
            ids.append(_resolve_ids(lane.key, dataset.vocabularies))
            if lane.event_day is not None:
                cases_meta.append((lane.event_day - origin, True))
            else:
                cases_meta.append((max(lane.last_observed_day - origin, 1), False))
        cases = []
        if windows:
            times = _predict_times(checkpoint, windows, ids)
            cases = [EvalCase(predicted_t=t_hat, actual_t=actual, event_observed=obs)
                     for t_hat, (actual, obs) in zip(times, cases_meta)]
        confusion = tally_cases(cases, eval_config)
        prec, rec = precision_recall(confusion)
        report.iterations.append(QAIteration(
            origin_day=origin, confusion=confusion,
            precision=prec, recall=rec, cases=len(cases)))
        if log is not None:
            log(f"iteration {j + 1}/{iterations} origin day {origin}: "
                f"{len(cases)} cases, precision {prec}, recall {rec}")
    return report


def format_qa_report(report):
    lines = [
        f"adapted QA report (horizon {report.eval_config.horizon_days} days, "
        f"margin {report.eval_config.margin_days} days)",
        "origin  cases  ATP  AFP  ATN  AFN  excl  precision  recall",
    ]

    def fmt(x):
        return "   n/a" if x is None else f"{x:6.3f}"

    for it in report.iterations:
        c = it.confusion
        lines.append(
            f"{it.origin_day:6d} {it.cases:6d} {c.atp:4d} {c.afp:4d} {c.atn:4d} "
            f"{c.afn:4d} {c.excluded:5d}  {fmt(it.precision)}   {fmt(it.recall)}")
    avg_p, avg_r = report.averages()
    lines.append(f"average{'':29s}{fmt(avg_p)}   {fmt(avg_r)}")
    return "\n".join(lines) + "\n"


def evaluate_checkpoint(checkpoint, samples, eval_config=EvalConfig()):
    """Adapted confusion for window samples whose outcome is the truth."""
    if not samples:
        raise ValidationError("no samples to evaluate")
    windows = [s.window for s in samples]
    ids = [s.ids for s in samples]
    times = _predict_times(checkpoint, windows, ids)
    cases = [EvalCase(predicted_t=t_hat, actual_t=s.outcome.t,
                      event_observed=s.outcome.y == 1)
             for t_hat, s in zip(times, samples)]
    return tally_cases(cases, eval_config)


def _held_out_nll(checkpoint, samples):
    store = checkpoint.to_store()
    config = checkpoint.config
    total = 0.0
    for start in range(0, len(samples), 256):
        chunk = samples[start:start + 256]
        value = model_mod.loss(
            np.stack([np.asarray(s.window) for s in chunk]),
            np.stack([np.asarray(s.ids) for s in chunk]),
            [s.outcome for s in chunk], store, config)
        total += float(value.data) * len(chunk)
    return total / len(samples)


@dataclass
class AblationResult:
    seed: int
    full_recall: Optional[float]
    ablated_recall: Optional[float]
    full_val_nll: float
    ablated_val_nll: float


def heterogeneity_ablation(dataset, config, seeds, settings=TrainSettings(),
                           eval_config=EvalConfig(), log=None):
    """Train full vs group-effect-ablated models per seed on one dataset."""
    results = []
    for seed in seeds:
        run_settings = replace(settings, seed=seed)
        per_model = {}
        for name, cfg in (("full", config),
                          ("ablated", model_mod.ablate_homogeneous(config))):
            checkpoint = model_mod.train(dataset, cfg, run_settings, log=log)
            confusion = evaluate_checkpoint(checkpoint, dataset.validation, eval_config)
            _p, recall = precision_recall(confusion)
            per_model[name] = (recall, _held_out_nll(checkpoint, dataset.validation))
        results.append(AblationResult(
            seed=seed,
            full_recall=per_model["full"][0],
            ablated_recall=per_model["ablated"][0],
            full_val_nll=per_model["full"][1],
            ablated_val_nll=per_model["ablated"][1],
        ))
        if log is not None:
            r = results[-1]
            log(f"seed {seed}: full recall {r.full_recall}, ablated {r.ablated_recall}, "
                f"val NLL {r.full_val_nll:.4f} vs {r.ablated_val_nll:.4f}")
    return results
