"""Command-line surface: generate, prepare, train, eval, qa, predict, explain.

Every command resolves its configuration (defaults < config file < --set
overrides), copies the resolved config into the output directory, and is
deterministic given inputs, config, and seeds. Exit codes: 0 success,
2 validation/config error, 3 runtime failure.
"""

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import explain as explain_mod
from . import model as model_mod
from . import pipeline, qa, survival, synth
from .errors import SchemaError, ShortfallError, ValidationError
from .metrics import EvalConfig, normalized_confusion, precision_recall

DEFAULT_CONFIG = {
    "generator": {
        "n_sites": 3, "n_plants": 3, "n_parts": 60, "days": 730,
        "lanes_per_regime": None, "censor_target": 0.25, "seed": 2024,
    },
    "pipeline": {
        "stride": 7, "split_seed": 0, "val_fraction": 0.1, "horizon": 366,
    },
    "model": {
        "encoder_hidden": 32, "embed_dim": 8, "group_mlp_hidden": 32,
        "horizon": 366, "heterogeneous": True,
    },
    "training": {
        "batch_size": 64, "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999,
        "eps": 1e-8, "global_clip": 5.0, "max_epochs": 100, "patience": 5,
        "id_dropout": 0.01, "seed": 0,
    },
    "evaluation": {
        "horizon_days": 28, "margin_days": 7, "iterations": 4, "step": 7,
    },
    "explain": {
        "permutations": 200, "seed": 0, "top_k": 15, "scalar": "mean_days",
    },
}


def load_config(path=None, overrides=()):
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}: malformed config: {e}") from e
        for section, values in user.items():
            if section not in config:
                raise ValidationError(f"{path}: unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ValidationError(f"{path}: section {section!r} must be an object")
            for key, value in values.items():
                if key not in config[section]:
                    raise ValidationError(
                        f"{path}: unknown key {section}.{key}")
                config[section][key] = value
    for item in overrides:
        try:
            dotted, raw = item.split("=", 1)
            section, key = dotted.split(".", 1)
        except ValueError:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        if section not in config or key not in config[section]:
            raise ValidationError(f"--set: unknown key {section}.{key}")
        config[section][key] = json.loads(raw) if raw not in ("",) else raw
    return config


def _prepare_out(out_dir, config):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)


def _model_config(config, vocabularies):
    vocab_sizes = tuple(len(vocabularies[k]) + 1 for k in ("site", "plant", "part"))
    m = config["model"]
    return model_mod.ModelConfig(
        vocab_sizes=vocab_sizes, encoder_hidden=m["encoder_hidden"],
        embed_dim=m["embed_dim"], group_mlp_hidden=m["group_mlp_hidden"],
        horizon=m["horizon"], heterogeneous=m["heterogeneous"])


def _train_settings(config):
    t = config["training"]
    return model_mod.TrainSettings(
        batch_size=t["batch_size"], learning_rate=t["learning_rate"],
        beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"],
        global_clip=t["global_clip"], max_epochs=t["max_epochs"],
        patience=t["patience"], id_dropout=t["id_dropout"], seed=t["seed"])


def _eval_config(config, args):
    e = config["evaluation"]
    horizon = args.delta if getattr(args, "delta", None) else e["horizon_days"]
    margin = args.epsilon if getattr(args, "epsilon", None) is not None else e["margin_days"]
    return EvalConfig(horizon_days=horizon, margin_days=margin)


def cmd_gen(args, config):
    g = config["generator"]
    gen_config = synth.GeneratorConfig(
        n_sites=g["n_sites"], n_plants=g["n_plants"], n_parts=g["n_parts"],
        days=g["days"], lanes_per_regime=g["lanes_per_regime"],
        censor_target=g["censor_target"], seed=g["seed"])
    _prepare_out(args.out, config)
    lanes, truths = synth.generate_corpus(gen_config)
    lanes, truths = synth.apply_censoring(
        lanes, truths, gen_config.censor_target, seed=gen_config.seed + 1,
        stride=config["pipeline"]["stride"], horizon=config["pipeline"]["horizon"])
    pipeline.write_lanes(lanes, os.path.join(args.out, "lanes.jsonl"))
    synth.write_manifest(truths, os.path.join(args.out, "manifest.jsonl"))
    proportion, total = synth._censoring_proportion(
        lanes, config["pipeline"]["stride"], config["pipeline"]["horizon"])
    regimes = {}
    for t in truths:
        regimes[t.regime_id] = regimes.get(t.regime_id, 0) + 1
    print(f"generated {len(lanes)} lanes over {gen_config.days} days")
    print("lanes per regime: " + ", ".join(f"{r}:{c}" for r, c in sorted(regimes.items())))
    print(f"window-level censoring proportion: {proportion:.3f} over {total} windows")
    return 0


def cmd_prepare(args, config):
    p = config["pipeline"]
    _prepare_out(args.out, config)
    lanes = pipeline.read_lanes(args.lanes)
    dataset = pipeline.build_dataset(
        lanes, stride=p["stride"], split_seed=p["split_seed"],
        val_fraction=p["val_fraction"], horizon=p["horizon"])
    pipeline.write_dataset(dataset, os.path.join(args.out, "dataset.jsonl"))
    with open(os.path.join(args.out, "stats.json"), "w") as f:
        json.dump(dataset.stats.to_dict(), f, indent=2)
    train_keys = {s.key for s in dataset.train}
    val_keys = {s.key for s in dataset.validation}
    assert not (train_keys & val_keys), "lane leakage across splits"
    for key, value in dataset.summary.items():
        print(f"{key}: {value}")
    return 0


def cmd_train(args, config):
    out_dir = os.path.dirname(os.path.abspath(args.checkpoint)) or "."
    _prepare_out(out_dir, config)
    dataset = pipeline.read_dataset(args.dataset)
    model_config = _model_config(config, dataset.vocabularies)
    if args.ablate:
        model_config = model_mod.ablate_homogeneous(model_config)
    epoch_lines = []

    def log(line):
        epoch_lines.append(line)
        print(line)

    checkpoint = model_mod.train(dataset, model_config, _train_settings(config), log=log)
    model_mod.save_checkpoint(checkpoint, args.checkpoint)
    with open(os.path.join(out_dir, "epochs.log"), "w") as f:
        f.write("\n".join(epoch_lines) + "\n")
    print(f"saved checkpoint to {args.checkpoint} "
          f"(best epoch {checkpoint.metadata['best_epoch']})")
    return 0


def cmd_eval(args, config):
    checkpoint = model_mod.load_checkpoint(args.checkpoint)
    dataset = pipeline.read_dataset(args.dataset)
    samples = dataset.validation or dataset.train
    eval_config = _eval_config(args=args, config=config)
    confusion = qa.evaluate_checkpoint(checkpoint, samples, eval_config)
    prec, rec = precision_recall(confusion)
    print(f"horizon {eval_config.horizon_days} days, margin {eval_config.margin_days} days")
    print(f"cases: {confusion.counted} counted, {confusion.excluded} excluded")
    print(f"ATP {confusion.atp}  AFP {confusion.afp}  ATN {confusion.atn}  AFN {confusion.afn}")
    if confusion.counted:
        tp, fn, fp, tn = normalized_confusion(confusion)
        print(f"normalized confusion: TP {tp:.3f}  FN {fn:.3f}  FP {fp:.3f}  TN {tn:.3f}")
    print(f"precision: {'n/a' if prec is None else f'{prec:.3f}'}")
    print(f"recall: {'n/a' if rec is None else f'{rec:.3f}'}")
    return 0


def cmd_qa(args, config):
    lanes = pipeline.read_lanes(args.lanes)
    e = config["evaluation"]
    iterations = args.iterations or e["iterations"]
    model_config = _model_config(config, {"site": {}, "plant": {}, "part": {}})
    report = qa.rolling_qa(
        lanes, model_config, eval_config=_eval_config(args=args, config=config),
        iterations=iterations, step=e["step"], stride=config["pipeline"]["stride"],
        settings=_train_settings(config), log=print if args.verbose else None)
    print(qa.format_qa_report(report), end="")
    return 0


def cmd_predict(args, config):
    checkpoint = model_mod.load_checkpoint(args.checkpoint)
    dataset = pipeline.read_dataset(args.dataset)
    samples = dataset.validation if args.split == "validation" else dataset.train
    samples = samples[:args.limit] if args.limit else samples
    if not samples:
        raise ValidationError("no samples in the requested split")
    horizon = checkpoint.config.horizon
    print(f"lane\tmedian_days\tmean_days\tobserved_t\tobserved_y")
    for s in samples:
        surv = model_mod.predict_survival(s.window, s.ids, checkpoint)
        median = survival.median_survival_time(surv)
        token = f"{median}" if median <= horizon else f"no-shortfall-within-{horizon}"
        mean_days = survival.restricted_mean_survival(surv)
        print(f"{s.key.site}/{s.key.plant}/{s.key.part}\t{token}"
              f"\t{mean_days:.1f}\t{s.outcome.t}\t{s.outcome.y}")
    return 0


def cmd_explain(args, config):
    checkpoint = model_mod.load_checkpoint(args.checkpoint)
    dataset = pipeline.read_dataset(args.dataset)
    samples = dataset.validation or dataset.train
    if not 0 <= args.index < len(samples):
        raise ValidationError(f"sample index {args.index} out of range 0..{len(samples) - 1}")
    sample = samples[args.index]
    e = config["explain"]
    permutations = args.permutations or e["permutations"]
    players = explain_mod.window_players()
    train_windows = np.stack([s.window for s in (dataset.train or samples)])
    baseline = train_windows.mean(axis=0).reshape(-1)
    fn = explain_mod.model_scalar_fn(checkpoint, sample.ids, scalar=e["scalar"])
    report = explain_mod.shapley_sampling(
        fn, sample.flat, baseline, players,
        n_permutations=permutations, seed=e["seed"])
    gap = abs(report.base_value + report.total() - report.prediction)
    rows, text = explain_mod.waterfall_export(report, args.top_k or e["top_k"])
    print(text, end="")
    print(f"efficiency check: |base + sum - prediction| = {gap:.2e} (pass)"
          if gap <= 1e-9 else f"efficiency check FAILED: {gap:.2e}")
    if args.svg:
        explain_mod.waterfall_svg(report, args.top_k or e["top_k"], args.svg)
        print(f"wrote waterfall to {args.svg}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shortfall",
        description="Time-to-shortfall forecasting toolkit: synthetic lane "
                    "generation, windowing, sequence-to-survival training, "
                    "adapted QA metrics, and Shapley explanations.")
    parser.add_argument("--config", help="JSON config file (sectioned key/value)")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one resolved config value (JSON literal)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="emit a synthetic lane corpus plus truth manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("prepare", help="segment, label, split, and normalize windows")
    p.add_argument("--lanes", required=True, help="lanes.jsonl from gen")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write its checkpoint")
    p.add_argument("--dataset", required=True, help="dataset.jsonl from prepare")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--ablate", action="store_true",
                   help="train the group-effect-ablated (homogeneous) model")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="adapted precision/recall on the validation split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--delta", type=int, help="forecasting horizon in days")
    p.add_argument("--epsilon", type=int, help="margin of error in days")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("qa", help="rolling weekly retrain/evaluate harness")
    p.add_argument("--lanes", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--epsilon", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_qa)

    p = sub.add_parser("predict", help="survival curves and point predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "validation"], default="validation")
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("explain", help="Shapley attribution for one prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0, help="sample index to explain")
    p.add_argument("--permutations", type=int)
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--svg", help="also write an SVG waterfall to this path")
    p.set_defaults(fn=cmd_explain)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.set)
        return args.fn(args, config)
    except (ValidationError, SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ShortfallError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
