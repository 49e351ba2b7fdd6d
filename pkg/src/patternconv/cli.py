"""Operator surface: synth, train, curate, eval, compare, explain subcommands
driven by a single JSON config file with reproducible seeds."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import analysis, corpus, curator, evalmetrics, netcore, trainer
from .errors import ConfigError, DataError, NumericalError, PatternConvError
from .objective import MinPenaltyParams
from .schedule import ConstraintSchedule

DEFAULT_CONFIG = {
    "model": {"M": 64, "k": 3, "d": 13, "padding": 1},
    "data": {
        "clip_length": 5,
        "n_clips": 2000,
        "p_plant": 0.06,
        "label_noise": 0.0,
        "feature_noise": 0.0,
        "p_help": 0.3,
        "p_feature": 0.10,
        "p_distract": 0.7,
        "planted_bank": None,
        "dataset": None,
    },
    "split": {"test_fraction": 0.25, "val_fraction": 0.2},
    "train": {
        "learning_rate": 0.05,
        "final_learning_rate": 0.015,
        "batch_size": 64,
        "eras": 5,
        "epochs_per_era": 50,
        "targets": {},
        "harvest_precision_threshold": 0.3,
        "class_weighting": True,
        "dropout_base": 0.35,
        "dropout_era_amp": 0.45,
        "anneal_end_fraction": 0.9,
        "seed": 0,
    },
    "curate": {"n_override": None, "check_shifts": True},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, seed: int | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path) as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    else:
        cfg = _merge(cfg, {})
    if seed is not None:
        cfg["train"]["seed"] = seed
    model = cfg["model"]
    if model["k"] > cfg["data"]["clip_length"] + 2 * model["padding"]:
        raise ConfigError("kernel length exceeds clip length plus padding")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def default_planted_patterns(vocab: corpus.FeatureVocabulary) -> list[curator.Pattern]:
    """Three mutually non-subsuming planted patterns over the default vocabulary."""
    def mk(pid, step_features):
        cells = np.zeros((3, vocab.d), dtype=np.uint8)
        for n, names in enumerate(step_features):
            for name in names:
                cells[n, vocab.feature_names.index(name)] = 1
        return curator.Pattern(cells=cells, pattern_id=pid)

    return [
        mk("planted-0", [["help", "bottom_out_search"], ["incorrect"],
                         ["incorrect", "similar_answer"]]),
        mk("planted-1", [["help"], ["help", "repeated_help"],
                         ["incorrect", "guess_like_entry"]]),
        mk("planted-2", [["incorrect", "similar_answer"], ["incorrect", "similar_answer"],
                         ["correct", "quick_attempt"]]),
    ]


def build_schedule(tcfg: dict) -> ConstraintSchedule:
    return ConstraintSchedule.default(eras=tcfg["eras"], epochs_per_era=tcfg["epochs_per_era"],
                                      targets=tcfg.get("targets") or {})


def build_train_config(cfg: dict) -> trainer.TrainConfig:
    tcfg = cfg["train"]
    return trainer.TrainConfig(
        learning_rate=tcfg["learning_rate"],
        final_learning_rate=tcfg["final_learning_rate"],
        batch_size=tcfg["batch_size"],
        schedule=build_schedule(tcfg),
        min_params=MinPenaltyParams(),
        harvest_precision_threshold=tcfg["harvest_precision_threshold"],
        class_weighting=tcfg["class_weighting"],
        dropout_base=tcfg["dropout_base"],
        dropout_era_amp=tcfg["dropout_era_amp"],
        anneal_end_fraction=tcfg["anneal_end_fraction"],
        seed=tcfg["seed"],
    )


def _planted(cfg: dict, vocab: corpus.FeatureVocabulary) -> list[curator.Pattern]:
    path = cfg["data"].get("planted_bank")
    if path:
        with open(path) as fh:
            return list(curator.bank_from_json(fh.read()).patterns)
    return default_planted_patterns(vocab)


def cmd_synth(cfg: dict, out: str) -> int:
    os.makedirs(out, exist_ok=True)
    vocab = corpus.FeatureVocabulary.default()
    planted = _planted(cfg, vocab)
    data = cfg["data"]
    dataset = corpus.synth_generate(
        vocab, planted, data["n_clips"], data["label_noise"], data["feature_noise"],
        seed=cfg["train"]["seed"], clip_length=data["clip_length"],
        p_plant=data["p_plant"], p_help=data["p_help"], p_feature=data["p_feature"],
        p_distract=data["p_distract"],
    )
    h = config_hash(cfg)
    corpus.write_dataset(dataset, os.path.join(out, "dataset.jsonl"),
                         meta={"config_hash": h})
    bank = curator.PatternBank(patterns=tuple(planted), vocabulary=vocab)
    with open(os.path.join(out, "planted_bank.json"), "w") as fh:
        fh.write(curator.bank_to_json(bank, extra={"config_hash": h}))
    print(f"wrote {len(dataset)} clips (positive rate {dataset.positive_rate:.3f}) to {out}")
    return 0


def _load_splits(cfg: dict, dataset_path: str):
    dataset = corpus.load_dataset(dataset_path)
    split = cfg["split"]
    return corpus.stratified_split(dataset, split["test_fraction"], split["val_fraction"],
                                   seed=cfg["train"]["seed"])


def cmd_train(cfg: dict, out: str, dataset_path: str) -> int:
    os.makedirs(out, exist_ok=True)
    train_set, val_set, _test_set = _load_splits(cfg, dataset_path)
    tc = build_train_config(cfg)
    model = cfg["model"]
    h = config_hash(cfg)

    log_path = os.path.join(out, "training_log.jsonl")
    with open(log_path, "w") as log_fh:
        def log(rec):
            log_fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

        state, snapshots, harvested = trainer.train_full(
            tc, train_set, val_set, model["M"], model["k"], model["d"],
            padding=model["padding"], log=log)

    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    for snap in snapshots:
        extra = {
            "era": snap.era,
            "per_filter_precision": [None if np.isnan(p) else float(p)
                                     for p in snap.per_filter_precision],
            "config_hash": h,
        }
        with open(os.path.join(snap_dir, f"era_{snap.era:03d}.json"), "w") as fh:
            fh.write(netcore.filters_to_json(snap.W, model["padding"], extra))

    with open(os.path.join(out, "model.json"), "w") as fh:
        fh.write(netcore.state_to_json(state))
    bank = curator.PatternBank(patterns=tuple(harvested), vocabulary=train_set.vocabulary)
    with open(os.path.join(out, "harvested.json"), "w") as fh:
        fh.write(curator.bank_to_json(bank, extra={"config_hash": h}))
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump({"config_hash": h, "config": cfg, "eras": len(snapshots),
                   "harvested": len(harvested)}, fh, indent=2)
    print(f"trained {len(snapshots)} eras; harvested {len(harvested)} filters")
    return 0


def cmd_curate(cfg: dict, out: str, snapshots_dir: str, dataset_path: str) -> int:
    os.makedirs(out, exist_ok=True)
    train_set, val_set, _ = _load_splits(cfg, dataset_path)
    vocab = train_set.vocabulary
    model = cfg["model"]
    tcfg = cfg["train"]

    files = sorted(f for f in os.listdir(snapshots_dir) if f.endswith(".json"))
    if not files:
        raise DataError(f"no snapshot files in {snapshots_dir}")
    harvested = []
    for fname in files:
        with open(os.path.join(snapshots_dir, fname)) as fh:
            W, doc = netcore.filters_from_json(fh.read())
        prec = np.array([np.nan if p is None else p
                         for p in doc["per_filter_precision"]], dtype=np.float64)
        harvested.extend(trainer.harvest_filters(
            W, prec, doc.get("era", -1), vocab,
            tcfg["harvest_precision_threshold"], curator.DEFAULT_BINARIZE_TOLERANCE))

    unique = curator.dedup(harvested)
    pruned = curator.prune_subsumed(unique, clip_length=cfg["data"]["clip_length"],
                                    padding=model["padding"],
                                    check_shifts=cfg["curate"]["check_shifts"])
    ranked, curve = curator.cumulative_kappa_curve(pruned, train_set, val_set,
                                                  padding=model["padding"])
    bank = curator.select_bank(curve, ranked, vocab,
                               n_override=cfg["curate"]["n_override"])
    h = config_hash(cfg)
    with open(os.path.join(out, "bank.json"), "w") as fh:
        fh.write(curator.bank_to_json(bank, extra={"config_hash": h}))
    with open(os.path.join(out, "kappa_curve.json"), "w") as fh:
        json.dump({"config_hash": h, "curve": curve}, fh)
    print(f"harvested {len(harvested)} -> unique {len(unique)} -> "
          f"non-redundant {len(pruned)} -> selected {len(bank)}")
    return 0


def _load_predictor(path: str):
    with open(path) as fh:
        text = fh.read()
    doc = json.loads(text)
    if doc.get("format") == "patternconv-bank":
        return curator.bank_from_json(text)
    if doc.get("format") == "patternconv-model":
        return netcore.state_from_json(text)
    raise DataError(f"{path}: neither a bank nor a model file")


def cmd_eval(cfg: dict, out: str, predictor_path: str, dataset_path: str) -> int:
    os.makedirs(out, exist_ok=True)
    predictor = _load_predictor(predictor_path)
    train_set, val_set, test_set = _load_splits(cfg, dataset_path)
    rows = {name: evalmetrics.evaluate(predictor, ds)
            for name, ds in (("train", train_set), ("val", val_set), ("test", test_set))}
    print(evalmetrics.render_table(rows))
    with open(os.path.join(out, "metrics.json"), "w") as fh:
        json.dump({"config_hash": config_hash(cfg),
                   **{name: json.loads(rep.to_json()) for name, rep in rows.items()}}, fh)
    return 0


def cmd_compare(cfg: dict, out: str, bank_path: str, expert_path: str) -> int:
    os.makedirs(out, exist_ok=True)
    with open(bank_path) as fh:
        bank = curator.bank_from_json(fh.read())
    experts = analysis.load_expert_patterns(expert_path, bank.vocabulary)
    report = analysis.compare_banks(bank, experts, k=cfg["model"]["k"])
    report["config_hash"] = config_hash(cfg)
    report["stats"] = analysis.pattern_stats(bank)
    with open(os.path.join(out, "comparison.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    mean = report["all_pairs"]["mean"]
    print(f"compared {len(bank)} learned patterns with "
          f"{len(report['expanded_experts'])} expanded expert patterns; "
          f"mean distance {mean if mean is None else round(mean, 2)}")
    for rec in report["per_expert_nearest"]:
        print(f"  {rec['expert_id']}: nearest {rec['nearest_pattern']} "
              f"at distance {rec['distance']}")
    return 0


def cmd_explain(cfg: dict, out: str, bank_path: str, clip_path: str, clip_id: str) -> int:
    with open(bank_path) as fh:
        bank = curator.bank_from_json(fh.read())
    dataset = corpus.load_dataset(clip_path)
    clip = next((c for c in dataset.clips if c.clip_id == clip_id), None)
    if clip is None:
        raise DataError(f"clip '{clip_id}' not found in {clip_path}")
    exp = analysis.explain(clip, bank, bank.vocabulary, padding=cfg["model"]["padding"])
    print(exp.bullet_text)
    print()
    print(exp.matrix_text)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, per the documented codes
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patternconv")
    parser.add_argument("--config", default=None, help="JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default="runs/out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate a planted-pattern dataset")
    p_train = sub.add_parser("train", help="run the multi-era training loop")
    p_train.add_argument("dataset", help="clip file (from synth or external)")
    p_curate = sub.add_parser("curate", help="curate era snapshots into a pattern bank")
    p_curate.add_argument("snapshots", help="snapshot directory from train")
    p_curate.add_argument("dataset", help="clip file used for ranking/selection splits")
    p_eval = sub.add_parser("eval", help="evaluate a bank or model on the splits")
    p_eval.add_argument("predictor", help="bank.json or model.json")
    p_eval.add_argument("dataset")
    p_cmp = sub.add_parser("compare", help="compare a bank with expert patterns")
    p_cmp.add_argument("bank")
    p_cmp.add_argument("experts", help="line-delimited expert pattern file")
    p_exp = sub.add_parser("explain", help="explain the prediction for one clip")
    p_exp.add_argument("bank")
    p_exp.add_argument("clips")
    p_exp.add_argument("clip_id")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.seed)
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.dataset)
        if args.command == "curate":
            return cmd_curate(cfg, args.out, args.snapshots, args.dataset)
        if args.command == "eval":
            return cmd_eval(cfg, args.out, args.predictor, args.dataset)
        if args.command == "compare":
            return cmd_compare(cfg, args.out, args.bank, args.experts)
        if args.command == "explain":
            return cmd_explain(cfg, args.out, args.bank, args.clips, args.clip_id)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
