"""Command-line interface: synth, adjudicate, train, eval and selfcheck subcommands.

Exit codes: 0 success, 1 runtime or check failure, 2 usage error.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional

import pandas as pd

from src.back.adjudicator import batch_adjudicate
from src.back.config import load_env, load_run_config, write_frozen_config
from src.back.constants import (
    CLASS_INDEX,
    CLASS_NAMES,
    DECISIONS_FILE,
    N_CLASSES,
    PREVALENCE_PRESETS,
    SELFCHECK_FILE,
    SUMMARY_FILE,
    THRESHOLD_SELECTION_FRACTION,
    THRESHOLDS_FILE,
    TRAIN_LOG_FILE,
    TRAIN_TIMES_FILE,
    WEIGHTS_FILE,
)
from src.back.dataset import DataConfig, load_dataset, write_dataset
from src.back.errors import CardioraError, ConfigMismatchError
from src.back.evalkit import evaluate, format_report_table, select_thresholds, write_report
from src.back.logging_config import logger, set_log_level
from src.back.model import ResNet1d, ResNetConfig, load_weights, save_weights
from src.back.selfcheck import results_table, run_selfcheck
from src.back.synthgen import generate_dataset, resolve_prevalences
from src.back.training import predict, split_dataset, train
from src.back.utils import OutDirLock, Stream, atomic_write_text, derive_rng, iter_jsonl, write_jsonl


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def key_value(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def prevalence(text: str):
    name, value = key_value(text)
    if name not in CLASS_INDEX:
        raise argparse.ArgumentTypeError(f"unknown class {name!r}; classes are {', '.join(CLASS_NAMES)}")
    try:
        fraction = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"prevalence of {name} must be a number, got {value!r}")
    if not 0.0 <= fraction <= 1.0:
        raise argparse.ArgumentTypeError(f"prevalence of {name} must lie in [0, 1], got {fraction}")
    return name, fraction


def thresholds(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be numbers, got {text!r}")
    if len(values) != N_CLASSES:
        raise argparse.ArgumentTypeError(f"expected {N_CLASSES} comma-separated thresholds, got {len(values)}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardiora",
        description="Synthesize, adjudicate, train and evaluate 12-lead ECG abnormality classifiers",
    )
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default: $LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_shared(sub, out_required=True):
        sub.add_argument("--seed", type=int, help="master seed (default: $CARDIORA_SEED or 0)")
        sub.add_argument("--config", help="JSON file of flat dotted keys, e.g. {\"train.epochs\": 10}")
        sub.add_argument("--set", dest="overrides", type=key_value, action="append", default=[],
                         metavar="KEY=VALUE", help="override one config key (repeatable)")
        sub.add_argument("--out", help="output directory (default: $CARDIORA_OUT)")
        sub.set_defaults(out_required=out_required)

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--n", type=positive_int, required=True, help="number of exams")
    synth.add_argument("--preset", choices=sorted(PREVALENCE_PRESETS), help="prevalence preset (default: test)")
    synth.add_argument("--prevalence", type=prevalence, action="append", default=[],
                       metavar="CLASS=FRACTION", help="override one class prevalence (repeatable)")
    add_shared(synth)
    synth.set_defaults(handler=cmd_synth)

    adjudicate = commands.add_parser("adjudicate", help="reconcile diagnosis sources into label decisions")
    adjudicate.add_argument("--input", required=True, help="JSON-lines file of exams")
    add_shared(adjudicate)
    adjudicate.set_defaults(handler=cmd_adjudicate)

    train_cmd = commands.add_parser("train", help="train the network on a dataset")
    train_cmd.add_argument("--dataset", required=True, help="dataset directory holding manifest.jsonl")
    add_shared(train_cmd)
    train_cmd.set_defaults(handler=cmd_train)

    evaluate_cmd = commands.add_parser("eval", help="evaluate trained weights on a dataset")
    evaluate_cmd.add_argument("--dataset", required=True, help="dataset directory holding manifest.jsonl")
    evaluate_cmd.add_argument("--weights", required=True, help="weights file written by train")
    evaluate_cmd.add_argument("--thresholds", type=thresholds,
                              help=f"{N_CLASSES} comma-separated thresholds in order {','.join(CLASS_NAMES)}")
    add_shared(evaluate_cmd)
    evaluate_cmd.set_defaults(handler=cmd_eval)

    selfcheck = commands.add_parser("selfcheck", help="run gradient checks and the published-metric test")
    add_shared(selfcheck, out_required=False)
    selfcheck.set_defaults(handler=cmd_selfcheck)
    return parser


def _resolve(args):
    """Run config and output directory for a parsed command line."""
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "preset", None):
        overrides["synth.preset"] = args.preset
    config = load_run_config(args.config, overrides)
    return config, args.out or load_env()["out_dir"]


def cmd_synth(args, config, out_dir) -> int:
    prevalences = resolve_prevalences(config.synth.preset, dict(args.prevalence))
    with OutDirLock(out_dir):
        write_frozen_config(out_dir, config)
        exams = generate_dataset(args.n, prevalences, config.seed, config.synth)
        write_dataset(out_dir, exams, config.synth.sample_rate_hz)
    return 0


def cmd_adjudicate(args, config, out_dir) -> int:
    items = [item for _, item in iter_jsonl(args.input)]
    if not items:
        logger.warning(f"{args.input} holds no exams")
    with OutDirLock(out_dir):
        write_frozen_config(out_dir, config)
        decisions, summary = batch_adjudicate(items)
        write_jsonl(os.path.join(out_dir, DECISIONS_FILE), decisions)
        atomic_write_text(os.path.join(out_dir, SUMMARY_FILE), json.dumps(summary.to_dict(), indent=2) + "\n")
    print(pd.DataFrame(summary.rule_counts).T.to_string())
    if items and summary.n_exams == 0:
        logger.error(f"All {summary.n_malformed} records in {args.input} were malformed")
        return 1
    return 0


def cmd_train(args, config, out_dir) -> int:
    dataset = load_dataset(args.dataset, config.model.input_samples, config.data.decimation)
    train_config = dataclasses.replace(config.train, seed=config.seed)
    train_set, val_set = split_dataset(dataset, train_config.validation_fraction, config.seed)
    model = ResNet1d.build(config.model, derive_rng(config.seed, Stream.MODEL_INIT))
    with OutDirLock(out_dir):
        write_frozen_config(out_dir, config)
        best, log = train(model, train_set, val_set, train_config)
        best.decimation = config.data.decimation
        save_weights(best, os.path.join(out_dir, WEIGHTS_FILE))
        log.write(os.path.join(out_dir, TRAIN_LOG_FILE))
        log.write_times(os.path.join(out_dir, TRAIN_TIMES_FILE))
    return 0


def _match_weights(config, weights):
    """Run config with the architecture and decimation the weights were trained with.

    Values set away from their defaults must agree with the weights.
    """
    if config.data.decimation != DataConfig().decimation and config.data.decimation != weights.decimation:
        raise ConfigMismatchError(
            f"weights were trained with data.decimation={weights.decimation}, "
            f"run config asks for {config.data.decimation}"
        )
    if weights.decimation != config.data.decimation:
        logger.info(f"Using data.decimation={weights.decimation} stored with the weights")
    return dataclasses.replace(
        config, model=weights.config, data=dataclasses.replace(config.data, decimation=weights.decimation),
    )


def cmd_eval(args, config, out_dir) -> int:
    # A run config that departs from the default architecture must match the weights
    expected = config.model if config.model.architecture() != ResNetConfig().architecture() else None
    weights = load_weights(args.weights, expected_config=expected)
    config = _match_weights(config, weights)
    model = ResNet1d.from_weights(weights)
    dataset = load_dataset(args.dataset, config.model.input_samples, config.data.decimation)

    with OutDirLock(out_dir):
        write_frozen_config(out_dir, config)
        if args.thresholds is not None:
            chosen, report_set, selected_on = args.thresholds, dataset, None
        else:
            report_set, selection_set = split_dataset(
                dataset, THRESHOLD_SELECTION_FRACTION, config.seed, Stream.THRESHOLD_SPLIT)
            chosen = select_thresholds(predict(model, selection_set.signals), selection_set.labels)
            selected_on = selection_set.ids
        report = evaluate(predict(model, report_set.signals), report_set.labels, chosen)
        write_report(report, out_dir)
        atomic_write_text(os.path.join(out_dir, THRESHOLDS_FILE), json.dumps({
            "thresholds": dict(zip(CLASS_NAMES, chosen)),
            "selected_on": selected_on,
        }, indent=2) + "\n")
    print(format_report_table(report))
    return 0


def cmd_selfcheck(args, config, out_dir) -> int:
    results = run_selfcheck(config.seed)
    table = results_table(results)
    print(table.to_string(index=False))
    if out_dir:
        with OutDirLock(out_dir):
            write_frozen_config(out_dir, config)
            atomic_write_text(os.path.join(out_dir, SELFCHECK_FILE),
                              table.to_json(orient="records", indent=2) + "\n")
    return 0 if all(r.passed for r in results) else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = args.log_level or load_env()["log_level"]
    if level:
        try:
            set_log_level(level)
        except ValueError as e:
            parser.error(str(e))

    try:
        config, out_dir = _resolve(args)
        if args.out_required and not out_dir:
            parser.error(f"{args.command}: --out is required (or set CARDIORA_OUT)")
        return args.handler(args, config, out_dir)
    except (CardioraError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        return 1


if __name__ == "__main__":
    sys.exit(main())
