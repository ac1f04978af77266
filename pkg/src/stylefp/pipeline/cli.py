"""Command-line entry point: ``stylefp {augment,train,calibrate,verify,evaluate} --config PATH``."""

from __future__ import annotations

import argparse
import logging
import sys

import torch
import yaml

from ..errors import StyleFPError
from . import commands
from .config import load_config


def _parse_set(values: list[str]) -> dict:
    out = {}
    for item in values:
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stylefp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="pipeline YAML config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (dotted)")
        return p

    p = add("augment", "self-reconstruct positives and write the augmented manifest")
    p.add_argument("--keep-going", action="store_true", help="report provider failures and continue")

    p = add("train", "train the extractor and verifier; writes an uncalibrated checkpoint")
    p.add_argument("--resume", action="store_true", help="continue from the existing checkpoint")

    p = add("calibrate", "line-search the radius on the val split")
    p.add_argument("--checkpoint", default=None)

    p = add("verify", "test suspect images against the calibrated hypersphere")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", required=True, help="image file or directory")

    p = add("evaluate", "AUC and TPR@FPR on the test split, optional robustness battery")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", default=None, help="test manifest (defaults to the config manifest)")
    p.add_argument("--robustness", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides)
        torch.set_num_threads(max(1, torch.get_num_threads()))
        if args.command == "augment":
            commands.cmd_augment(cfg, keep_going=args.keep_going)
        elif args.command == "train":
            commands.cmd_train(cfg, resume=args.resume)
        elif args.command == "calibrate":
            commands.cmd_calibrate(cfg, checkpoint=args.checkpoint)
        elif args.command == "verify":
            return commands.cmd_verify(cfg, args.input, checkpoint=args.checkpoint)
        elif args.command == "evaluate":
            commands.cmd_evaluate(cfg, checkpoint=args.checkpoint, robustness=args.robustness, test_manifest=args.input)
    except (StyleFPError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
