"""Command-line entry points.

Commands: synth, train, eval, gradcheck, attn-dump, sweep. Every command
accepts ``--config PATH`` (flat key = value file), ``--seed N``, ``--out DIR``,
and repeatable ``--set key=value`` overrides; flags win over file values.
Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import resolve_config
from .errors import ConfigError, DataError, NumericError, ShapeError
from . import train as runner

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partsearch",
                     description="Train and evaluate part-aware text-to-image person search")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    _add_shared(p)

    p = sub.add_parser("train", help="train encoders, part attention, and classifiers")
    _add_shared(p)
    p.add_argument("--data", default=None, help="dataset manifest path")
    p.add_argument("--checkpoint", default=None, help="resume from this checkpoint")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("eval", help="score text queries against the image gallery")
    _add_shared(p)
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--mode", choices=("global", "part", "both"), default=None)
    p.add_argument("--split", default="test")

    p = sub.add_parser("gradcheck", help="verify gradients against central differences")
    _add_shared(p)
    p.add_argument("--bits", type=int, choices=(32, 64), default=32)
    p.add_argument("--corrupt", action="store_true",
                   help="flip one gradient sign (negative control)")

    p = sub.add_parser("attn-dump", help="dump per-head attention traces for a sample")
    _add_shared(p)
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--sample", type=int, required=True, help="image index in the dataset")

    p = sub.add_parser("sweep", help="train/eval across K or lambda values")
    _add_shared(p)
    p.add_argument("--data", default=None)
    p.add_argument("--param", choices=("K", "lambda"), required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 2,4,8 or 0,0.2")

    return parser


def _collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    for key in ("seed", "out", "data", "checkpoint", "mode", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config, _collect_overrides(args))
        if args.command == "synth":
            manifest = runner.run_synth(cfg)
            print(manifest)
        elif args.command == "train":
            result = runner.run_training(cfg)
            print(f"trained {result['steps']} steps; checkpoint at {result['checkpoint']}")
        elif args.command == "eval":
            print(runner.run_eval(cfg, split=args.split))
        elif args.command == "gradcheck":
            _, ok = runner.run_gradcheck(cfg, bits=args.bits, corrupt=args.corrupt)
            return EXIT_OK if ok else EXIT_NUMERIC
        elif args.command == "attn-dump":
            runner.run_attn_dump(cfg, args.sample)
        elif args.command == "sweep":
            try:
                values = [float(v) for v in args.values.split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError(f"sweep values must be numbers: {args.values!r}") from exc
            print(runner.run_sweep(cfg, args.param, values), end="")
        return EXIT_OK
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
