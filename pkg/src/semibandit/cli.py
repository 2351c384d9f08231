"""Command line entry point: ``semibandit run`` and ``semibandit sweep``.

Exit codes: 0 success, 1 I/O failure, 2 bad configuration, 3 unparsable data.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .exceptions import ConfigError, LetorParseError
from .harness import ALGORITHMS, ExperimentConfig, configure_logging, load_config, run_experiment

log = logging.getLogger("semibandit")


def _base_config(args) -> dict:
    data = load_config(args.config) if args.config else {}
    if args.algo:
        data["algo"] = args.algo
    if args.env:
        data.setdefault("env", {})["kind"] = args.env
    if args.out:
        data["out"] = args.out
    if args.T is not None:
        data["T"] = args.T
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semibandit", description="Contextual semibandit experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--algo", choices=ALGORITHMS)
        p.add_argument("--env", choices=("synth", "letor"))
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--T", type=int, help="override the horizon")

    run = sub.add_parser("run", help="one configuration, one seed")
    common(run)
    run.add_argument("--seed", type=int, default=0)

    sweep = sub.add_parser("sweep", help="grid of hyperparameters over several seeds")
    common(sweep)
    sweep.add_argument("--grid", required=True, help="JSON object mapping parameter -> list")
    sweep.add_argument("--seeds", type=int, nargs="+")
    return parser


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        data = _base_config(args)
        if args.command == "run":
            data["seeds"] = [args.seed]
            data.pop("grid", None)
        else:
            grid = load_config(args.grid)
            data["grid"] = grid.get("grid", grid)
            if args.seeds:
                data["seeds"] = args.seeds
        cfg = ExperimentConfig.from_dict(data)
        result = run_experiment(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except LetorParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 1
    s = result.summary
    print(f"{s['algo']}: final average reward {s['final_avg_reward']:.6f} "
          f"(oracle {s['oracle_reward']:.6f}) -> {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
