"""Command line: ``simulate``, ``compare`` and ``placement``.

Exit codes: 0 success, 2 configuration error, 3 trace error, 4 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .core import ConfigError, DivergenceError, InstanceTooLargeError, TraceError
from .placement import exhaustive_place, greedy_place, read_instance
from .sim import POLICIES, PRESETS, SimConfig, compare, preset, run

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_DIVERGENCE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config(path: str | None, preset_name: str | None) -> SimConfig:
    base = preset(preset_name) if preset_name else SimConfig()
    return SimConfig.load(path, base) if path is not None else base


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def cmd_simulate(args) -> int:
    cfg = _config(args.config, args.preset)
    changes = {"seed": args.seed, "out_dir": args.out}
    if args.policy:
        changes["policy"] = args.policy
    cfg = cfg.replace(**changes)
    result = run(cfg)
    last = result.rows[-1]
    print(f"{cfg.name}: {len(result.rows)} periods, final cum_lambda {last.cum_lambda:.4g}, wrote {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    configs = [_config(p, args.preset) for p in args.configs]
    _, summary = compare(configs, _seeds(args.seeds), args.out)
    print(f"{'policy':<12}{'mean_ce':>10}{'cum_lambda':>14}{'mean_cost':>14}")
    for s in sorted(summary, key=lambda s: -s.mean_ce):
        print(f"{s.policy:<12}{s.mean_ce:>10.4f}{s.final_cum_lambda:>14.4g}{s.mean_cost:>14.6g}")
    return EXIT_OK


def cmd_placement(args) -> int:
    try:
        problem = read_instance(args.instance)
    except OSError as exc:
        raise ConfigError(f"cannot read instance: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{args.instance}: {exc}") from None
    res = greedy_place(problem) if args.solver == "greedy" else exhaustive_place(problem)
    print(f"cost {res.cost!r}")
    for k, row in enumerate(res.cache.entries):
        print(f"sbs {k}: " + " ".join(str(int(v)) for v in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mobcache", description="Mobility-aware federated edge caching simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one policy under one seed")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run several configs over several seeds")
    c.add_argument("--configs", nargs="+", required=True)
    c.add_argument("--seeds", required=True, help="comma or space separated")
    c.add_argument("--out", required=True)
    c.add_argument("--preset", choices=sorted(PRESETS))
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("placement", help="solve one placement instance")
    pl.add_argument("--instance", required=True)
    pl.add_argument("--solver", choices=("greedy", "oracle"), default="greedy")
    pl.set_defaults(func=cmd_placement)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InstanceTooLargeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
