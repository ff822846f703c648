"""Command-line entry point: ``gwwalk <experiment> [--config file] [overrides]``.

Exit codes: 0 when every check of the experiment holds, 2 when a check
fails, 1 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import experiments, pgf, tree
from .experiments import ConfigError, ExperimentConfig

EXIT_OK, EXIT_USAGE, EXIT_VERDICT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gwwalk", description="Biased random walks on supercritical Galton-Watson trees.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in experiments.EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--beta", type=float, nargs="+", help="bias values (override config)")
        s.add_argument("--seed", type=int, help="master seed (default %d)" % experiments.DEFAULT_SEED)
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int, help="worker threads")
    d = sub.add_parser("tree-dump", help="print the first generations of a lazy tree")
    d.add_argument("--config", help="JSON config file (only its law is used)")
    d.add_argument("--seed", type=int, default=experiments.DEFAULT_SEED, help="tree seed")
    d.add_argument("--depth", type=int, default=3, help="generations to print")
    return p


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return d


def make_config(args: argparse.Namespace) -> ExperimentConfig:
    d = _read_config(args.config)
    d["experiment"] = args.command
    if args.beta is not None:
        d["betas"] = args.beta
    for key in ("seed", "out", "threads"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    try:
        return ExperimentConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _tree_dump(args) -> int:
    d = _read_config(args.config)
    law = pgf.load_law(d["law"]) if "law" in d else pgf.BINARY
    if args.depth < 0:
        raise ConfigError("depth must be non-negative")
    handle = tree.TreeHandle(args.seed, pgf.derive_laws(law))
    sys.stdout.write(tree.restrict(handle, args.depth).dumps())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "tree-dump":
            return _tree_dump(args)
        cfg = make_config(args)
        code, res = experiments.run_experiment(cfg)
    except (ConfigError, pgf.LawError) as e:
        print(f"gwwalk: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{cfg.experiment}: {'pass' if res.passed else 'FAIL'} ({len(res.rows)} rows -> {cfg.out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
