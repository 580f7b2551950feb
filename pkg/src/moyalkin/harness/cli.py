"""``mk <kind> --config <path> [--out <dir>] [--seed N]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, MoyalKinError
from .config import KINDS, ExperimentConfig
from .experiments import run_experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mk", description="Run a moyalkin experiment and write CSV tables and a manifest.")
    p.add_argument("kind", nargs="?", choices=KINDS, help="experiment kind")
    p.add_argument("--config", type=Path, help="TOML config (defaults are used for missing keys)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--list-kinds", action="store_true", help="print the experiment kinds and exit")
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.list_kinds:
        print("\n".join(KINDS))
        return 0
    if args.kind is None:
        parser.error("an experiment kind is required")
    try:
        if args.config is not None:
            cfg = ExperimentConfig.from_toml(args.config, kind=args.kind)
        else:
            cfg = ExperimentConfig.defaults(args.kind)
        if args.seed is not None:
            cfg.seed = args.seed
        out = args.out or cfg.out or Path("results") / args.kind
        cfg.out = out
        cfg.validate()
        manifest, result = run_experiment(cfg, out)
    except ConfigError as exc:
        print(f"mk: config error: {exc}", file=sys.stderr)
        return 2
    except MoyalKinError as exc:
        print(f"mk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for name, check in result.checks.items():
        print(f"{'PASS' if check.passed else 'FAIL'}  {name}  value={check.value!r}  threshold={check.threshold!r}")
    print(f"{args.kind}: {'passed' if result.passed else 'FAILED'}; wrote {out}")
    return 0 if result.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
