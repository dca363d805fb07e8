"""Command line entry point: introspect, templates, generate, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .catalog import NoPathForJoinCount
from .db import ConnectionFailed, PermissionDenied
from .distribution import BadSpec
from .oracle import OracleUnavailable
from .pipeline import (InvariantViolation, MissingManifest, NoTemplates, build_oracle, build_provider,
                       load_catalog, report, run_generate, run_templates, write_catalog)
from .providers import ProviderFailure

EXIT_OK, EXIT_CONFIG, EXIT_ENV, EXIT_INVARIANT = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--budget-minutes", type=float, help="wall-clock budget for generate")
    common.add_argument("--no-refine", action="store_true", help="skip template refinement")
    common.add_argument("--naive-search", action="store_true",
                        help="replace guided predicate search with uniform random sampling")
    common.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="sqlshaper",
                                description="Generate SQL workloads that match a target cost distribution.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("introspect", parents=[common], help="write the schema catalog of the configured database")
    sub.add_parser("templates", parents=[common], help="generate and verify SQL templates")
    sub.add_parser("generate", parents=[common], help="generate a workload matching the benchmark")
    rp = sub.add_parser("report", parents=[common], help="summarize a run manifest")
    rp.add_argument("manifest", nargs="?", help="manifest file or run directory")
    return p


def _load(args) -> config_mod.RunConfig:
    if not args.config:
        raise config_mod.ConfigError("--config is required")
    overrides = {"seed": args.seed, "budget_minutes": args.budget_minutes}
    if args.out:
        overrides["output_dir"] = str(Path(args.out).resolve())
    cfg = config_mod.load(args.config, overrides)
    cfg.no_refine = cfg.no_refine or args.no_refine
    cfg.naive_search = cfg.naive_search or args.naive_search
    return cfg


def _run(args) -> int:
    if args.command == "report":
        target = args.manifest or args.out
        if not target and args.config:
            target = str(_load(args).output_dir)
        if not target:
            raise config_mod.ConfigError("give a manifest path, --out or --config")
        sys.stdout.write(report(target))
        return EXIT_OK

    cfg = _load(args)
    if args.command == "introspect":
        path = write_catalog(cfg, load_catalog(cfg))
        print(path)
        return EXIT_OK

    catalog = load_catalog(cfg)
    if args.command == "templates":
        oracle = build_oracle(cfg, catalog)
        provider = build_provider(cfg, catalog)
        res = run_templates(cfg, catalog, oracle, provider)
        series = res.attempt_series()
        print(f"verified {len(res.templates)} of {len(res.outcomes)} templates")
        print("spec-correct by attempt:  " + " ".join(map(str, series["spec_correct"])))
        print("syntax-correct by attempt: " + " ".join(map(str, series["syntax_correct"])))
        for spec_id, why in sorted(res.failures.items()):
            print(f"failed {spec_id}: {why}", file=sys.stderr)
        return EXIT_OK if res.templates else EXIT_CONFIG

    manifest = run_generate(cfg, catalog, resume=args.resume)
    print(f"{manifest['status']}: {len(manifest['queries'])} queries, "
          f"distance {manifest['distance']:.6g} -> {cfg.output_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (config_mod.ConfigError, BadSpec, MissingManifest, NoTemplates, NoPathForJoinCount) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConnectionFailed, PermissionDenied, OracleUnavailable, ProviderFailure) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ENV
    except InvariantViolation as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
