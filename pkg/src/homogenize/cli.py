"""Command-line interface.

Subcommands
-----------
run      Execute an experiment config and write artifacts.
check    Validate a config without running anything.
presets  List the built-in coefficient fields.

Exit codes: 0 on success (for ``run``: all checks passed), 1 when a run
completes but some check failed, 2 for invalid configs or I/O problems.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .coeff_fields import make_preset, preset_names
from .harness import ConfigError, run, validate_config


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="homogenize",
        description="Periodic homogenization: cell problems, effective tensors, "
                    "and two-scale expansion error rates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("--config", required=True, help="path to a JSON config")
    run_p.add_argument("--output-dir", default=None,
                       help="override the config's output directory")
    run_p.add_argument("--workers", type=int, default=None,
                       help="override the config's worker count")

    check_p = sub.add_parser("check", help="validate a config without running")
    check_p.add_argument("--config", required=True, help="path to a JSON config")

    sub.add_parser("presets", help="list built-in coefficient fields")
    return parser


def _load_raw_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
    except json.JSONDecodeError as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
    return None


def _cmd_presets():
    for name in preset_names():
        field = make_preset(name)
        kind = type(field).__name__
        sampling = "smooth" if field.smooth else "piecewise constant"
        print(
            f"{name}: {kind}, ellipticity [{field.lower_bound:g}, "
            f"{field.upper_bound:g}], {sampling}"
        )
    return 0


def _cmd_check(args):
    raw = _load_raw_config(args.config)
    if raw is None:
        return 2
    try:
        config = validate_config(raw)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return 2
    fields = ", ".join(f.name for f in config.fields)
    print(
        f"config ok: {len(config.fields)} field(s) [{fields}], "
        f"cell_grid {config.cell_grid}, {len(config.epsilons)} epsilon(s), "
        f"resolution_factor {config.resolution_factor}"
    )
    return 0


def _cmd_run(args):
    raw = _load_raw_config(args.config)
    if raw is None:
        return 2
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    if args.workers is not None:
        raw["workers"] = args.workers
    try:
        config = validate_config(raw)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return 2

    summary = run(config)

    for name, check in summary.all_checks():
        status = "PASS" if check["passed"] else "FAIL"
        print(f"[{status}] {name}: {check['name']} ({check['detail']})")
    for failure in summary.errors:
        print(f"[FAIL] stage {failure['stage']}: {failure['error']}")
    if config.output_dir is not None:
        print(f"artifacts written to {Path(config.output_dir).resolve()}")
    print("result: " + ("all checks passed" if summary.passed else "checks failed"))
    return 0 if summary.passed else 1


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        return _cmd_presets()
    if args.command == "check":
        return _cmd_check(args)
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
