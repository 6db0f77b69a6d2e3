"""Command-line front door: run experiment arms from a TOML config.

Verbs:
    run             execute one arm, write <arm>.csv
    sweep           execute every arm, write per-arm CSVs plus summary.csv
    validate        check the config and exit
    print-defaults  emit the default config

A config file has one ``[common]`` table plus any number of ``[arms.NAME]``
tables overriding it.  Arms share the dataset, update budget, and seed with
``[common]`` so their reports stay comparable; those keys cannot be
overridden per arm.  ``PSSIM_OUT_DIR`` (or --out-dir) overrides the output
directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .config import CONFIG_FIELDS, RunConfig
from .errors import ConfigurationError, IngestionError, PssimError
from .simulator import ACCURACY_THRESHOLDS, run, series_summary

ENV_OUT_DIR = "PSSIM_OUT_DIR"
SHARED_KEYS = ("seed", "dataset", "data_dir", "iterations")
NOT_REACHED = "not reached"

SUMMARY_COLUMNS = (
    "arm",
    "protocol",
    "ratio",
    "applied_updates",
    "truncated",
    "final_accuracy",
    "max_accuracy",
    "total_ingress_bytes",
    *(f"bytes_at_{t}" for t in ACCURACY_THRESHOLDS),
)


class ExperimentPlan:
    def __init__(self, arms: dict[str, RunConfig], out_dir: str):
        self.arms = arms
        self.out_dir = out_dir


def _apply(table: dict, base: RunConfig, scope: str, shared_frozen: bool) -> RunConfig:
    values = {}
    for key, value in table.items():
        if key not in CONFIG_FIELDS:
            raise ConfigurationError(f"{scope}.{key}: unknown key")
        if shared_frozen and key in SHARED_KEYS:
            raise ConfigurationError(
                f"{scope}.{key}: must be set in [common]; arms share it"
            )
        if isinstance(value, list):
            value = [float(v) for v in value]
        values[key] = value
    try:
        return replace(base, **values)
    except TypeError as exc:
        raise ConfigurationError(f"{scope}: {exc}") from exc


def load_plan(path: str | Path, seed: int | None = None) -> ExperimentPlan:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}")

    known = {"common", "arms", "out_dir"}
    for key in raw:
        if key not in known:
            raise ConfigurationError(f"{key}: unknown top-level key")

    base = _apply(raw.get("common", {}), RunConfig(), "common", shared_frozen=False)
    if seed is not None:
        base = replace(base, seed=seed)
    arm_tables = raw.get("arms", {})
    if not arm_tables:
        arm_tables = {base.protocol: {}}
    arms = {
        name: _apply(table, base, f"arms.{name}", shared_frozen=True)
        for name, table in arm_tables.items()
    }
    for name, cfg in arms.items():
        try:
            cfg.validate()
        except ConfigurationError as exc:
            raise ConfigurationError(f"arms.{name}: {exc}") from exc
    return ExperimentPlan(arms, raw.get("out_dir", "runs"))


def _out_dir(plan: ExperimentPlan, flag: str | None) -> Path:
    path = Path(flag or os.environ.get(ENV_OUT_DIR) or plan.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _summary_row(name: str, config: RunConfig, summary_fields: dict) -> str:
    cells = [
        name,
        config.protocol,
        repr(config.ratio),
        str(summary_fields["applied_updates"]),
        str(summary_fields["truncated"]),
        repr(summary_fields["final_accuracy"]),
        repr(summary_fields["max_accuracy"]),
        str(summary_fields["total_ingress_bytes"]),
    ]
    for threshold in ACCURACY_THRESHOLDS:
        reached = summary_fields["bytes_to_accuracy"][threshold]
        cells.append(NOT_REACHED if reached is None else str(reached))
    return ",".join(cells)


def _execute_arm(name: str, config: RunConfig, out_dir: Path) -> dict:
    report = run(config)
    csv_path = out_dir / f"{name}.csv"
    report.write_csv(csv_path)
    fields = series_summary(report.records, config.iterations)
    flag = " [truncated]" if fields["truncated"] else ""
    print(
        f"{name}: {fields['applied_updates']} updates, "
        f"max acc {fields['max_accuracy']:.4f}, "
        f"{fields['total_ingress_bytes']} ingress bytes -> {csv_path}{flag}"
    )
    return fields


def cmd_run(args) -> int:
    plan = load_plan(args.config, args.seed)
    if args.arm is None:
        if len(plan.arms) != 1:
            raise ConfigurationError(
                f"--arm required; config defines {sorted(plan.arms)}"
            )
        args.arm = next(iter(plan.arms))
    if args.arm not in plan.arms:
        raise ConfigurationError(f"arms.{args.arm}: not defined in {args.config}")
    out_dir = _out_dir(plan, args.out_dir)
    _execute_arm(args.arm, plan.arms[args.arm], out_dir)
    return 0


def cmd_sweep(args) -> int:
    plan = load_plan(args.config, args.seed)
    out_dir = _out_dir(plan, args.out_dir)
    rows = [",".join(SUMMARY_COLUMNS)]
    for name in plan.arms:
        fields = _execute_arm(name, plan.arms[name], out_dir)
        rows.append(_summary_row(name, plan.arms[name], fields))
    summary_path = out_dir / "summary.csv"
    summary_path.write_text("\n".join(rows) + "\n")
    print(f"summary -> {summary_path}")
    return 0


def cmd_validate(args) -> int:
    plan = load_plan(args.config, args.seed)
    print(f"ok: {len(plan.arms)} arm(s): {', '.join(sorted(plan.arms))}")
    return 0


def cmd_print_defaults(_args) -> int:
    print("[common]")
    for key, value in asdict(RunConfig()).items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        elif isinstance(value, list):
            text = "[" + ", ".join(repr(v) for v in value) + "]"
        else:
            text = repr(value)
        print(f"{key} = {text}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pssim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="TOML experiment config")
            p.add_argument("--seed", type=int, default=None, help="override the shared seed")
            p.add_argument("--out-dir", default=None, help="output directory")
        p.set_defaults(fn=fn)
        return p

    run_p = add("run", cmd_run)
    run_p.add_argument("--arm", default=None, help="arm name to execute")
    add("sweep", cmd_sweep)
    add("validate", cmd_validate)
    add("print-defaults", cmd_print_defaults, needs_config=False)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PssimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
