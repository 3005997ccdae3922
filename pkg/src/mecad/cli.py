"""Command-line front end.

Subcommands::

    mecad run CONFIG [--seed N] [--out DIR] [--until T]
    mecad estimate --profile P --batch B --offset O --rate R
    mecad validate CONFIG_OR_POLICY_FILE
    mecad demo-usecase [--seed N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 runtime error. Outputs go to
``--out``, else to ``$MECAD_OUT``, else to ``./mecad-out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import perf
from .config import ConfigError, build_config, load_config
from .policy import PolicySyntaxError, parse_policies
from .sim import Simulation, report

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "MECAD_OUT"

log = logging.getLogger("mecad")


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "mecad-out")


def write_outputs(sim: Simulation, out: Path, extra: dict | None = None) -> None:
    """Write ``metrics.csv``, ``workflow.log`` and ``summary.json`` under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report(sim.log, "csv"))
    (out / "workflow.log").write_text(sim.log.workflow_text())
    summary = sim.log.summary()
    summary["seed"] = sim.config.seed
    summary["flows_injected"] = sim.injected
    summary.update(extra or {})
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    sim = Simulation(cfg)
    sim.run_until(args.until)
    out = _out_dir(args.out)
    write_outputs(sim, out)
    print(f"{len(sim.log)} rows, {len(sim.log.workflows)} workflows -> {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    profile = perf.DEFAULT_PROFILES.get(args.profile)
    if profile is None:
        raise ConfigError(f"unknown profile {args.profile!r} (known: {', '.join(sorted(perf.DEFAULT_PROFILES))})")
    try:
        cfg = perf.PipelineConfig(profile, args.batch, args.offset, args.t_limit)
        lo, hi = perf.detection_time_bounds(cfg, args.rate)
        rows = [
            ("profile", profile.name),
            ("batch_size", cfg.batch_size),
            ("offset", cfg.offset),
            ("flow_rate", f"{args.rate:g} flows/s"),
            ("t_bf", f"{perf.t_bf(cfg.offset, args.rate):.6e} s"),
            ("t_fill", f"{perf.t_fill(cfg, args.rate):.6f} s"),
            ("t_ev", f"{perf.t_ev(cfg):.6f} s"),
            ("t_det_min", f"{lo:.6f} s"),
            ("t_det_max", f"{hi:.6f} s"),
            ("mean_detection_time", f"{perf.mean_detection_time(cfg, args.rate):.6f} s"),
            ("max_sustainable_rate", f"{perf.max_sustainable_rate(cfg):,.0f} flows/s"),
            ("feature_capacity", f"{perf.feature_capacity(cfg):,.0f} features/s"),
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sustainable = args.rate <= perf.max_sustainable_rate(cfg)
    rows.append(("status", "sustainable" if sustainable else "overloaded"))
    for k, v in rows:
        print(f"{k:<22}{v}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if doc is None:
        # not JSON: treat as a policy file
        try:
            policies = parse_policies(text)
        except PolicySyntaxError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for p in policies:
            print(f"policy {p.id}: {p.family.value}, {len(p.conditions)} conditions, "
                  f"{len(p.actions)} actions, thresholds {sorted(p.thresholds) or '-'}")
        print(f"{path}: {len(policies)} policies OK")
        return EXIT_OK
    cfg = build_config(doc, path.parent)
    print(f"{path}: OK ({len(cfg.rans)} RANs, {len(cfg.policies)} policies, seed {cfg.seed})")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .usecase import check_triggers, run_usecase

    sim = run_usecase(args.seed)
    checks = check_triggers(sim)
    out = _out_dir(args.out)
    write_outputs(sim, out, {"triggers": [
        {"policy": c.policy, "scripted": c.scripted, "first_condition": c.first_condition,
         "first_fired": c.first_fired, "ok": c.ok} for c in checks]})
    for c in checks:
        fired = "never" if c.first_fired is None else f"{c.first_fired:.3f}"
        print(f"{c.policy:<18} scripted {c.scripted:.3f}  fired {fired}  {'OK' if c.ok else 'MISMATCH'}")
    print(f"outputs -> {out}")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mecad", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log policy decisions")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a JSON config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--until", type=float, help="end time in scenario time units")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("estimate", help="detection-time and throughput estimates")
    e.add_argument("--profile", required=True, help="cpu-tf or gpu-caffe2")
    e.add_argument("--batch", type=int, required=True)
    e.add_argument("--offset", type=int, default=1)
    e.add_argument("--rate", type=float, required=True, help="flows per second")
    e.add_argument("--t-limit", type=float, default=5.0)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("validate", help="check a config or policy file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("demo-usecase", help="run the four-concern use case")
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
