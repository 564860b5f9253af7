"""Command-line entry point: ``thermoflip <command> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 simulation blow-up (or a pattern
run aborted by the device), 4 fit did not converge, 5 pattern parse error,
6 pattern has feasibility annotations under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import calibration
from .closedloop import SimClock
from .controller import ControllerConfig
from .device import traces
from .device.backend import (DeviceEmulator, DeviceIOError, LoopbackTransport, SimulatedBackend,
                             WireBackend)
from .pattern import PatternError, RunAborted, compile_pattern, parse_pattern, run
from .thermal import (DEFAULT_DT, BlowUpError, DriveInput, Face, PeltierParams, lifetime,
                      simulate)

log = logging.getLogger("thermoflip")

OUT_ENV = "THERMOFLIP_OUT"
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_NONCONVERGED = 4
EXIT_PARSE = 5
EXIT_STRICT = 6


class ConfigError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get(OUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _out_path(args, default_name: str) -> Path:
    if args.out:
        p = Path(args.out)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    return _out_dir(args) / default_name


def _load_params(path: str | None) -> PeltierParams:
    if path is None:
        return calibration.calibrated_params()
    try:
        return PeltierParams.load(path)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot load params {path}: {exc}") from exc


def _check_dt(dt: float) -> None:
    if not 0 < dt <= 0.1:
        raise ConfigError(f"--dt must lie in (0, 0.1], got {dt}")


def _fmt_opt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def cmd_simulate(args) -> int:
    _check_dt(args.dt)
    if args.voltage is None:
        raise ConfigError("--voltage is required")
    params = _load_params(args.params)
    try:
        drive = DriveInput(args.voltage, contact=args.contact != "none",
                           contact_side=Face.WARM if args.contact == "none" else Face(args.contact))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        series = simulate(params, drive, args.duration, args.dt)
    except BlowUpError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_BLOWUP
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_path(args, "simulate.csv")
    traces.write_series(series, out)
    summary = {"voltage": args.voltage, "trace": str(out), **lifetime(series, params).to_dict()}
    _emit(summary)
    return 0


def cmd_lifetime(args) -> int:
    params = _load_params(args.params)
    try:
        series = traces.read_series(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if len(series) == 0:
        raise ConfigError("trace is empty")
    _emit(lifetime(series, params).to_dict())
    return 0


def cmd_calibrate(args) -> int:
    try:
        obs = (calibration.load_observations(args.observations) if args.observations
               else calibration.bundled_observations())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad observations: {exc}") from exc
    if not obs:
        raise ConfigError("no observations")
    initial = (_load_params(args.initial) if args.initial
               else calibration.default_initial_params())
    report = calibration.fit(obs, initial, max_iters=args.max_iters, restarts=args.restarts,
                             seed=args.seed, workers=args.workers)
    out = _out_dir(args)
    report.params.save(out / "calibrated_params.json")
    (out / "fit_report.json").write_text(report.to_json())
    errors = {f"{p.voltage:g}": p.relative_error for p in report.predictions}
    if args.pretty:
        print(f"{'V':>5} {'measured':>9} {'model':>9} {'rel.err':>8} flag")
        for p in report.predictions:
            model = "-" if p.predicted_lifetime is None else f"{p.predicted_lifetime:9.2f}"
            ok = "ok" if p.predicted_target_reached == p.target_reached else "MISMATCH"
            print(f"{p.voltage:5.2f} {p.lifetime_mean:9.2f} {model:>9} {p.relative_error:+8.4f} {ok}")
        print(f"loss {report.final_loss:.6g}, converged={report.converged}")
    else:
        _emit({"converged": report.converged, "final_loss": report.final_loss,
               "iterations": report.iterations, "relative_errors": errors,
               "params": str(out / "calibrated_params.json")})
    if not report.converged and not args.allow_nonconverged:
        sys.stderr.write(f"error: fit did not converge within {args.max_iters} iterations\n")
        return EXIT_NONCONVERGED
    return 0


def cmd_sweep(args) -> int:
    _check_dt(args.dt)
    params = _load_params(args.params)
    try:
        rows = calibration.sweep(params, args.v_from, args.v_to, args.step, args.duration, args.dt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_path(args, "sweep.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["voltage_V", "lifetime_s", "time_to_target_s", "max_warm_C",
                    "target_reached_within_lifetime", "error"])
        for r in rows:
            res = r.result
            if res is None:
                w.writerow([f"{r.voltage:.3f}", "", "", "", "", r.error])
            else:
                w.writerow([f"{r.voltage:.3f}", _fmt_opt(res.lifetime), _fmt_opt(res.time_to_target),
                            f"{res.max_warm_temp:.6f}", int(res.target_reached_within_lifetime), ""])
    best = calibration.select_optimal_voltage(rows)
    if args.pretty:
        for r in rows:
            life = "blow-up" if r.result is None else _fmt_opt(r.result.lifetime) or "-"
            print(f"{r.voltage:5.2f} V  lifetime {life}")
        print(f"optimal voltage: {best}")
    else:
        _emit({"optimal_voltage": best, "rows": len(rows), "table": str(out)})
    return 0


def _load_controller(path: str | None) -> ControllerConfig:
    if path is None:
        return ControllerConfig()
    try:
        return ControllerConfig.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot load controller config {path}: {exc}") from exc


def cmd_run_pattern(args) -> int:
    params = _load_params(args.params)
    config = _load_controller(args.controller)
    try:
        text = Path(args.pattern).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        script = parse_pattern(text)
    except PatternError as exc:
        sys.stderr.write(f"{args.pattern}:{exc.line}:{exc.column}: {exc.message}\n")
        return EXIT_PARSE
    try:
        schedule = compile_pattern(script, config, params)
    except DeviceIOError as exc:
        sys.stderr.write(f"error: pre-simulation aborted: {exc}\n")
        return EXIT_BLOWUP
    out = _out_dir(args)
    (out / "schedule.json").write_text(schedule.to_json())
    for a in schedule.annotations:
        log.warning("event %d element %d: %s (%s)", a.event, a.element, a.kind, a.detail)
    if schedule.annotations and args.strict:
        _emit({"annotations": len(schedule.annotations), "strict": True})
        return EXIT_STRICT

    sim = SimulatedBackend(params, rotation_latency=config.rotation_latency,
                           noise_sigma=args.noise, seed=args.seed, skin_face=config.park_face)
    backend = sim if args.backend == "sim" else WireBackend(LoopbackTransport(DeviceEmulator(sim)))
    code = 0
    try:
        trace = run(schedule, backend, SimClock(sim), config, duration=args.duration)
    except RunAborted as exc:
        sys.stderr.write(f"error: {exc}\n")
        trace, code = exc.trace, EXIT_BLOWUP

    traces.write_actions(trace.actions, out / "actions.csv")
    for e in range(8):
        traces.write_series(trace.series(e), out / f"element{e}.csv")
    with open(out / "skin.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s"] + [f"skin{e}_C" for e in range(8)])
        cols = [trace.skin_temps(e) for e in range(8)]
        for k, t in enumerate(trace.t):
            w.writerow([f"{t:.6f}"] + ["" if c[k] != c[k] else f"{c[k]:.6f}" for c in cols])
    _emit({"annotations": len(schedule.annotations), "actions": len(trace.actions),
           "ticks": len(trace), "errors": trace.errors, "out": str(out)})
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--pretty", action="store_true", help="human-readable output")

    p = argparse.ArgumentParser(prog="thermoflip", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file of option defaults (flags still win)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="constant-voltage run and lifetime summary")
    s.add_argument("--params")
    s.add_argument("--voltage", type=float, help="required (flag or --config)")
    s.add_argument("--duration", type=float, default=600.0)
    s.add_argument("--dt", type=float, default=DEFAULT_DT)
    s.add_argument("--contact", choices=["none", "warm", "cold"], default="none")
    s.add_argument("--out", help="trace CSV path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("lifetime", parents=[common], help="lifetime analysis of a trace CSV")
    s.add_argument("trace")
    s.add_argument("--params")
    s.set_defaults(func=cmd_lifetime)

    s = sub.add_parser("calibrate", parents=[common], help="fit parameters to lifetime data")
    s.add_argument("--observations")
    s.add_argument("--initial")
    s.add_argument("--restarts", type=int, default=4)
    s.add_argument("--max-iters", type=int, default=2000)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--allow-nonconverged", action="store_true")
    s.add_argument("--out", dest="out_dir", help="output directory")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", parents=[common], help="lifetime versus voltage table")
    s.add_argument("--params")
    s.add_argument("--from", dest="v_from", type=float, default=1.0)
    s.add_argument("--to", dest="v_to", type=float, default=5.0)
    s.add_argument("--step", type=float, default=0.5)
    s.add_argument("--duration", type=float, default=calibration.SWEEP_DURATION)
    s.add_argument("--dt", type=float, default=DEFAULT_DT)
    s.add_argument("--out", help="table CSV path")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("run-pattern", parents=[common], help="compile and run a .tpat pattern")
    s.add_argument("--pattern", required=True)
    s.add_argument("--backend", choices=["sim", "loopback"], default="sim")
    s.add_argument("--params")
    s.add_argument("--controller", help="ControllerConfig JSON")
    s.add_argument("--duration", type=float, help="run at least this long (s)")
    s.add_argument("--noise", type=float, default=0.0, help="sensor noise sigma (K)")
    s.add_argument("--strict", action="store_true")
    s.add_argument("--out", dest="out_dir", help="output directory")
    s.set_defaults(func=cmd_run_pattern)
    return p


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read --config {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ConfigError("--config must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown keys in --config: {sorted(unknown)}")
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
