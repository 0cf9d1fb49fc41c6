"""
Command-line entry point: ``spaace-sim run|compare|sweep|calibrate|serve``.

Exit status is 0 when every run, row and frame succeeded, 1 when a run or
row failed (or the server saw ERR frames), and 2 for invalid configuration.
"""
import argparse
import asyncio
import logging
import os
import sys
from typing import FrozenSet, List, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config import CALIBRATION_TARGETS_FILE, COSIM_HOST, COSIM_PORT, OUTPUT_DIR
from .artifacts import ensure_dir, format_table, plot_trace, row_records, write_rows_csv, write_text, write_trace_csv
from .calibration import CalibrationError, CalibrationResult, calibrate_report
from .config_file import apply_overrides, load_plant_file, load_scenario_file, load_targets, parse_overrides, \
    write_plant_fragment
from .core import ConfigError, ControllerParams, Mode, SpaaceError, build_params, parse_time
from .cosim import CosimServer
from .log_setup import configure_logging
from .scenario import SWEEP_AXES, ComparisonRow, Scenario, compare, evaluate, get_case, run, sweep

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

EMIT_CHOICES = ("csv", "svg", "table")


class RunConfig(BaseModel):
    """What to simulate and where the artifacts go."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    case: Optional[str] = None
    config_path: Optional[str] = None
    out_dir: str = OUTPUT_DIR
    emit: FrozenSet[str] = frozenset({"csv", "table"})
    overrides: List[str] = []
    plant_file: Optional[str] = None
    mode: Optional[Mode] = None

    @field_validator("emit")
    @classmethod
    def _check_emit(cls, value: FrozenSet[str]) -> FrozenSet[str]:
        unknown = sorted(value - set(EMIT_CHOICES))
        if unknown:
            raise ValueError(f"unknown emit flag(s): {', '.join(unknown)} (expected: {', '.join(EMIT_CHOICES)})")
        return value

    @model_validator(mode="after")
    def _check_source(self) -> "RunConfig":
        if (self.case is None) == (self.config_path is None):
            raise ValueError("give exactly one of a case name or a config file")
        return self

    def scenario(self) -> Scenario:
        """Resolves the case or file, then applies the plant file, the mode and the overrides in that order."""
        s = load_scenario_file(self.config_path) if self.config_path else get_case(self.case)
        if self.plant_file:
            s = s.with_overrides(plant=load_plant_file(self.plant_file))
        if self.mode is not None:
            s = s.with_mode(self.mode)
        if self.overrides:
            s = apply_overrides(s, parse_overrides(self.overrides))
        return s


def _looks_like_file(target: str) -> bool:
    return target.lower().endswith((".ini", ".cfg", ".conf")) or os.path.isfile(target)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    target = getattr(args, "target", None)
    config_path = getattr(args, "config", None)
    case = None
    if target is not None:
        if _looks_like_file(target) and config_path is None:
            config_path = target
        else:
            case = target
    data = {
        "case": case,
        "config_path": config_path,
        "out_dir": getattr(args, "out", None) or OUTPUT_DIR,
        "overrides": list(getattr(args, "set", None) or []),
        "plant_file": getattr(args, "plant_file", None),
        "mode": getattr(args, "mode", None),
    }
    if getattr(args, "emit", None) is not None:
        data["emit"] = frozenset(args.emit)
    return build_params(RunConfig, data)


def _report_config_error(e: ConfigError) -> int:
    for violation in e.violations:
        print(f"error: {violation}", file=sys.stderr)
    return EXIT_USAGE


def _emit_rows(rows: List[ComparisonRow], cfg: RunConfig, stem: str, title: str) -> int:
    table = format_table(row_records(rows), title=title)
    print(table)
    out = ensure_dir(cfg.out_dir)
    if "table" in cfg.emit:
        write_text(table, os.path.join(out, f"{stem}.txt"))
    if "csv" in cfg.emit:
        write_rows_csv(rows, os.path.join(out, f"{stem}.csv"))
    failed = [row for row in rows if not row.ok]
    if failed:
        print(f"{len(failed)} of {len(rows)} rows failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    """Simulates one scenario and writes trace.csv, trace.svg and metrics.txt as requested."""
    try:
        s = cfg.scenario()
        out = ensure_dir(cfg.out_dir)
        trace = run(s)
        if "csv" in cfg.emit:
            write_trace_csv(trace, os.path.join(out, "trace.csv"))
        if "svg" in cfg.emit:
            plot_trace(trace, os.path.join(out, "trace.svg"))
        try:
            row = ComparisonRow(s.name, s.controller.mode, evaluate(s, trace))
        except SpaaceError as e:
            row = ComparisonRow(s.name, s.controller.mode, error=str(e))
        table = format_table(row_records([row]))
        print(table)
        if "table" in cfg.emit:
            write_text(table, os.path.join(out, "metrics.txt"))
        return EXIT_OK if row.ok else EXIT_FAILED
    except ConfigError as e:
        return _report_config_error(e)
    except SpaaceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


def cmd_compare(cfg: RunConfig, modes: Optional[List[Mode]] = None, max_workers: Optional[int] = None) -> int:
    try:
        s = cfg.scenario()
        rows = compare(s, modes, max_workers=max_workers)
        return _emit_rows(rows, cfg, "compare", f"{s.name}: {len(rows)} runs")
    except ConfigError as e:
        return _report_config_error(e)
    except SpaaceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


def cmd_sweep(cfg: RunConfig, axis: str, values: List[float], modes: Optional[List[Mode]] = None,
              max_workers: Optional[int] = None) -> int:
    try:
        s = cfg.scenario()
        rows = sweep(s, axis, values, modes, max_workers=max_workers)
        return _emit_rows(rows, cfg, "sweep", f"{s.name}: sweep over {axis}")
    except ConfigError as e:
        return _report_config_error(e)
    except SpaaceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


def cmd_calibrate(targets_path: str = CALIBRATION_TARGETS_FILE, out_dir: str = OUTPUT_DIR) -> int:
    """Fits the plant to the targets file and writes ``plant_calibrated.ini`` into out_dir."""
    try:
        targets, space = load_targets(targets_path)
        out = ensure_dir(out_dir)
        result = calibrate_report(targets, space)
    except ConfigError as e:
        return _report_config_error(e)
    except CalibrationError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.best is not None:
            _print_calibration(e.best)
        return EXIT_FAILED
    except SpaaceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED

    _print_calibration(result)
    path = os.path.join(out, "plant_calibrated.ini")
    write_plant_fragment(result, path, source=targets_path)
    print(f"wrote {path}")
    return EXIT_OK


def _print_calibration(result: CalibrationResult) -> None:
    pp, m = result.params, result.metrics
    print(f"kp={pp.kp:.6g} ki={pp.ki:.6g} tau_f={pp.tau_f:.6g} tau_d={pp.tau_d:.6g}")
    if m is not None:
        settling = "-" if m.settling_ms is None else f"{m.settling_ms:.3f} ms"
        rise = "-" if m.rise_ms is None else f"{m.rise_ms:.3f} ms"
        print(f"overshoot={m.overshoot_pct:.2f}% settling={settling} rise={rise}")
    for key, value in result.residuals.items():
        print(f"residual {key:<14} {value:+.4f}")


def serve_params(args: argparse.Namespace) -> ControllerParams:
    """Controller params for the server: a case or config file if given, then --set overrides."""
    if getattr(args, "target", None) or getattr(args, "config", None):
        return build_run_config(args).scenario().controller
    routed = parse_overrides(args.set or [])
    if routed["plant"] or routed["scenario"]:
        keys = sorted(set(routed["plant"]) | set(routed["scenario"]))
        raise ConfigError([f"not a controller parameter: {key}" for key in keys])
    return ControllerParams().with_overrides(**routed["controller"])


def cmd_serve(params: ControllerParams, host: str = COSIM_HOST, port: int = COSIM_PORT) -> int:
    server = CosimServer(params, host, port)
    try:
        asyncio.run(server.serve_forever())
    except OSError as e:
        print(f"error: cannot listen on {host}:{port}: {e.strerror or e}", file=sys.stderr)
        return EXIT_FAILED
    except KeyboardInterrupt:
        logging.info("Co-simulation server stopped")
    return EXIT_OK if server.frame_errors == 0 else EXIT_FAILED


def _modes_arg(text: str) -> List[Mode]:
    try:
        return [Mode.parse(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _emit_arg(text: str) -> List[str]:
    flags = [part.strip().lower() for part in text.split(",") if part.strip()]
    unknown = [f for f in flags if f not in EMIT_CHOICES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown emit flag(s): {', '.join(unknown)}")
    return flags


def _values_arg(text: str) -> List[float]:
    try:
        return [parse_time(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _add_scenario_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("target", nargs=None if required else "?",
                   help="built-in case (case1_1 ... case3_2) or a scenario .ini file")
    p.add_argument("--config", help="scenario .ini file (instead of a case name)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a controller, plant or scenario field; repeatable")
    p.add_argument("--plant-file", dest="plant_file", help="[plant] fragment, e.g. written by calibrate")


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help=f"output directory (default: {OUTPUT_DIR})")
    p.add_argument("--emit", type=_emit_arg, help="comma-separated subset of csv,svg,table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spaace-sim", description="Set-point modulation simulator")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-format", dest="log_format", choices=["text", "json"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write its trace")
    _add_scenario_args(p, required=False)
    _add_output_args(p)
    p.add_argument("--mode", type=Mode.parse, help="base, spaace or spaace_m")
    p.set_defaults(func=_do_run)

    p = sub.add_parser("compare", help="run one scenario under several modes")
    _add_scenario_args(p)
    p.add_argument("modes", nargs="?", type=_modes_arg, help="comma-separated modes (default: all)")
    _add_output_args(p)
    p.add_argument("--workers", type=int, help="parallel runs")
    p.set_defaults(func=_do_compare)

    p = sub.add_parser("sweep", help="compare over a range of one parameter")
    _add_scenario_args(p)
    p.add_argument("axis", choices=SWEEP_AXES)
    p.add_argument("values", type=_values_arg, help="comma-separated values; times accept ms/us suffixes")
    p.add_argument("--modes", type=_modes_arg, help="comma-separated modes (default: all)")
    _add_output_args(p)
    p.add_argument("--workers", type=int, help="parallel runs")
    p.set_defaults(func=_do_sweep)

    p = sub.add_parser("calibrate", help="fit the plant to base-case step targets")
    p.add_argument("targets", nargs="?", default=CALIBRATION_TARGETS_FILE, help="targets .ini file")
    p.add_argument("--out", help=f"output directory (default: {OUTPUT_DIR})")
    p.set_defaults(func=_do_calibrate)

    p = sub.add_parser("serve", help="TCP controller-in-the-loop server")
    _add_scenario_args(p, required=False)
    p.add_argument("--host", default=COSIM_HOST)
    p.add_argument("--port", type=int, default=COSIM_PORT)
    p.set_defaults(func=_do_serve)
    return parser


def _with_config(args: argparse.Namespace, action) -> int:
    try:
        cfg = build_run_config(args)
    except ConfigError as e:
        return _report_config_error(e)
    return action(cfg)


def _do_run(args: argparse.Namespace) -> int:
    return _with_config(args, cmd_run)


def _do_compare(args: argparse.Namespace) -> int:
    return _with_config(args, lambda cfg: cmd_compare(cfg, args.modes, args.workers))


def _do_sweep(args: argparse.Namespace) -> int:
    return _with_config(args, lambda cfg: cmd_sweep(cfg, args.axis, args.values, args.modes, args.workers))


def _do_calibrate(args: argparse.Namespace) -> int:
    return cmd_calibrate(args.targets, args.out or OUTPUT_DIR)


def _do_serve(args: argparse.Namespace) -> int:
    try:
        params = serve_params(args)
    except ConfigError as e:
        return _report_config_error(e)
    return cmd_serve(params, args.host, args.port)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    logging.debug(f"Command line: {args}")
    return args.func(args)

