"""
INI-style scenario, plant and calibration-target files, plus ``key=value`` overrides.

Grammar (see README): ``[scenario]``, ``[controller]``, ``[plant]`` and any
number of ``[event:<label>]`` sections, each holding ``key = value`` lines.
Time-valued keys accept s/ms/us suffixes.
"""
import configparser
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .calibration import CalibrationResult, CalibrationTargets, SearchSpace
from .core import ConfigError, ControllerParams, build_params, format_number, parse_time, validate
from .plant import PlantParams
from .scenario import Scenario, get_case

TIME_KEYS = {"t_sample", "t_end", "pre_hold", "dt", "tau_f", "tau_d", "t_start", "duration",
             "settling_time", "rise_time"}
INT_KEYS = {"n", "j", "seed", "grid_points", "max_iter"}
BOOL_KEYS = {"strict_eq7"}
STRING_KEYS = {"mode", "name", "kind", "case"}
RANGE_KEYS = {"kp", "ki", "tau_f"}

CONTROLLER_KEYS = set(ControllerParams.model_fields)
PLANT_KEYS = set(PlantParams.model_fields)
SCENARIO_KEYS = {"name", "t_end", "initial_ref", "pre_hold", "band_pct", "seed"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, raw: str) -> Any:
    """Converts one raw value by key; numbers that pydantic will check stay loosely typed."""
    raw = raw.strip()
    if key in TIME_KEYS:
        try:
            return parse_time(raw)
        except ValueError as e:
            raise ConfigError([f"{key}: {e}"]) from None
    if key in BOOL_KEYS:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError([f"{key}: expected true/false, got '{raw}'"])
    if key in STRING_KEYS or key in INT_KEYS:
        return raw
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_overrides(items: Iterable[str]) -> Dict[str, Dict[str, Any]]:
    """
    Routes ``key=value`` overrides to the controller, plant or scenario.

    A key may carry an explicit prefix (``plant.scr=5``); otherwise the field
    name decides. Unknown keys are collected and raised together.

    Returns:
        Dict[str, Dict[str, Any]]: {"controller": {...}, "plant": {...}, "scenario": {...}}
    """
    routed: Dict[str, Dict[str, Any]] = {"controller": {}, "plant": {}, "scenario": {}}
    problems: List[str] = []
    for item in items:
        if "=" not in item:
            problems.append(f"override '{item}' is not key=value")
            continue
        key, raw = (part.strip() for part in item.split("=", 1))
        target, _, field = key.rpartition(".")
        if not target:
            if field in CONTROLLER_KEYS:
                target = "controller"
            elif field in PLANT_KEYS:
                target = "plant"
            elif field in SCENARIO_KEYS:
                target = "scenario"
        allowed = {"controller": CONTROLLER_KEYS, "plant": PLANT_KEYS, "scenario": SCENARIO_KEYS}.get(target)
        if allowed is None or field not in allowed:
            problems.append(f"unknown override key '{key}'")
            continue
        try:
            routed[target][field] = coerce(field, raw)
        except ConfigError as e:
            problems.extend(e.violations)
    if problems:
        raise ConfigError(problems)
    return routed


def apply_overrides(s: Scenario, overrides: Dict[str, Dict[str, Any]]) -> Scenario:
    """Applies routed overrides; controller fields are checked with core.validate first."""
    if overrides.get("controller"):
        merged = {**s.controller.model_dump(), **overrides["controller"]}
        violations = validate(merged)
        if violations:
            raise ConfigError(violations)
    return s.with_overrides(controller=overrides.get("controller"), plant=overrides.get("plant"),
                            **overrides.get("scenario", {}))


def _read(path: str) -> configparser.ConfigParser:
    if not os.path.isfile(path):
        raise ConfigError([f"config file not found: {path}"])
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError([f"{path}: {e}"]) from None
    return parser


def _section(parser: configparser.ConfigParser, name: str) -> Dict[str, Any]:
    if not parser.has_section(name):
        return {}
    return {key: coerce(key, raw) for key, raw in parser.items(name)}


def load_scenario_file(path: str) -> Scenario:
    """
    Builds a Scenario from a config file.

    ``[scenario] case = <name>`` starts from a built-in case; the other
    sections then override it. Event sections, when present, replace the
    case's events.
    """
    parser = _read(path)
    scenario_fields = _section(parser, "scenario")
    base_case = scenario_fields.pop("case", None)
    base = get_case(base_case) if base_case else Scenario()

    data = base.model_dump()
    data.update(scenario_fields)
    data["controller"].update(_section(parser, "controller"))
    data["plant"].update(_section(parser, "plant"))
    events = [_section(parser, name) for name in parser.sections() if name.startswith("event")]
    if events:
        data["events"] = events
    if "name" not in scenario_fields:
        data["name"] = base_case or os.path.splitext(os.path.basename(path))[0]

    violations = validate(data["controller"])
    if violations:
        raise ConfigError(violations)
    logging.info(f"Loaded scenario '{data['name']}' from {path}")
    return build_params(Scenario, data)


def load_plant_file(path: str) -> Dict[str, Any]:
    """The ``[plant]`` section of a params fragment, e.g. one written by calibrate."""
    fields = _section(_read(path), "plant")
    unknown = sorted(set(fields) - PLANT_KEYS)
    if unknown:
        raise ConfigError([f"unknown plant key '{key}'" for key in unknown])
    build_params(PlantParams, fields)
    return fields


def _range(key: str, raw: Any) -> Tuple[float, float]:
    parts = [p for p in str(raw).replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ConfigError([f"{key}: expected 'low, high'"])
    if key == "tau_f":
        return parse_time(parts[0]), parse_time(parts[1])
    return float(parts[0]), float(parts[1])


def load_targets(path: str) -> Tuple[CalibrationTargets, SearchSpace]:
    """Reads ``[targets]`` and an optional ``[search]`` section."""
    parser = _read(path)
    if not parser.has_section("targets"):
        raise ConfigError([f"{path}: missing [targets] section"])
    targets = build_params(CalibrationTargets, _section(parser, "targets"))
    search: Dict[str, Any] = {}
    if parser.has_section("search"):
        for key, raw in parser.items("search"):
            search[key] = _range(key, raw) if key in RANGE_KEYS else coerce(key, raw)
    return targets, build_params(SearchSpace, search)


def write_plant_fragment(result: CalibrationResult, path: str, source: Optional[str] = None) -> None:
    """Writes the fitted plant as a ``[plant]`` fragment with the residuals as comments."""
    pp = result.params
    parser = configparser.ConfigParser()
    parser["plant"] = {key: format_number(getattr(pp, key))
                       for key in ("kp", "ki", "tau_f", "tau_d", "k_grid", "dt", "i_limit")}
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# Plant parameters written by `spaace-sim calibrate`\n")
        if source:
            f.write(f"# targets: {source}\n")
        residuals = " ".join(f"{k}={v:+.4f}" for k, v in result.residuals.items())
        f.write(f"# normalized residuals: {residuals}\n")
        parser.write(f)
    logging.info(f"Wrote calibrated plant parameters to {path}")
