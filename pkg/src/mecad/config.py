"""JSON run configuration: parsing, validation and defaults."""

from __future__ import annotations

import json
from importlib.resources import files
from pathlib import Path
from typing import Any

from .orchestration import AppKind, Capacity, ForecastConfig, LatencyConfig
from .perf import DEFAULT_PROFILES, BackendProfile
from .policy import Policy, PolicySyntaxError, parse_policies
from .scenario import AnomalyInjection, ScenarioModel
from .sim import DEFAULT_THRESHOLDS, SimConfig


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


_TOP = {"seed", "rans", "scenario", "injections", "profiles", "pipeline", "latencies", "forecast",
        "vim", "policies", "thresholds", "model_releases", "nad", "orchestration"}
_SCENARIO = {"saturation", "midpoint", "floor_check", "duration", "time_unit", "sample_period",
             "constant_rate"}
_PIPELINE = {"offset", "t_limit", "individual_cutoff", "sample_windows"}
_FORECAST = {"enabled", "safety", "window"}
_VIM = {"cpus", "ram_gb", "gpu_slots"}
_NAD = {"k", "horizon"}
_ORCH = {"augment_in_place", "default_cooldown"}


def data_path(name: str) -> Path:
    """Path of a file shipped in the package's ``data`` directory."""
    return Path(str(files("mecad").joinpath("data").joinpath(name)))


def _block(doc: dict, key: str, allowed: set[str]) -> dict:
    block = doc.get(key, {})
    if not isinstance(block, dict):
        raise ConfigError(f"'{key}' must be an object")
    if extra := set(block) - allowed:
        raise ConfigError(f"unknown keys in '{key}': {sorted(extra)}")
    return block


def _profile(value: Any, kind: str) -> BackendProfile:
    if isinstance(value, str):
        if value not in DEFAULT_PROFILES:
            raise ConfigError(f"profiles.{kind}: unknown profile {value!r} (known: {sorted(DEFAULT_PROFILES)})")
        return DEFAULT_PROFILES[value]
    try:
        return BackendProfile.from_dict(value)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"profiles.{kind}: {exc}") from None


def load_policies(spec: Any, base: Path | None) -> list[Policy]:
    """Policies from ``{"file": path}`` or ``{"inline": text}``.

    Relative files resolve against ``base`` first, then the shipped data.
    """
    if spec is None:
        return []
    if not isinstance(spec, dict) or len(spec) != 1 or not set(spec) <= {"file", "inline"}:
        raise ConfigError("'policies' must be {\"file\": path} or {\"inline\": text}")
    if "inline" in spec:
        text, where = spec["inline"], "inline policies"
    else:
        path = Path(spec["file"])
        candidates = [path] if path.is_absolute() else [(base or Path.cwd()) / path, data_path(path.name)]
        found = next((p for p in candidates if p.is_file()), None)
        if found is None:
            raise ConfigError(f"policy file {spec['file']!r} not found")
        text, where = found.read_text(), str(found)
    try:
        return parse_policies(text)
    except PolicySyntaxError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def build_config(doc: dict, base: Path | None = None) -> SimConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    if extra := set(doc) - _TOP:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    try:
        injections = tuple(AnomalyInjection(i["ran"], float(i["start"]), float(i["end"]),
                                            float(i["fraction"])) for i in doc.get("injections", []))
        scenario = ScenarioModel(**_block(doc, "scenario", _SCENARIO), injections=injections)
        pipe = _block(doc, "pipeline", _PIPELINE)
        latencies = LatencyConfig(**doc.get("latencies", {}))
        fc = _block(doc, "forecast", _FORECAST)
        nad = _block(doc, "nad", _NAD)
        orch = _block(doc, "orchestration", _ORCH)
        rans = tuple(doc.get("rans", ["ran-1"]))
        unknown_rans = {i.ran_id for i in injections} - set(rans)
        if unknown_rans:
            raise ConfigError(f"injections reference unknown RANs {sorted(unknown_rans)}")
        profiles = {AppKind.ASD_CPU: DEFAULT_PROFILES["cpu-tf"], AppKind.ASD_GPU: DEFAULT_PROFILES["gpu-caffe2"]}
        for kind, value in doc.get("profiles", {}).items():
            if kind not in ("ASD_CPU", "ASD_GPU"):
                raise ConfigError(f"profiles: unknown detector kind {kind!r}")
            profiles[AppKind(kind)] = _profile(value, kind)
        thresholds = dict(DEFAULT_THRESHOLDS)
        thresholds.update(doc.get("thresholds", {}))
        return SimConfig(
            scenario=scenario, rans=rans, profiles=profiles, latencies=latencies,
            policies=load_policies(doc.get("policies"), base), thresholds=thresholds,
            offset=int(pipe.get("offset", 1)), t_limit=float(pipe.get("t_limit", 5.0)),
            individual_cutoff=float(pipe.get("individual_cutoff", 1e4)),
            sample_windows=int(pipe.get("sample_windows", 64)),
            capacity=Capacity(**_block(doc, "vim", _VIM)),
            forecast=ForecastConfig(**fc),
            model_releases=tuple(float(t) for t in doc.get("model_releases", [])),
            seed=int(doc.get("seed", 0)),
            augment_in_place=bool(orch.get("augment_in_place", False)),
            default_cooldown=orch.get("default_cooldown"),
            nad_k=int(nad.get("k", 3)), nad_horizon=float(nad.get("horizon", 10.0)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return build_config(doc, path.parent)
