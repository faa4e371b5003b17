"""Scenario and analysis configuration files (TOML) and named presets.

A configuration has the tables ``scenario``, ``spectrum`` (array
``emission`` plus optional ``filter``), ``detectors``, ``analysis`` and
``calibration``. ``scenario.nbar_per_coherence_time`` may replace
``scenario.mean_detected_rate_hz``.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .simsource import DetectorArrayModel, ScenarioConfig, rate_for_nbar
from .spectral import SpectralModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PRESETS = ("narrowband-paper", "broadband-paper")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("photonstat").joinpath("presets", f"{name}.toml").read_text()


def load_config(source: str | Path) -> dict:
    """Parse a preset name, a TOML file or a run manifest (JSON with ``config``)."""
    s = str(source)
    if s in PRESETS:
        return tomllib.loads(preset_text(s))
    path = Path(s)
    if not path.is_file():
        raise ConfigError(f"configuration {s!r} is neither a preset nor a file")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if "config" not in doc:
            raise ConfigError(f"{path}: JSON configuration must be a run manifest with a 'config' key")
        return copy.deepcopy(doc["config"])
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_path(cfg: dict, dotted: str, value: Any) -> dict:
    """Return a copy of ``cfg`` with ``a.b.0.c`` set to ``value``."""
    out = copy.deepcopy(cfg)
    keys = dotted.split(".")
    node = out
    for i, k in enumerate(keys[:-1]):
        try:
            node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
        except (IndexError, ValueError):
            raise ConfigError(f"key {'.'.join(keys[:i + 1])!r} does not exist") from None
    last = keys[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (IndexError, ValueError):
            raise ConfigError(f"key {dotted!r} does not exist") from None
    else:
        node[last] = value
    return out


def get_path(cfg: Mapping, dotted: str) -> Any:
    node = cfg
    for k in dotted.split("."):
        try:
            node = node[int(k)] if isinstance(node, list) else node[k]
        except (KeyError, IndexError, ValueError):
            raise ConfigError(f"key {dotted!r} does not exist") from None
    return node


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``key=value`` strings (values parsed as TOML literals)."""
    for a in assignments or ():
        if "=" not in a:
            raise ConfigError(f"override {a!r} is not of the form key=value")
        k, v = a.split("=", 1)
        cfg = set_path(cfg, k.strip(), _parse_value(v.strip()))
    return cfg


def _section(cfg: Mapping, name: str) -> Mapping:
    sec = cfg.get(name)
    if not isinstance(sec, Mapping):
        raise ConfigError(f"configuration lacks table [{name}]")
    return sec


def spectrum_from_config(cfg: Mapping) -> SpectralModel | None:
    spec = cfg.get("spectrum")
    if spec is None:
        return None
    try:
        return SpectralModel.from_dict({"emission": spec.get("emission", []), "filter": spec.get("filter")})
    except ConfigError as exc:
        raise ConfigError(f"[spectrum]: {exc}") from None


def detectors_from_config(cfg: Mapping) -> DetectorArrayModel:
    try:
        return DetectorArrayModel.from_dict(_section(cfg, "detectors"))
    except ConfigError as exc:
        raise ConfigError(f"[detectors]: {exc}") from None


def scenario_from_config(cfg: Mapping) -> ScenarioConfig:
    sc = dict(_section(cfg, "scenario"))
    spectrum = spectrum_from_config(cfg)
    nbar = sc.pop("nbar_per_coherence_time", None)
    if nbar is not None:
        if "mean_detected_rate_hz" in sc:
            raise ConfigError("[scenario]: give either nbar_per_coherence_time or mean_detected_rate_hz")
        if spectrum is None:
            raise ConfigError("[scenario]: nbar_per_coherence_time needs a [spectrum]")
        sc["mean_detected_rate_hz"] = rate_for_nbar(spectrum, float(nbar))
    allowed = {f.name for f in fields(ScenarioConfig)} - {"spectrum", "detectors"}
    unknown = set(sc) - allowed
    if unknown:
        raise ConfigError(f"[scenario]: unknown keys {sorted(unknown)}")
    if "mean_detected_rate_hz" not in sc or "duration_s" not in sc:
        raise ConfigError("[scenario]: mean_detected_rate_hz and duration_s are required")
    if sc.get("source", "thermal") == "coherent":
        spectrum = None
    try:
        return ScenarioConfig(spectrum=spectrum, detectors=detectors_from_config(cfg), **sc)
    except ConfigError as exc:
        raise ConfigError(f"[scenario]: {exc}") from None


@dataclass(frozen=True)
class AnalysisConfig:
    bin_ps: float = 648.0
    tau_max_ps: float = 200e3
    window_ps: float = 648.0
    family: str = "free-gaussian"
    fit_tau_window_ps: float | None = None
    n_max: int = 3
    estimator: str = "ml"
    loss_corrected: bool = False

    @classmethod
    def from_config(cls, cfg: Mapping) -> "AnalysisConfig":
        sec = dict(cfg.get("analysis", {}))
        allowed = {f.name for f in fields(cls)}
        unknown = set(sec) - allowed
        if unknown:
            raise ConfigError(f"[analysis]: unknown keys {sorted(unknown)}")
        return cls(**sec)


@dataclass(frozen=True)
class CalibrationConfig:
    period_ps: float = 12500.0
    counts_per_channel: int = 1_000_000

    @classmethod
    def from_config(cls, cfg: Mapping) -> "CalibrationConfig":
        sec = dict(cfg.get("calibration", {}))
        unknown = set(sec) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"[calibration]: unknown keys {sorted(unknown)}")
        return cls(**sec)
