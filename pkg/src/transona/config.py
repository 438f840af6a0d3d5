"""Pipeline configuration (TOML) with default tracking."""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .afm import HIGH, LOW
from .detectors import DetectorParams
from .errors import ConfigError
from .events import EventSource
from .render import RenderStyle
from .spatial import AlignmentParams, VisitParams
from .tma import UNIT_MODES, WHOLE, TifConfig

REQUIRED = object()
OPTIONAL = object()

DEFAULTS = {
    "inputs": {"tutor": REQUIRED, "positions": REQUIRED, "observations": REQUIRED, "layout": REQUIRED},
    "output": {"dir": REQUIRED},
    "clock_offsets": {"tutor_log": 0, "observation": 0, "spatial": 0},
    "sessions": {"margin_s": 60.0},
    "detectors": {"idle_threshold_s": 120.0, "misuse_gap_s": 3.0, "misuse_run_len": 3,
                  "struggle_window": 8, "struggle_rate_cutoff": 0.3, "struggle_cooldown": 10},
    "spatial": {"cos_threshold": math.cos(math.pi / 4), "min_displacement_mm": 50.0,
                "max_range_mm": OPTIONAL, "radius_mm": 1000.0, "min_duration_s": 10.0,
                "teacher_tag": OPTIONAL},
    "tif": {"tutor_log": 5.0, "detector": 10.0, "observation": 15.0, "spatial": 20.0},
    "tma": {"binary": False},
    "afm": {"lambda_theta": 1.0, "lambda_delta": 1.0},
    "model": {"unit_mode": WHOLE, "positive_group": LOW, "coregister_ridge": 1e-6},
    "bootstrap": {"replicates": 1000, "seed": REQUIRED},
    "replay": {"code": "HINT_REQUEST", "k": 3},
    "render": {"width": 800, "height": 800, "edge_scale": 24.0, "node_scale": 40.0,
               "min_edge_fraction": 0.05, "color_a": "#d7301f", "color_b": "#2b8cbe",
               "font_size": 12},
    "runtime": {"threads": 1},
}


@dataclass
class PipelineConfig:
    values: dict
    base_dir: Path
    defaults_applied: list = field(default_factory=list)

    def get(self, path):
        section, key = path.split(".")
        return self.values[section].get(key)

    def input_path(self, key):
        p = Path(self.values["inputs"][key])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self):
        p = Path(self.values["output"]["dir"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def offsets(self):
        raw = self.values["clock_offsets"]
        return {EventSource.TUTOR_LOG: int(raw["tutor_log"]), EventSource.DETECTOR: int(raw["tutor_log"]),
                EventSource.OBSERVATION: int(raw["observation"]), EventSource.SPATIAL: int(raw["spatial"])}

    @property
    def detector_params(self):
        return DetectorParams(**self.values["detectors"])

    @property
    def alignment_params(self):
        s = self.values["spatial"]
        return AlignmentParams(s["cos_threshold"], s["min_displacement_mm"], s.get("max_range_mm"))

    @property
    def visit_params(self):
        s = self.values["spatial"]
        return VisitParams(s["radius_mm"], s["min_duration_s"])

    @property
    def tif(self):
        return TifConfig(**self.values["tif"])

    @property
    def style(self):
        return RenderStyle(**self.values["render"])

    def echo(self):
        """Every resolved value, for the run metadata."""
        return copy.deepcopy(self.values)


def _coerce(path, default, value):
    if default is REQUIRED or default is OPTIONAL:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}") from None
    return value


def config_from_dict(raw: dict, base_dir=".") -> PipelineConfig:
    values, applied = {}, []
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    for section, keys in DEFAULTS.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{section}: expected a table")
        extra = sorted(set(given) - set(keys))
        if extra:
            raise ConfigError(f"unknown key(s) {', '.join(section + '.' + k for k in extra)}")
        out = {}
        for key, default in keys.items():
            path = f"{section}.{key}"
            if key in given:
                out[key] = _coerce(path, default, given[key])
            elif default is REQUIRED:
                raise ConfigError(f"missing required config key {path}")
            elif default is OPTIONAL:
                out[key] = None
            else:
                out[key] = default
                applied.append(path)
        values[section] = out
    cfg = PipelineConfig(values, Path(base_dir), applied)
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig):
    v = cfg.values
    if v["model"]["unit_mode"] not in UNIT_MODES:
        raise ConfigError(f"model.unit_mode must be one of {', '.join(UNIT_MODES)}")
    if v["model"]["positive_group"] not in (LOW, HIGH):
        raise ConfigError("model.positive_group must be LOW or HIGH")
    if v["bootstrap"]["replicates"] < 1:
        raise ConfigError("bootstrap.replicates must be positive")
    if v["runtime"]["threads"] < 1:
        raise ConfigError("runtime.threads must be positive")
    for section, build in (("detectors", lambda: cfg.detector_params), ("spatial", lambda: cfg.alignment_params),
                           ("spatial", lambda: cfg.visit_params), ("tif", lambda: cfg.tif),
                           ("render", lambda: cfg.style)):
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    return config_from_dict(raw, path.parent)


def check_inputs(cfg: PipelineConfig):
    for key in ("tutor", "positions", "observations", "layout"):
        p = cfg.input_path(key)
        if not p.exists():
            raise ConfigError(f"inputs.{key}: file not found: {p}")
