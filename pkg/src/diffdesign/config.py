"""Run configuration: JSON schema, defaults, and content hashing.

A single JSON document drives the whole pipeline. Validation reports the
offending JSON path; hashing covers every field that influences numerics so
cached tensors are invalidated by any meaningful change. The tensor hash is
the subset of fields the elementary FIMs depend on (geometry, physics,
basis, noise, measurement instants); optimizer tolerances only enter the
full config hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .errors import ConfigError
from .mesh import DEFAULT_INCLUSION_CONTROL, GeometrySpec, RobinSpan

_BOX = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_POINTS = {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2}, "minItems": 3}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "case": {"type": "string"},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "holdall": _BOX,
                "inclusion_polygon": _POINTS,
                "spline_control": _POINTS,
                "spline_samples": {"type": "integer", "minimum": 8},
                "sensors": {"type": "array", "items": _BOX},
                "dirichlet_side": {"enum": ["top", "bottom", "left", "right", "all"]},
                "robin_spans": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["side", "lo", "hi", "beta"],
                        "properties": {
                            "side": {"enum": ["top", "bottom", "left", "right"]},
                            "lo": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                            "hi": {"type": "number", "minimum": 0.0, "maximum": 1.0},
                            "beta": {"type": "number", "minimum": 0.0},
                        },
                    },
                },
                "h": {"type": "number", "exclusiveMinimum": 0.0},
                "theta_min": {"type": "number", "exclusiveMinimum": 0.0, "maximum": 25.0},
                "node_cap": {"type": "integer", "minimum": 100},
            },
        },
        "physics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappa_bulk": {"type": "number", "exclusiveMinimum": 0.0},
                "kappa_inc": {"type": "number", "exclusiveMinimum": 0.0},
                "u_dirichlet": {"type": "number"},
                "horizon": {"type": "number", "exclusiveMinimum": 0.0},
                "n_steps": {"type": "integer", "minimum": 1},
            },
        },
        "basis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_basis": {"type": "integer", "minimum": 1},
                "slope": {"type": "number", "exclusiveMinimum": 0.0},
                "center_mode": {"enum": ["equidistant", "farthest-point"]},
                "lame_lambda": {"type": "number"},
                "lame_mu": {"type": "number", "exclusiveMinimum": 0.0},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha0": {"type": "number", "exclusiveMinimum": 0.0},
                "alpha1": {"type": "number", "exclusiveMinimum": 0.0},
            },
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "budget": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["space-time", "spatial"]},
                "optimize": {"type": "boolean"},
                "instants": {"type": ["array", "null"],
                             "items": {"type": "integer", "minimum": 0}},
                "tol_outer": {"type": "number", "exclusiveMinimum": 0.0},
                "max_outer": {"type": "integer", "minimum": 1},
                "master_tol": {"type": "number", "exclusiveMinimum": 0.0},
                "master_max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "write_fields": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer"},
    },
}


@dataclass
class PhysicsConfig:
    kappa_bulk: float = 0.1
    kappa_inc: float = 1e-3
    u_dirichlet: float = 1.0
    horizon: float = 10.0
    n_steps: int = 21


@dataclass
class BasisConfig:
    n_basis: int = 9
    slope: float = 100.0
    center_mode: str = "equidistant"
    lame_lambda: float = 0.01
    lame_mu: float = 0.495


@dataclass
class NoiseConfig:
    alpha0: float = 0.01
    alpha1: float = 1.0


@dataclass
class DesignConfig:
    budget: int = 10
    mode: str = "space-time"
    optimize: bool = True
    instants: list | None = None
    tol_outer: float = 1e-3
    max_outer: int = 200
    master_tol: float = 1e-4
    master_max_iter: int = 2000


@dataclass
class Config:
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    case: str = "run"
    write_fields: bool = True
    seed: int = 0

    def instants(self):
        if self.design.instants is not None:
            return list(self.design.instants)
        return list(range(self.physics.n_steps + 1))


def _geometry_from_dict(raw):
    spec = GeometrySpec()
    if "holdall" in raw:
        spec.holdall = tuple(float(x) for x in raw["holdall"])
    if "inclusion_polygon" in raw:
        spec.inclusion_polygon = np.asarray(raw["inclusion_polygon"], dtype=float)
        spec.spline_control = None
    elif "spline_control" in raw:
        spec.spline_control = np.asarray(raw["spline_control"], dtype=float)
    else:
        spec.spline_control = DEFAULT_INCLUSION_CONTROL.copy()
    spec.spline_samples = int(raw.get("spline_samples", spec.spline_samples))
    if "sensors" in raw:
        spec.sensors = [tuple(float(x) for x in box) for box in raw["sensors"]]
    spec.dirichlet_side = raw.get("dirichlet_side", spec.dirichlet_side)
    spec.robin_spans = [RobinSpan(side=r["side"], lo=float(r["lo"]),
                                  hi=float(r["hi"]), beta=float(r["beta"]))
                        for r in raw.get("robin_spans", [])]
    spec.h = float(raw.get("h", spec.h))
    spec.theta_min = float(raw.get("theta_min", spec.theta_min))
    spec.node_cap = int(raw.get("node_cap", spec.node_cap))
    return spec


def _fill(dc, raw):
    for key, value in raw.items():
        setattr(dc, key, value)
    return dc


def load_config(source) -> Config:
    """Build a validated Config from a path, file object, or dict.

    Schema violations raise ConfigError carrying the JSON path of the
    offending element.
    """
    if isinstance(source, dict):
        raw = source
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON: {err}") from err
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from err

    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        first = errors[0]
        raise ConfigError(f"{first.json_path}: {first.message}")

    cfg = Config()
    cfg.geometry = _geometry_from_dict(raw.get("geometry", {}))
    _fill(cfg.physics, raw.get("physics", {}))
    _fill(cfg.basis, raw.get("basis", {}))
    _fill(cfg.noise, raw.get("noise", {}))
    _fill(cfg.design, raw.get("design", {}))
    cfg.case = raw.get("case", cfg.case)
    cfg.write_fields = raw.get("output", {}).get("write_fields", cfg.write_fields)
    cfg.seed = raw.get("seed", cfg.seed)

    try:
        cfg.geometry.validate()
    except ValueError as err:
        raise ConfigError(f"$.geometry: {err}") from err
    instants = cfg.instants()
    if instants and (min(instants) < 0 or max(instants) > cfg.physics.n_steps):
        raise ConfigError("$.design.instants: instants outside the time grid")
    n_weights = len(cfg.geometry.sensors) * len(instants)
    if cfg.design.mode == "space-time" and cfg.design.budget >= max(n_weights, 1):
        raise ConfigError("$.design.budget: must be smaller than n_obs * n_time")
    if cfg.design.mode == "spatial" and cfg.design.budget >= max(len(cfg.geometry.sensors), 1):
        raise ConfigError("$.design.budget: must be smaller than n_obs in spatial mode")
    return cfg


def canonical_dict(cfg: Config):
    """Normalized, defaults-filled dict of every numerics-relevant field."""
    geo = cfg.geometry
    poly = geo.inclusion_polygon
    return {
        "geometry": {
            "holdall": list(geo.holdall),
            "inclusion_polygon": None if poly is None else np.asarray(poly).tolist(),
            "spline_control": None if geo.spline_control is None
                              else np.asarray(geo.spline_control).tolist(),
            "spline_samples": geo.spline_samples,
            "sensors": [list(b) for b in geo.sensors],
            "dirichlet_side": geo.dirichlet_side,
            "robin_spans": [[r.side, r.lo, r.hi, r.beta] for r in geo.robin_spans],
            "h": geo.h,
            "theta_min": geo.theta_min,
        },
        "physics": vars(cfg.physics).copy(),
        "basis": vars(cfg.basis).copy(),
        "noise": vars(cfg.noise).copy(),
        "design": vars(cfg.design).copy(),
        "instants": cfg.instants(),
    }


def _sha(payload):
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def config_hash(cfg: Config) -> str:
    return _sha(canonical_dict(cfg))


def tensor_hash(cfg: Config) -> str:
    """Hash of the fields the elementary FIM tensor depends on."""
    full = canonical_dict(cfg)
    subset = {k: full[k] for k in ("geometry", "physics", "basis", "noise", "instants")}
    return _sha(subset)


def comparison_case_dicts():
    """The five benchmark configurations of the 2D experiment: optimized vs
    uniform weights under three Robin boundary layouts."""
    def base(case, robin, optimize):
        return {
            "case": case,
            "geometry": {"robin_spans": robin},
            "design": {"optimize": optimize},
            "output": {"write_fields": False},
        }

    lower_left = [{"side": "bottom", "lo": 0.0, "hi": 0.5, "beta": 10.0}]
    lower_right = [{"side": "bottom", "lo": 0.5, "hi": 1.0, "beta": 10.0}]
    return {
        "case1": base("case1", lower_left, True),
        "case2": base("case2", lower_right, True),
        "case3": base("case3", lower_left, False),
        "case4": base("case4", [], True),
        "case5": base("case5", [], False),
    }
