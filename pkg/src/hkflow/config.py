"""JSON run configurations: schema, defaults and builders for the library objects.

A configuration is a single JSON object.  Unknown keys are rejected at every
level; physical parameters are checked against the module preconditions
before anything runs, so a bad file fails fast with a precise path.
"""

from __future__ import annotations

import copy
import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from .entropy import EntropyModel, make_arctangential, make_log_potential, make_power_law
from .expr import Expression, ExpressionError
from .fields import DensityField
from .grid import DomainKind, Grid


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

_DENSITY = {
    "oneOf": [
        {"type": "string", "enum": ["equilibrium"]},
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "expression": {"type": "string"},
                "csv": {"type": "string"},
                "normalize": {"type": ["number", "null"]},
            },
            "oneOf": [{"required": ["expression"]}, {"required": ["csv"]}],
        },
    ]
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["circle", "interval"]},
                "length": _POS,
                "n_cells": {"type": "integer", "minimum": 2},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["power_law", "log_potential", "arctangential"]},
                "parameters": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"alpha": _NUM, "V": {"type": "string"}},
                },
            },
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["spherical", "conic", "wasserstein", "fitness"]},
                "t_end": _POS,
                "dt_init": _POS,
                "snapshot_every": _POS,
                "cfl_safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "mass_recovery": {"type": "boolean"},
                "M0": _POS,
            },
        },
        "initial": _DENSITY,
        "endpoints": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho0", "rho1"],
            "properties": {"rho0": _DENSITY, "rho1": _DENSITY},
        },
        "transport": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kinds": {
                    "type": "array",
                    "items": {"enum": ["W2", "HK", "HKS"]},
                    "minItems": 1,
                    "uniqueItems": True,
                },
                "n_time": _POS_INT,
                "tol": _POS,
                "max_iters": _POS_INT,
                "dump_interpolation": {"type": "boolean"},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "suite": {
                    "enum": ["dissipation", "eep", "logsobolev", "talagrand", "ordering",
                             "maxprinciple", "comparison", "all"]
                },
                "family_size": _POS_INT,
                "pairs": _POS_INT,
                "refine": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["csv", "json"]},
                    "uniqueItems": True,
                },
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "domain": {"kind": "circle", "length": 1.0, "n_cells": 128},
    "model": {"name": "power_law", "parameters": {}},
    "flow": {"kind": "spherical", "t_end": 1.0, "dt_init": 1e-3, "snapshot_every": 0.01,
             "cfl_safety": 0.45, "mass_recovery": False, "M0": 1.0},
    "initial": {"expression": "1 + 0.5*cos(2*pi*x)", "normalize": 1.0},
    "transport": {"kinds": ["W2", "HKS", "HK"], "n_time": 32, "tol": 1e-6, "max_iters": 20000,
                  "dump_interpolation": False},
    "verify": {"suite": "all", "family_size": 20, "pairs": 10, "refine": True},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}

MODEL_DEFAULTS = {"power_law": {"alpha": 1.0}, "log_potential": {"V": "0"}, "arctangential": {}}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(doc: dict) -> dict:
    """Schema check, fill defaults, check physical preconditions."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {err.message}")
    cfg = _merge(DEFAULTS, doc)
    if "initial" in doc:
        # density specs are alternatives, never merged with the default
        cfg["initial"] = copy.deepcopy(doc["initial"])
    if "model" in doc and "parameters" not in doc["model"]:
        cfg["model"]["parameters"] = {}
    name = cfg["model"]["name"]
    params = _merge(MODEL_DEFAULTS[name], cfg["model"]["parameters"])
    allowed = set(MODEL_DEFAULTS[name])
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"model/parameters: {sorted(extra)} not accepted by {name}")
    cfg["model"]["parameters"] = params
    # build once so that bad values surface as config errors
    build_model(cfg)
    grid = build_grid(cfg)
    _check_density_spec(cfg["initial"], grid, "initial")
    if "endpoints" in cfg:
        for key in ("rho0", "rho1"):
            _check_density_spec(cfg["endpoints"][key], grid, f"endpoints/{key}")
    return cfg


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return validate(doc)


def build_grid(cfg: dict) -> Grid:
    d = cfg["domain"]
    try:
        return Grid(DomainKind(d["kind"]), d["n_cells"], d["length"])
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from None


def build_model(cfg: dict) -> EntropyModel:
    m = cfg["model"]
    name, params = m["name"], _merge(MODEL_DEFAULTS[m["name"]], m.get("parameters", {}))
    try:
        if name == "power_law":
            return make_power_law(float(params["alpha"]))
        if name == "log_potential":
            V = params.get("V", "0")
            return make_log_potential(None if V.strip() == "0" else Expression(V))
        return make_arctangential()
    except (ValueError, ExpressionError) as exc:
        raise ConfigError(f"model/parameters: {exc}") from None


def _check_density_spec(spec, grid, where):
    if spec == "equilibrium":
        return
    if "expression" in spec:
        try:
            Expression(spec["expression"])
        except ExpressionError as exc:
            raise ConfigError(f"{where}/expression: {exc}") from None
    norm = spec.get("normalize")
    if norm is not None and not norm > 0:
        raise ConfigError(f"{where}/normalize: must be positive")


def build_density(spec, grid: Grid, equilibrium=None, base_dir: Path | None = None) -> DensityField:
    if spec == "equilibrium":
        if equilibrium is None:
            raise ConfigError("'equilibrium' density needs a model")
        return equilibrium
    if "expression" in spec:
        values = Expression(spec["expression"])(grid.cell_centers) * np.ones(grid.n_cells)
    else:
        values = read_density_csv(Path(base_dir or ".") / spec["csv"], grid)
    norm = spec.get("normalize")
    if norm is not None:
        total = grid.h * values.sum()
        if not total > 0:
            raise ConfigError("density has zero mass, cannot normalize")
        values = values * (norm / total)
    try:
        return DensityField(grid, values)
    except ValueError as exc:
        raise ConfigError(f"density: {exc}") from None


def read_density_csv(path: Path, grid: Grid) -> np.ndarray:
    """Column ``u`` of a CSV with a header row (an ``x`` column is ignored)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read density {path}: {exc.strerror}") from None
    if not rows or "u" not in rows[0]:
        raise ConfigError(f"{path}: expected a header with a 'u' column")
    values = np.array([float(r["u"]) for r in rows])
    if values.size != grid.n_cells:
        raise ConfigError(f"{path}: {values.size} rows for {grid.n_cells} cells")
    return values
