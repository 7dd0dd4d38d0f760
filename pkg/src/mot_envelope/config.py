"""Run configuration: JSON schema, defaults and flag overrides."""

from __future__ import annotations

import copy
import json

import jsonschema

from .exceptions import ValidationError

_NUM = {"type": "number"}
_POINT = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

PAYOFF_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"type": {"const": "call_spread"}, "k1": _NUM, "k2": _NUM},
            "required": ["type", "k1", "k2"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "pwl"},
                "points": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}, "minItems": 1},
            },
            "required": ["type", "points"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "put_plus"},
                "g_points": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}, "minItems": 1},
            },
            "required": ["type", "g_points"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mot_envelope run configuration",
    "type": "object",
    "properties": {
        "atoms": {"type": "array", "items": _NUM, "minItems": 1},
        "payoff": PAYOFF_SCHEMA,
        "initial": _POINT,
        "points": {"type": "array", "items": _POINT},
        "m": {"type": "integer", "minimum": 2},
        "method": {"enum": ["hull", "obstacle", "both"]},
        "mc": {
            "type": "object",
            "properties": {
                "n_paths": {"type": "integer", "minimum": 100},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "master_seed": {"type": "integer", "minimum": 0},
                "max_steps": {"type": "integer", "minimum": 1},
                "n_jobs": {"type": "integer"},
                "policy": {"enum": ["optimal", "random"]},
                "policy_seed": {"type": "integer", "minimum": 0},
                "traces": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {
                "tol_contact": {"type": ["number", "null"], "minimum": 0},
                "tol_fp": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "max_sweeps": {"type": ["integer", "null"], "minimum": 1},
                "grid": {"type": "number", "minimum": 0},
                "solver_agreement": {"type": "number", "minimum": 0},
                "mc_bias": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["payoff"],
    "additionalProperties": False,
}

DEFAULTS = {
    "atoms": [-1.0, 0.0, 1.0],
    "m": 100,
    "method": "hull",
    "mc": {
        "n_paths": 10_000,
        "dt": 1e-4,
        "master_seed": 0,
        "max_steps": 2_000_000,
        "n_jobs": 1,
        "policy": "optimal",
        "policy_seed": 0,
        "traces": False,
    },
    "tolerances": {
        "tol_contact": None,
        "tol_fp": None,
        "max_sweeps": None,
        "grid": 2e-2,
        "solver_agreement": 5e-3,
        "mc_bias": 2e-3,
    },
    "output": {"dir": ".", "prefix": "run"},
}


def _annotate_defaults(schema: dict, defaults: dict) -> None:
    for key, value in defaults.items():
        prop = schema["properties"][key]
        if isinstance(value, dict):
            _annotate_defaults(prop, value)
        else:
            prop["default"] = value


_annotate_defaults(CONFIG_SCHEMA, DEFAULTS)


def validate(raw: dict) -> None:
    """Raise :class:`ValidationError` when ``raw`` violates the schema."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config {where}: {exc.message}") from exc


def resolve(raw: dict, overrides: dict | None = None) -> dict:
    """Validate, fill defaults and apply flag overrides.

    ``overrides`` uses the flag names ``m``, ``seed``, ``n_paths`` and
    ``method``; ``None`` entries are ignored.
    """
    validate(raw)
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = copy.deepcopy(value)
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "m" in ov:
        cfg["m"] = ov["m"]
    if "method" in ov:
        cfg["method"] = ov["method"]
    if "seed" in ov:
        cfg["mc"]["master_seed"] = ov["seed"]
    if "n_paths" in ov:
        cfg["mc"]["n_paths"] = ov["n_paths"]
    validate(cfg)
    n = len(cfg["atoms"])
    for key in ("initial",):
        if key in cfg and len(cfg[key]) != n:
            raise ValidationError(f"config {key}: expected {n} weights")
    for p in cfg.get("points", []):
        if len(p) != n:
            raise ValidationError(f"config points: expected {n} weights per point")
    return cfg


def load(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
