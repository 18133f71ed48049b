"""Flat dotted-key TOML configs: parsing with validation, canonical serialization."""

from __future__ import annotations

import dataclasses
import hashlib
import math
import sys

import numpy as np

from .errors import ConfigError, DomainError
from .experiments import ARM_SETS, KINDS, POLICIES, ExperimentConfig, packing_epsilon

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# dotted key -> (field name, expected type)
KEYS = {
    "experiment.kind": ("kind", str),
    "experiment.horizon": ("horizon", int),
    "experiment.replications": ("replications", int),
    "experiment.seed": ("seed", int),
    "experiment.delta": ("delta", float),
    "experiment.policy": ("policy", str),
    "instance.dim": ("dim", int),
    "instance.theta_star": ("theta_star", "vector"),
    "instance.s_bound": ("s_bound", float),
    "instance.arm_set": ("arm_set", str),
    "instance.resolution": ("resolution", int),
    "instance.arms": ("arms", "matrix"),
    "instance.norms": ("norms", "vector"),
    "instance.angle_deg": ("angle_deg", float),
    "regularization.floor": ("lambda_floor", float),
    "policy.epsilon": ("policy_epsilon", float),
    "policy.kappa": ("policy_kappa", float),
    "scaling.baseline": ("baseline", bool),
    "transitory.checkpoint": ("checkpoint", int),
    "packing.epsilon": ("packing_epsilon", float),
    "lemmas.cases": ("lemma_cases", int),
}
FIELD_TO_KEY = {f: k for k, (f, _) in KEYS.items()}
REQUIRED = ("experiment.kind",)


def _flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, kind, value):
    def bad(what):
        return ConfigError(key, f"expected {what}, got {value!r}")

    if kind is bool:
        if not isinstance(value, bool):
            raise bad("a boolean")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        if not math.isfinite(value):
            raise bad("a finite number")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == "vector":
        if not isinstance(value, list) or not value:
            raise bad("a non-empty list of numbers")
        return tuple(_coerce(key, float, v) for v in value)
    if kind == "matrix":
        if not isinstance(value, list) or not value:
            raise bad("a non-empty list of vectors")
        return tuple(_coerce(key, "vector", row) for row in value)
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config document; unknown keys are rejected."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"malformed document: {exc}") from None
    flat = _flatten(doc)
    for key in flat:
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
    for key in REQUIRED:
        if key not in flat:
            raise ConfigError(key, "missing required key")
    values = {KEYS[k][0]: _coerce(k, KEYS[k][1], v) for k, v in flat.items()}
    _validate(values)
    theta = values.get("theta_star")
    if values["kind"] not in ("scaling", "lowerbound", "verify-lemmas") and "s_bound" not in values:
        norm = float(np.linalg.norm(theta)) if theta is not None else 1.0
        values["s_bound"] = max(1.0, norm)
    try:
        return ExperimentConfig(**values)
    except DomainError as exc:
        raise ConfigError("experiment", str(exc)) from None


def _validate(v: dict) -> None:
    if v["kind"] not in KINDS:
        raise ConfigError("experiment.kind", f"must be one of {', '.join(KINDS)}")
    if v.get("policy", "ofulog_r") not in POLICIES:
        raise ConfigError("experiment.policy", f"must be one of {', '.join(POLICIES)}")
    if v.get("arm_set", "ball") not in ARM_SETS:
        raise ConfigError("instance.arm_set", f"must be one of {', '.join(ARM_SETS)}")
    for key in ("horizon", "replications", "dim"):
        if key in v and v[key] < 1:
            raise ConfigError(FIELD_TO_KEY[key], "must be at least 1")
    if "seed" in v and v["seed"] < 0:
        raise ConfigError("experiment.seed", "must be non-negative")
    if "delta" in v and not 0 < v["delta"] <= 1:
        raise ConfigError("experiment.delta", "must lie in (0, 1]")
    if "lambda_floor" in v and not v["lambda_floor"] > 0:
        raise ConfigError("regularization.floor", "must be positive")
    if "resolution" in v and v["resolution"] < 8:
        raise ConfigError("instance.resolution", "must be at least 8")
    if "lemma_cases" in v and v["lemma_cases"] < 1:
        raise ConfigError("lemmas.cases", "must be at least 1")
    d = v.get("dim", 2)
    theta = v.get("theta_star")
    if theta is not None and len(theta) != d:
        raise ConfigError("instance.theta_star", f"expected {d} coordinates")
    norm = float(np.linalg.norm(theta)) if theta is not None else 1.0
    if "s_bound" in v:
        if not v["s_bound"] > 0:
            raise ConfigError("instance.s_bound", "must be positive")
        if norm > v["s_bound"] * (1 + 1e-12) and v["kind"] != "lowerbound":
            raise ConfigError("instance.s_bound", f"smaller than |theta_star| = {norm:.6g}")
    if "arms" in v:
        for row in v["arms"]:
            if len(row) != d:
                raise ConfigError("instance.arms", f"every arm needs {d} coordinates")
            if np.linalg.norm(row) > 1 + 1e-12:
                raise ConfigError("instance.arms", "arms must have norm at most 1")
    if "norms" in v and any(n <= 0 for n in v["norms"]):
        raise ConfigError("instance.norms", "norms must be positive")
    if "policy_kappa" in v and v["policy_kappa"] < 4:
        raise ConfigError("policy.kappa", "must be at least 4")
    if "policy_epsilon" in v and not 0 <= v["policy_epsilon"] <= 1:
        raise ConfigError("policy.epsilon", "must lie in [0, 1]")
    if v["kind"] == "lowerbound":
        if d < 2:
            raise ConfigError("instance.dim", "the packing needs d >= 2")
        eps = v.get("packing_epsilon")
        if eps is not None:
            limit = norm / math.sqrt(d - 1)
            if not 0 < eps <= limit:
                raise ConfigError("packing.epsilon",
                                  f"must lie in (0, |theta_star|/sqrt(d-1)] = (0, {limit:.6g}]")
        elif packing_epsilon(norm, v.get("horizon", 1000)) > norm / math.sqrt(d - 1):
            raise ConfigError("experiment.horizon", "horizon too short for a valid packing radius")


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, tuple):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every set field as a dotted key, in a fixed order."""
    lines = []
    for key, (fname, _) in KEYS.items():
        value = getattr(cfg, fname)
        if value is None:
            continue
        lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return dataclasses.replace(cfg, seed=int(seed))
