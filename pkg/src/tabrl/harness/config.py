"""Experiment configuration: flat YAML mappings with dotted keys.

Example::

    kind: offline
    seeds: [0, 1, 2]
    instance.S: 6
    algo.N: 10000
    sweep.param: algo.N
    sweep.values: [100, 1000]

Every kind has a table of defaults; a resolved config is the defaults
overlaid with the user's keys, and unknown keys are rejected by name.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError

KINDS = ("plan", "gen-model", "online", "offline", "robust", "policy-opt", "rlhf")

_DISCOUNTED = {"instance.S": 5, "instance.A": 3, "instance.gamma": 0.9,
               "instance.sparsity": 1.0, "instance.seed": None, "instance.path": None}

DEFAULTS: dict[str, dict] = {
    "plan": {**_DISCOUNTED, "algo.method": "vi", "algo.iters": 100},
    "gen-model": {**_DISCOUNTED, "algo.learner": "model-based", "algo.N": 1000, "algo.xi": 0.0,
                  "algo.schedule": "rescaled-linear", "algo.c": 1.0, "algo.log_power": 3},
    "online": {"instance.S": 4, "instance.A": 2, "instance.H": 5, "instance.sparsity": 1.0,
               "instance.seed": None, "instance.path": None,
               "algo.K": 2000, "algo.delta": 0.1, "algo.bonus": "hoeffding",
               "algo.refresh": "every-episode", "algo.c_b": 1.0},
    "offline": {**_DISCOUNTED, "instance.S": 6, "algo.N": 10000, "algo.c_b": 144.0,
                "algo.delta": 0.1, "algo.behavior": "mixed", "algo.expert_weight": 0.5,
                "algo.tau_max": None},
    "robust": {**_DISCOUNTED, "instance.A": 2, "algo.sigma": 0.3, "algo.N": 1000,
               "algo.iters": None},
    "policy-opt": {**_DISCOUNTED, "algo.method": "npg", "algo.eta": 1.0, "algo.tau": 0.0,
                   "algo.T": 300},
    "rlhf": {"instance.X": 4, "instance.Y": 5, "instance.beta": 1.0, "instance.seed": None,
             "algo.mode": "online-vpo", "algo.alpha": 0.1, "algo.n": 1000, "algo.T": 10,
             "algo.batch": 200, "algo.steps": 25, "algo.lr": 0.5},
}

_CHOICES = {
    "algo.method": {"plan": ("vi", "pi"), "policy-opt": ("ppg", "softmax-pg", "npg", "entropy-npg")},
    "algo.learner": ("model-based", "q-learning"),
    "algo.schedule": ("rescaled-linear", "constant"),
    "algo.bonus": ("hoeffding", "bernstein"),
    "algo.refresh": ("every-episode", "doubling"),
    "algo.behavior": ("expert", "uniform", "mixed"),
    "algo.mode": ("dpo", "online-vpo", "offline-vpo"),
}

_META = ("kind", "seeds", "sweep.param", "sweep.values")


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    seeds: list
    sweep_param: str | None = None
    sweep_values: list = field(default_factory=list)

    def resolved(self) -> dict:
        """Full mapping including every default, as echoed in the manifest."""
        out = {"kind": self.kind, "seeds": list(self.seeds)}
        out.update(self.params)
        if self.sweep_param is not None:
            out["sweep.param"] = self.sweep_param
            out["sweep.values"] = list(self.sweep_values)
        return out

    def hash(self) -> str:
        return config_hash(self.resolved())

    def points(self) -> list:
        """``(sweep_value, params)`` pairs; a single ``None`` point without a sweep."""
        if self.sweep_param is None:
            return [(None, dict(self.params))]
        pts = []
        for val in self.sweep_values:
            p = dict(self.params)
            p[self.sweep_param] = val
            pts.append((val, p))
        return pts


def config_hash(mapping: dict) -> str:
    """SHA-256 of the canonical JSON form, so key order never matters."""
    canon = json.dumps(mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _check_choice(kind: str, key: str, value) -> None:
    allowed = _CHOICES.get(key)
    if isinstance(allowed, dict):
        allowed = allowed.get(kind)
    if allowed is not None and value not in allowed:
        raise ConfigError(f"{key}={value!r} is not one of {list(allowed)}")


def _check_combinations(kind: str, p: dict) -> None:
    if kind == "policy-opt":
        if p["algo.method"] == "entropy-npg":
            if p["algo.tau"] <= 0:
                raise ConfigError("entropy-npg needs algo.tau > 0")
            if p["algo.eta"] > (1 - p["instance.gamma"]) / p["algo.tau"] * (1 + 1e-12):
                raise ConfigError("entropy-npg needs algo.eta <= (1 - gamma) / tau")
        elif p["algo.tau"] != 0:
            raise ConfigError(f"algo.tau is only used by entropy-npg, not {p['algo.method']}")
    if "instance.gamma" in p and not 0 <= p["instance.gamma"] < 1:
        raise ConfigError("instance.gamma must lie in [0, 1)")
    if kind == "robust" and not 0 <= p["algo.sigma"] <= 1:
        raise ConfigError("algo.sigma must lie in [0, 1]")
    if kind == "gen-model" and p["algo.learner"] == "q-learning" and p["algo.xi"] != 0:
        raise ConfigError("algo.xi applies to model-based planning only")


def build_config(raw: dict, seeds=None) -> ExperimentConfig:
    """Validate a raw (possibly nested) mapping against the defaults."""
    flat = _flatten(raw)
    kind = flat.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {list(KINDS)}, got {kind!r}")
    defaults = DEFAULTS[kind]
    unknown = sorted(k for k in flat if k not in defaults and k not in _META)
    if unknown:
        raise ConfigError(f"unknown config key(s) for kind {kind!r}: {', '.join(unknown)}")
    params = copy.deepcopy(defaults)
    for k, v in flat.items():
        if k in defaults:
            params[k] = _coerce(k, v, defaults[k])
    for k, v in params.items():
        _check_choice(kind, k, v)
    if seeds is None:
        seeds = flat.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a nonempty list of integers")
    for s in seeds:
        if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
            raise ConfigError(f"seed {s!r} is not a 64-bit unsigned integer")
    sweep_param = flat.get("sweep.param")
    sweep_values = flat.get("sweep.values", [])
    if sweep_param is not None:
        if sweep_param not in defaults:
            raise ConfigError(f"sweep.param {sweep_param!r} is not a key of kind {kind!r}")
        if not isinstance(sweep_values, list) or not sweep_values:
            raise ConfigError("sweep.values must be a nonempty list")
        sweep_values = [_coerce(sweep_param, v, defaults[sweep_param]) for v in sweep_values]
        for v in sweep_values:
            _check_choice(kind, sweep_param, v)
            _check_combinations(kind, {**params, sweep_param: v})
    elif "sweep.values" in flat:
        raise ConfigError("sweep.values given without sweep.param")
    else:
        _check_combinations(kind, params)
    return ExperimentConfig(kind, params, list(seeds), sweep_param, list(sweep_values))


def load_config(path, kind: str | None = None, seeds=None) -> ExperimentConfig:
    """Read a YAML config file; ``kind`` (from the CLI) fills or must match ``kind:``."""
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping")
    if kind is not None:
        if raw.get("kind", kind) != kind:
            raise ConfigError(f"config kind {raw['kind']!r} does not match subcommand {kind!r}")
        raw = {**raw, "kind": kind}
    return build_config(raw, seeds)
