"""Run configuration: YAML with a schema version, strict keys and echoed defaults."""
from __future__ import annotations

import copy
import hashlib
import json

import yaml

SCHEMA_VERSION = 1

ANALYSES = (
    "tv_condition",
    "classical_subgeo",
    "lyapunov_verify",
    "hitting_bound",
    "wasserstein_contraction",
    "subordinate",
)

# Sections whose contents are passed through unchecked (model factory arguments).
_FREE = {("model", "params"), ("model", "jump")}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "model": {"family": "ou", "params": {}, "jump": None},
    "analysis": [],
    "numeric": {
        "seed": 0,
        "tolerance": 1e-6,
        "x0": None,
        "r0": 1.0,
        "rate": "power(0.5)",
        "geometric": False,
        "r_max": None,
        "sphere_samples": 512,
        "rate_times": [1.0, 10.0, 100.0, 1000.0, 10000.0],
        "classical": {"alpha": 0.5, "gamma": 1.0, "Gamma": 0.1, "r_max": 50.0, "step": 0.005,
                      "expect": None},
        "lyapunov": {"n_points": 200, "r1": None, "span": 10.0},
        "hitting": {"x": [2.0], "eps": None},
        "simulation": {"T": 20.0, "dt": 1e-3, "n_paths": 1000, "record_every": 10, "workers": 1,
                       "starts": [0.0]},
        "wasserstein": {"f": "identity", "psi": "power(2)", "gamma": 10.0, "Gamma": None,
                        "pairs": [[1.0, -1.0]], "p": 1.0, "kappa": None, "fit": "power",
                        "scan_radius": 10.0, "scan_points": 401, "slack_dt": 10.0,
                        "fit_from": 1.0},
        "subordinate": {"family": "gamma", "a": 1.0, "b": 1.0, "lam": 0.0, "jump_mean": 1.0,
                        "base_rate": "exp(1)", "p": [1.0, 2.0], "times": [0.5, 1.0, 2.0],
                        "n": 100000, "batches": 20, "method": "monte_carlo"},
    },
    "output": {"dir": "out", "formats": ["json", "text", "csv"]},
}


class ConfigError(ValueError):
    pass


def _merge(default, user, path=()):
    if user is None:
        return copy.deepcopy(default)
    if isinstance(default, dict) and path not in _FREE:
        if not isinstance(user, dict):
            raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping")
        unknown = sorted(set(user) - set(default))
        if unknown:
            raise ConfigError(f"unknown key(s) in {'.'.join(path) or 'config'}: {', '.join(unknown)}")
        return {k: _merge(v, user.get(k), path + (k,)) if k in user else copy.deepcopy(v)
                for k, v in default.items()}
    if isinstance(default, float) and isinstance(user, str):
        # YAML 1.1 reads "1e-6" as a string
        try:
            return float(user)
        except ValueError:
            raise ConfigError(f"{'.'.join(path)} must be a number, got {user!r}") from None
    return copy.deepcopy(user)


def resolve(raw: dict | None) -> dict:
    """Merge a user mapping over the defaults, rejecting unknown keys."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _merge(DEFAULTS, raw)
    bad = [a for a in cfg["analysis"] if a not in ANALYSES]
    if bad:
        raise ConfigError(f"unknown analysis name(s): {', '.join(bad)}")
    if cfg["numeric"]["x0"] is None:
        cfg["numeric"]["x0"] = [0.0]
    return cfg


def load(path) -> dict:
    with open(path) as fh:
        return resolve(yaml.safe_load(fh))


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
