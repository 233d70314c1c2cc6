"""Run configuration: defaults, JSON loading, validation and hashing."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from ..io import config_hash
from ..nozzle_solver import RESPONSES, FlowConfig
from ..random_field import HyperPrior

SCHEMA = "gpcal.run/1"
OUT_DIR_ENV = "GPCAL_OUT_DIR"
SCENARIOS = ("baseline", "prior-sensitivity", "model-error", "data-error")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema": SCHEMA,
    "flow": FlowConfig().to_dict(),
    # polynomial coefficients in increasing powers of x
    "true_area": [1.0, 0.0, 0.8],
    "prior_mean_area": [1.0, 0.5, 0.0, 0.3],
    "kl": {"n_modes": 4, "n_hyper": 20, "n_nodes": None, "basis_size": 12, "coverage": [0.001, 0.999]},
    "order": 2,
    "area_priors": {
        "variance": {"family": "invgamma", "shape": 9.0, "scale": 0.5},
        "corr": {"family": "gamma", "shape": 5.0, "scale": 0.2},
    },
    "discrepancy_priors": {
        "variance": {"family": "invgamma", "shape": 9.0, "scale": 0.5},
        "corr": {"family": "gamma", "shape": 6.0, "scale": 2.0},
    },
    "scenario_discrepancy_variance": {"family": "invgamma", "shape": 6.0, "scale": 2.0},
    "sensitivity_variances": [
        {"family": "invgamma", "shape": 6.0, "scale": 2.0},
        {"family": "invgamma", "shape": 1.5, "scale": 2.0},
    ],
    "responses": list(RESPONSES),
    "observations": {"locations": [0.15, 0.35, 0.55, 0.75, 0.95], "noise_fraction": 0.01},
    "mcmc": {"n_samples": 10000, "n_burn": 1000, "step": 0.1, "adapt": True},
    "surrogate": {"order": 32, "n_nodes": None},
    "mc_samples": 1000,
    "experiment": {
        "discrepancy": True,
        "error_response": "P",
        "model_error_factor": 1.5,
        "data_error_factor": 1.5,
    },
    "verdict": {"high_alpha": 5.0, "weak_corr_ratio": 10.0},
    "full_scale": False,
    "seed": 0,
    "threads": 1,
    "out_dir": "out",
}

PAPER_SCALE = {"mcmc": {"n_samples": 100000, "n_burn": 10000}, "mc_samples": 10000}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k not in ("flow",) and isinstance(v, dict):
            out[k] = _merge(base[k], v, path + k + ".")
        elif k == "flow":
            if not isinstance(v, dict):
                raise ConfigError("flow must be an object")
            bad = set(v) - set(base["flow"])
            if bad:
                raise ConfigError(f"unknown flow keys {sorted(bad)}")
            out[k] = {**base[k], **v}
        else:
            out[k] = v
    return out


def prior_from(d) -> HyperPrior:
    try:
        return HyperPrior(d["family"], float(d["shape"]), float(d.get("scale", 1.0)), tuple(d.get("coverage", (0.001, 0.999))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid prior {d!r}: {exc}") from exc


def validate(cfg: dict) -> dict:
    """Check a resolved config; raises ``ConfigError``."""
    if cfg.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}, got {cfg.get('schema')!r}")
    try:
        FlowConfig(**cfg["flow"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"flow: {exc}") from exc
    for key in ("true_area", "prior_mean_area"):
        if not cfg[key] or not all(isinstance(c, (int, float)) for c in cfg[key]):
            raise ConfigError(f"{key} must be a non-empty list of numbers")
    kl = cfg["kl"]
    if kl["n_modes"] < 1 or kl["basis_size"] < kl["n_modes"] or kl["n_hyper"] < 1:
        raise ConfigError("kl settings need 1 <= n_modes <= basis_size and n_hyper >= 1")
    if kl["n_nodes"] is not None and kl["n_nodes"] < kl["n_hyper"]:
        raise ConfigError("kl.n_nodes must be at least kl.n_hyper")
    if not isinstance(cfg["order"], int) or cfg["order"] < 1:
        raise ConfigError("order must be a positive integer")
    for group in ("area_priors", "discrepancy_priors"):
        for k in ("variance", "corr"):
            prior_from(cfg[group][k])
    prior_from(cfg["scenario_discrepancy_variance"])
    for p in cfg["sensitivity_variances"]:
        prior_from(p)
    bad = set(cfg["responses"]) - set(RESPONSES)
    if bad or not cfg["responses"]:
        raise ConfigError(f"responses must be a non-empty subset of {RESPONSES}")
    obs = cfg["observations"]
    length = cfg["flow"]["length"]
    if not obs["locations"] or any(not 0 <= x <= length for x in obs["locations"]):
        raise ConfigError("observation locations must lie in the flow domain")
    if obs["noise_fraction"] < 0:
        raise ConfigError("noise_fraction must be non-negative")
    m = cfg["mcmc"]
    if m["n_samples"] < 1 or m["n_burn"] < 0 or not m["step"] > 0:
        raise ConfigError("mcmc needs n_samples >= 1, n_burn >= 0, step > 0")
    if cfg["surrogate"]["order"] < 0:
        raise ConfigError("surrogate order must be non-negative")
    if cfg["mc_samples"] < 1:
        raise ConfigError("mc_samples must be at least 1")
    if cfg["experiment"]["error_response"] not in cfg["responses"]:
        raise ConfigError("experiment.error_response must be one of the responses")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    return cfg


def resolve(overrides: dict | None = None, **kwargs) -> dict:
    """Defaults merged with ``overrides`` and keyword overrides, validated."""
    cfg = _merge(DEFAULTS, overrides or {})
    cfg = _merge(cfg, kwargs)
    if cfg["full_scale"]:
        cfg = _merge(cfg, PAPER_SCALE)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        cfg["out_dir"] = env
    return validate(cfg)


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    if "schema" not in data:
        raise ConfigError(f"config file {p} has no 'schema' field")
    return resolve(data)


def hash_of(cfg: dict) -> str:
    """Hash of everything that affects results (the output directory is excluded)."""
    return config_hash({k: v for k, v in cfg.items() if k not in ("out_dir", "threads")})
