"""Experiment configuration: YAML documents checked against a defaults tree.

Every key must appear in :data:`DEFAULTS`; unknown keys are errors. Missing
keys are filled from the defaults, so ``normalize`` is idempotent.
"""

from __future__ import annotations

import copy
import hashlib
from pathlib import Path

import yaml

from .exceptions import ConfigError

EXPERIMENTS = ("synth_sweep", "gamma_sweep", "classification", "stability", "gradcheck")

DEFAULTS: dict = {
    "experiment": "synth_sweep",
    "seed": 0,
    "trials": 5,
    "dataset": {
        "source": "synthetic",
        "synthetic": {
            "N": 10,
            "T1": 500,
            "T2": 500,
            "test_T1": 500,
            "test_T2": 500,
            "eigengap_ratio": 0.1,
            "noise_std": 0.0,
            "task": "regression",
        },
        "csv": {
            "path": None,
            "features": [],
            "target": None,
            "sensitive": None,
            "categorical": [],
            "task": "regression",
            "sensitive_map": None,
            "target_map": None,
            "delimiter": ",",
        },
        "test_fraction": 0.2,
        "standardize": True,
        "disadvantaged_group": 1,
    },
    "covariance": {
        "kinds": ["sample", "balanced"],
        "alpha": [0.5],
        "beta": [1.0],
        "clip_negative": False,
    },
    "model": {
        "hidden": [8, 8],
        "K": 1,
        "nonlinearity": "relu",
        "final_activation": True,
    },
    "train": {
        "gamma": [1.0],
        "epochs": 500,
        "batch_size": 0,
        "learning_rate": 0.01,
        "optimizer": "adam",
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "early_stop": None,
    },
    "baselines": {
        "m": [8],
        "kinds": ["linear", "rbf"],
        "ridge": 1e-3,
        "bandwidth": "median",
        "max_support": 3000,
    },
    "evaluation": {
        "error": "auto",
    },
    "synth_sweep": {
        "T1_min": 1,
        "T1_max": 500,
        "T1_step": 1,
    },
    "stability": {
        "N": 10,
        "T_grid": [100, 167, 278, 464, 774, 1292, 2154, 3594, 5995, 10000],
        "trials": 20,
        "filter": [0.5, 0.3, -0.05, 0.005],
        "alpha": 0.5,
        "beta": 1.0,
        "group_fraction": 0.5,
        "eigengap_ratio": 0.5,
    },
    "gradcheck": {
        "instances": 20,
        "tolerance": 1e-4,
        "eps": 1e-5,
    },
}

# values that may be given as lists or null instead of their default's type
_FREE = {("dataset", "csv", "path"), ("dataset", "csv", "target"), ("dataset", "csv", "sensitive"),
         ("dataset", "csv", "sensitive_map"), ("dataset", "csv", "target_map"),
         ("train", "early_stop"), ("baselines", "bandwidth")}

_CHOICES = {
    ("experiment",): EXPERIMENTS,
    ("dataset", "source"): ("synthetic", "csv"),
    ("dataset", "synthetic", "task"): ("regression", "classification"),
    ("dataset", "csv", "task"): ("regression", "classification"),
    ("model", "nonlinearity"): ("relu", "tanh", "identity"),
    ("train", "optimizer"): ("sgd", "adam"),
    ("evaluation", "error"): ("auto", "smape", "mse", "error"),
}


def _to_float(v):
    # PyYAML reads "1e-3" as a string
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _merge(default, given, path, errors):
    if isinstance(default, dict) and path not in _FREE:
        if not isinstance(given, dict):
            errors.append(f"{'.'.join(path)}: expected a mapping")
            return copy.deepcopy(default)
        out = {}
        for k in given:
            if k not in default:
                errors.append(f"unknown key: {'.'.join((*path, str(k)))}")
        for k, dv in default.items():
            out[k] = _merge(dv, given[k], (*path, k), errors) if k in given else copy.deepcopy(dv)
        return out
    if path in _FREE or default is None:
        return given
    name = ".".join(path)
    if isinstance(default, bool):
        if not isinstance(given, bool):
            errors.append(f"{name}: expected a boolean, got {given!r}")
    elif isinstance(default, int):
        if isinstance(given, bool) or not isinstance(given, int):
            errors.append(f"{name}: expected an integer, got {given!r}")
    elif isinstance(default, float):
        num = _to_float(given)
        if num is None:
            errors.append(f"{name}: expected a number, got {given!r}")
        else:
            given = num
    elif isinstance(default, list):
        if not isinstance(given, list):
            errors.append(f"{name}: expected a list, got {given!r}")
        elif not given and default:
            errors.append(f"{name}: grid must be nonempty")
        elif default and isinstance(default[0], float):
            nums = [_to_float(v) for v in given]
            if any(v is None for v in nums):
                errors.append(f"{name}: expected numbers, got {given!r}")
            else:
                given = nums
    elif isinstance(default, str):
        if not isinstance(given, str):
            errors.append(f"{name}: expected a string, got {given!r}")
        elif path in _CHOICES and given not in _CHOICES[path]:
            errors.append(f"{name}: {given!r} not one of {list(_CHOICES[path])}")
    return given


def normalize(cfg: dict | None) -> dict:
    """Fill defaults and validate; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    out = _merge(DEFAULTS, cfg or {}, (), errors)
    if not errors:
        errors.extend(_semantic_checks(out))
    if errors:
        raise ConfigError(errors)
    return out


def _semantic_checks(c: dict) -> list[str]:
    errs = []
    cov = c["covariance"]
    for k in cov["kinds"]:
        if k not in ("sample", "balanced", "debiased"):
            errs.append(f"covariance.kinds: unknown kind {k!r}")
    if any(not 0 <= a <= 1 for a in cov["alpha"]):
        errs.append("covariance.alpha: values must lie in [0, 1]")
    if any(b < 0 for b in cov["beta"]):
        errs.append("covariance.beta: values must be >= 0")
    if any(not 0 <= g <= 1 for g in c["train"]["gamma"]):
        errs.append("train.gamma: values must lie in [0, 1]")
    for k in c["baselines"]["kinds"]:
        if k not in ("linear", "rbf"):
            errs.append(f"baselines.kinds: unknown kind {k!r}")
    if c["trials"] < 1:
        errs.append("trials must be >= 1")
    if not 0 < c["dataset"]["test_fraction"] < 1:
        errs.append("dataset.test_fraction must lie in (0, 1)")
    if c["dataset"]["source"] == "csv":
        csv = c["dataset"]["csv"]
        if not csv["path"]:
            errs.append("dataset.csv.path is required when dataset.source is 'csv'")
        elif not Path(csv["path"]).exists():
            errs.append(f"dataset.csv.path: file not found: {csv['path']}")
        for key in ("target", "sensitive"):
            if not csv[key]:
                errs.append(f"dataset.csv.{key} is required when dataset.source is 'csv'")
        if not csv["features"]:
            errs.append("dataset.csv.features must be nonempty")
    es = c["train"]["early_stop"]
    if es is not None and not (isinstance(es, list) and len(es) == 2):
        errs.append("train.early_stop must be null or [patience, validation_fraction]")
    sw = c["synth_sweep"]
    if not 1 <= sw["T1_min"] <= sw["T1_max"] or sw["T1_step"] < 1:
        errs.append("synth_sweep: need 1 <= T1_min <= T1_max and T1_step >= 1")
    if c["experiment"] == "synth_sweep" and sw["T1_max"] > c["dataset"]["synthetic"]["test_T1"]:
        errs.append("synth_sweep.T1_max exceeds dataset.synthetic.test_T1")
    return errs


def load_config(path, experiment: str | None = None) -> dict:
    """Read and normalize a YAML config; ``experiment`` overrides the file's choice."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = dict(raw or {})
    if experiment is not None:
        raw["experiment"] = experiment
    return normalize(raw)


def validate_config(path):
    """Normalized config, or the list of problems found."""
    try:
        return load_config(path)
    except ConfigError as exc:
        return exc.errors
    except (OSError, yaml.YAMLError) as exc:
        return [f"{path}: {exc}"]


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump(cfg).encode()).hexdigest()
