"""Run configuration: YAML file plus command-line overrides, hashed for output addressing."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

DATA_DIR_ENV = "ADOPTDYN_DATA_DIR"
CONFIG_VERSION = 1

DEFAULTS = {
    "data": {"survey": None, "schema": None, "calibrated": None},
    "country": "Germany",
    "seed": 0,
    "out": "runs",
    "horizon": 5000,
    "model": {
        "beta": 0.01,
        "gamma": 0.02,
        "mobility": "ordinal",
        "weighted_influence": False,
        "strict_step_bound": True,
        "initial_adoption": "per_community",
        "delta": None,
        "lam": None,
        "xi": None,
    },
    "weights": {"lam_low": 0.3, "lam_high": 0.6, "xi_low": 0.1, "xi_high": 0.35, "total_cap": 0.99},
    "network": {"cutoff": 0.9, "sigma": None, "damping": 0.85},
    "clustering": {"k_min": 1, "k_max": 9, "restarts": 10, "chosen_k": 5},
    "tolerances": {"convergence": 1e-10, "max_steps": 1_000_000},
    "simulate": {"per_community": False, "policy": {"kind": "none", "rule": "size", "budget": None}},
    "policies": None,
    "sweep": {"kind": "dissatisfaction", "fractions": [0.0, 0.25, 0.5, 0.75, 1.0], "rules": None},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunConfig:
    """Resolved settings for one run; ``values`` mirrors ``DEFAULTS``."""

    def __init__(self, values: dict, base_dir: Path):
        self.values = values
        self.base_dir = base_dir
        self._validate()

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[dict] = None) -> "RunConfig":
        raw, base = {}, Path.cwd()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            try:
                raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{p}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"{p}: top level must be a mapping")
            base = p.resolve().parent
        values = _merge(DEFAULTS, raw)
        for dotted, v in (overrides or {}).items():
            if v is None:
                continue
            node = values
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node[key]
            node[leaf] = v
        return cls(values, base)

    def __getitem__(self, key):
        return self.values[key]

    def _validate(self):
        v = self.values
        if not isinstance(v["seed"], int) or isinstance(v["seed"], bool):
            raise ConfigError("seed must be an integer")
        if not isinstance(v["horizon"], int) or v["horizon"] < 0:
            raise ConfigError("horizon must be a nonnegative integer")
        m = v["model"]
        if not 0 <= float(m["beta"]) <= 1:
            raise ConfigError("model.beta must lie in [0, 1]")
        if not 0 <= float(m["gamma"]) < 1:
            raise ConfigError("model.gamma must lie in [0, 1)")
        if m["mobility"] not in ("ordinal", "km"):
            raise ConfigError("model.mobility must be 'ordinal' or 'km'")
        if m["initial_adoption"] not in ("per_community", "uniform"):
            raise ConfigError("model.initial_adoption must be 'per_community' or 'uniform'")
        d = v["data"]
        if d["survey"] is None and d["calibrated"] is None:
            raise ConfigError("set data.survey (raw survey CSV) or data.calibrated (calibrated inputs JSON)")
        if v["policies"] is not None and not isinstance(v["policies"], list):
            raise ConfigError("policies must be a list of {kind, rule, budget} mappings")

    def resolve_path(self, name: Optional[str]) -> Optional[Path]:
        """Absolute path as given; relative paths are tried against the config
        directory and then the data directory from the environment."""
        if name is None:
            return None
        p = Path(os.path.expanduser(name))
        if p.is_absolute():
            return p
        candidates = [self.base_dir / p]
        if os.environ.get(DATA_DIR_ENV):
            candidates.append(Path(os.environ[DATA_DIR_ENV]) / p)
        for c in candidates:
            if c.exists():
                return c
        return candidates[-1]

    def fingerprint(self) -> dict:
        """Everything that determines the outputs: settings without paths, plus input digests."""
        v = copy.deepcopy(self.values)
        v.pop("out")
        digests = {}
        for key in ("survey", "schema", "calibrated"):
            path = self.resolve_path(v["data"][key])
            digests[key] = _file_digest(path) if path is not None and path.is_file() else None
        v["data"] = digests
        v["config_version"] = CONFIG_VERSION
        return v

    def digest(self) -> str:
        blob = json.dumps(self.fingerprint(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def run_dir(self) -> Path:
        out = Path(os.path.expanduser(self.values["out"]))
        return out / self.digest()[:16]
