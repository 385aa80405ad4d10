"""Experiment configuration: one JSON file, validated into typed sections."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields

from ..cstr.case import CaseConfig
from ..gbd import GbdConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "case": {},
    "solver": {"tol": 0.1, "max_iterations": 100, "beta_sub": 50.0, "milp_gap": 1e-6, "node_limit": 100_000},
    "metric": "work",
    "n_max": 6,
    "pool": {"seed": 0, "n_data": 2000, "n_feasible": 300},
    "learning": {
        "n_initial": 10,
        "budget": 100,
        "seed": 0,
        "gp": {"nu": 1.5, "restarts": 5, "evals": 40},
        "dt": {},
        "rf": {"n_trees": 100},
        "mlp": {"hidden": [32, 32, 32], "alpha": 0.01, "lr": 1e-4, "epochs": 500},
    },
    "evaluate": {"n_test": 100, "seed": 0},
    "workers": 1,
    "out_dir": "runs",
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and key != "case":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, data: dict | None = None, seed: int | None = None, metric: str | None = None) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, data or {})
        if seed is not None:
            raw["pool"]["seed"] = raw["learning"]["seed"] = raw["evaluate"]["seed"] = int(seed)
        if metric is not None:
            raw["metric"] = metric
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | None, seed: int | None = None, metric: str | None = None) -> "ExperimentConfig":
        if path is None:
            return cls.from_dict({}, seed, metric)
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(data, seed, metric)

    def validate(self) -> None:
        r = self.raw
        if r["metric"] not in ("work", "wall"):
            raise ConfigError(f"metric must be 'work' or 'wall', got {r['metric']!r}")
        if not isinstance(r["n_max"], int) or r["n_max"] < 2:
            raise ConfigError("n_max must be an integer >= 2")
        for key in ("n_initial", "budget"):
            if not isinstance(r["learning"][key], int) or r["learning"][key] < 1:
                raise ConfigError(f"learning.{key} must be a positive integer")
        if r["learning"]["n_initial"] < 2:
            raise ConfigError("learning.n_initial must be >= 2")
        known = {f.name for f in fields(CaseConfig)}
        bad = set(r["case"]) - known
        if bad:
            raise ConfigError(f"unknown case keys {sorted(bad)}")
        try:
            self.case_config()
            self.gbd_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def case_config(self) -> CaseConfig:
        return CaseConfig(**self.raw["case"])

    def gbd_config(self) -> GbdConfig:
        return GbdConfig(**self.raw["solver"])

    @property
    def metric(self) -> str:
        return self.raw["metric"]

    @property
    def n_max(self) -> int:
        return self.raw["n_max"]

    def canonical(self) -> str:
        """Result-relevant settings only; worker count and output location are excluded."""
        full = {k: v for k, v in self.raw.items() if k not in ("workers", "out_dir")}
        full["case"] = asdict(self.case_config())
        return json.dumps(full, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]
