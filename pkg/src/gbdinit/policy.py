"""Per-instance choice of the initial cut count from a trained surrogate."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .cstr.case import CaseStudy, ScheduleInstance, instance_features
from .gbd import GbdConfig, GbdResult
from .surrogates import DimensionMismatch, model_from_json, model_to_json

POLICY_VERSION = 1


@dataclass
class InitPolicy:
    model: object
    candidates: tuple[int, ...]

    def __post_init__(self):
        self.candidates = tuple(sorted(int(n) for n in self.candidates))
        if not self.candidates:
            raise ValueError("candidate set is empty")
        if min(self.candidates) < 2:
            raise ValueError("candidate cut counts must be >= 2")

    @classmethod
    def for_range(cls, model, n_max: int) -> "InitPolicy":
        return cls(model, tuple(range(2, n_max + 1)))

    def scores(self, instance: ScheduleInstance) -> np.ndarray:
        x = np.array([instance_features(instance, n) for n in self.candidates])
        if x.shape[1] != self.model.dim:
            raise DimensionMismatch(f"policy expects {self.model.dim} features, instance gives {x.shape[1]}")
        return np.asarray(self.model.predict(x), dtype=float)

    def to_json(self) -> dict:
        return {"policy_version": POLICY_VERSION, "candidates": list(self.candidates), "surrogate": model_to_json(self.model)}

    @classmethod
    def from_json(cls, d: dict) -> "InitPolicy":
        if d.get("policy_version") != POLICY_VERSION:
            raise ValueError(f"unsupported policy version {d.get('policy_version')!r}")
        return cls(model_from_json(d["surrogate"]), tuple(d["candidates"]))

    def save(self, path: str) -> None:
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w") as fh:
            json.dump(self.to_json(), fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "InitPolicy":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def optimal_cuts(policy: InitPolicy, instance: ScheduleInstance) -> int:
    """Candidate with the lowest predicted cost; exact ties go to the smaller count."""
    scores = policy.scores(instance)
    return policy.candidates[int(np.argmin(scores))]


def solve_with_learned_init(
    policy: InitPolicy, instance: ScheduleInstance, case: CaseStudy, config: GbdConfig | None = None
) -> tuple[int, GbdResult, float]:
    started = time.perf_counter()
    n = optimal_cuts(policy, instance)
    overhead = time.perf_counter() - started
    return n, case.solve(instance, n, config), overhead
