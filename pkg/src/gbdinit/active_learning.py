"""Pools of (instance, cut count) samples, GBD labeling and uncertainty-sampling AL."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cstr.case import CaseStudy, ScheduleInstance, instance_features, sample_disturbance
from .gbd import GbdConfig
from .lp_milp import CycleLimit
from .surrogates import GaussianProcess

log = logging.getLogger(__name__)

METRICS = ("work", "wall")
POOL_STREAM, TEST_STREAM = 0, 1


class PoolExhausted(ValueError):
    pass


class BudgetTooLarge(ValueError):
    pass


@dataclass
class PoolEntry:
    sample_id: int
    instance: ScheduleInstance
    n_cuts: int
    features: np.ndarray

    @property
    def instance_id(self) -> str:
        return self.instance.instance_id


@dataclass
class Pool:
    entries: list[PoolEntry]
    seed: int = 0
    n_max: int = 6
    discarded: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self) -> dict[int, PoolEntry]:
        return {e.sample_id: e for e in self.entries}

    @property
    def instances(self) -> list[ScheduleInstance]:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.instance_id, e.instance)
        return list(seen.values())

    def features(self) -> np.ndarray:
        return np.array([e.features for e in self.entries])


@dataclass
class LabeledSample:
    sample_id: int
    instance_id: str
    n_cuts: int
    features: np.ndarray
    label: float
    censored: bool
    metric: str
    seed: int
    error: str = ""


@dataclass
class LabeledSet:
    samples: list[LabeledSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def add(self, sample: LabeledSample) -> None:
        key = (sample.instance_id, sample.n_cuts)
        if any((s.instance_id, s.n_cuts) == key for s in self.samples):
            raise ValueError(f"sample {key} already labeled")
        self.samples.append(sample)

    def training(self) -> list[LabeledSample]:
        return [s for s in self.samples if not s.censored and not s.error]

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        rows = self.training()
        return np.array([s.features for s in rows]), np.array([s.label for s in rows])

    @property
    def n_censored(self) -> int:
        return sum(1 for s in self.samples if s.censored)

    @property
    def ids(self) -> set[int]:
        return {s.sample_id for s in self.samples}


@dataclass(frozen=True)
class LabelResult:
    value: float
    censored: bool = False
    error: str = ""


def random_streams(seed: int, stream: int) -> np.random.Generator:
    """Disjoint generator per (seed, purpose); pools and held-out sets never share draws."""
    return np.random.default_rng([int(seed), int(stream)])


def draw_instances(case: CaseStudy, seed: int, n_data: int, stream: int = POOL_STREAM, n_feasible: int | None = None, prefix: str = "p"):
    """Sample disturbances, simulate to T0 and keep the feasible instances.

    With ``n_feasible`` set, drawing continues until that many feasible
    instances are found (at most ``n_data`` draws in total).
    """
    rng = random_streams(seed, stream)
    kept: list[ScheduleInstance] = []
    discarded = 0
    for k in range(n_data):
        if n_feasible is not None and len(kept) >= n_feasible:
            break
        dist = sample_disturbance(rng, case.config)
        inst = case.instance_from_disturbance(dist, f"{prefix}{seed}-{k:05d}")
        if case.check_feasible(inst):
            kept.append(inst)
        else:
            discarded += 1
            log.info("discarding infeasible disturbance %s (T0=%.3f)", inst.instance_id, inst.t0)
    return kept, discarded


def pool_from_instances(instances: Sequence[ScheduleInstance], n_max: int, seed: int = 0, discarded: int = 0) -> Pool:
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    entries = []
    for inst in instances:
        for n in range(2, n_max + 1):
            entries.append(PoolEntry(len(entries), inst, n, instance_features(inst, n)))
    if not entries:
        log.warning("pool is empty: no feasible instances")
    return Pool(entries, seed, n_max, discarded)


def build_pool(seed: int, n_data: int, n_max: int, case: CaseStudy, n_feasible: int | None = None) -> Pool:
    if n_data < 1:
        raise ValueError("n_data must be >= 1")
    instances, discarded = draw_instances(case, seed, n_data, POOL_STREAM, n_feasible)
    return pool_from_instances(instances, n_max, seed, discarded)


class Labeler:
    """GBD oracle for pool entries; results are cached per (instance id, n_cuts)."""

    def __init__(self, case: CaseStudy, metric: str = "work", gbd_config: GbdConfig | None = None):
        if metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        self.case, self.metric = case, metric
        self.gbd_config = gbd_config or GbdConfig()
        self.cache: dict[tuple[str, int], LabelResult] = {}
        self.details: dict[tuple[str, int], dict] = {}
        self.solves = 0

    def solve_cost(self, instance: ScheduleInstance, n_cuts: int) -> LabelResult:
        key = (instance.instance_id, n_cuts)
        if key in self.cache:
            return self.cache[key]
        try:
            result = self.case.solve(instance, n_cuts, self.gbd_config)
            value = result.work_units if self.metric == "work" else result.wall_seconds
            out = LabelResult(float(value), not result.converged)
            self.details[key] = {"objective": result.ub, "iterations": result.iterations, "oracle_calls": result.oracle_calls}
        except (RuntimeError, CycleLimit) as exc:
            log.warning("solve failed for %s n=%d: %s", instance.instance_id, n_cuts, exc)
            out = LabelResult(math.nan, False, f"{type(exc).__name__}: {exc}")
        self.solves += 1
        self.cache[key] = out
        return out

    def __call__(self, entry: PoolEntry) -> LabelResult:
        return self.solve_cost(entry.instance, entry.n_cuts)


def label(entry: PoolEntry, labeler: Callable[[PoolEntry], LabelResult]) -> LabelResult:
    return labeler(entry)


def _labeled(entry: PoolEntry, res: LabelResult, metric: str, seed: int) -> LabeledSample:
    return LabeledSample(entry.sample_id, entry.instance_id, entry.n_cuts, entry.features, res.value, res.censored, metric, seed, res.error)


def label_entries(entries: Sequence[PoolEntry], labeler, metric: str = "work", seed: int = 0) -> LabeledSet:
    out = LabeledSet()
    for entry in sorted(entries, key=lambda e: e.sample_id):
        out.add(_labeled(entry, labeler(entry), metric, seed))
    return out


def supervised_dataset(seed: int, n_data: int, n_max: int, case: CaseStudy, labeler=None, metric: str = "work") -> LabeledSet:
    pool = build_pool(seed, n_data, n_max, case)
    labeler = labeler or Labeler(case, metric)
    return label_entries(pool.entries, labeler, metric, seed)


def initial_sample(pool: Pool, n_initial: int, seed: int) -> list[PoolEntry]:
    if n_initial > len(pool):
        raise BudgetTooLarge(f"initial set of {n_initial} exceeds pool of {len(pool)}")
    rng = random_streams(seed, 2)
    picks = rng.choice(len(pool), n_initial, replace=False)
    return [pool.entries[i] for i in sorted(picks)]


def random_label_baseline(pool: Pool, budget: int, seed: int, labeler, metric: str = "work") -> LabeledSet:
    if budget > len(pool):
        raise BudgetTooLarge(f"budget {budget} exceeds pool of {len(pool)}")
    rng = random_streams(seed, 3)
    picks = rng.choice(len(pool), budget, replace=False)
    return label_entries([pool.entries[i] for i in picks], labeler, metric, seed)


@dataclass
class AlResult:
    model: GaussianProcess
    labeled: LabeledSet
    trace: list[dict]


def al_loop(
    pool: Pool,
    initial: LabeledSet,
    budget: int,
    labeler,
    metric: str = "work",
    seed: int = 0,
    gp_options: dict | None = None,
) -> AlResult:
    """Maximum-uncertainty sampling: refit, label the pool entry with largest std, repeat."""
    if len(initial.training()) < 2:
        raise ValueError("need at least two usable initial labels")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    labeled = LabeledSet(list(initial.samples))
    remaining = [e for e in pool.entries if e.sample_id not in labeled.ids]
    if budget > len(remaining):
        raise PoolExhausted(f"budget {budget} exceeds {len(remaining)} unlabeled entries")
    remaining.sort(key=lambda e: e.sample_id)
    feats = np.array([e.features for e in remaining])
    gp_options = dict(gp_options or {})
    gp_options.setdefault("seed", seed)

    def fit():
        x, y = labeled.xy()
        return GaussianProcess(**gp_options).fit(x, y)

    model = fit()
    trace = []
    for step in range(1, budget + 1):
        std = model.predict_std(feats)
        pick = int(np.argmax(std))  # first max = lowest sample id
        entry = remaining.pop(pick)
        feats = np.delete(feats, pick, axis=0)
        res = labeler(entry)
        labeled.add(_labeled(entry, res, metric, seed))
        trace.append({"step": step, "chosen_sample_id": entry.sample_id, "sigma": float(std[pick]), "label": res.value})
        if len(labeled.training()) >= 2:
            model = fit()
    return AlResult(model, labeled, trace)


# -- CSV persistence ------------------------------------------------------


def _atomic_csv(path: str, header: list[str], rows) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def sample_header(dim: int) -> list[str]:
    return ["sample_id", "instance_id", "n_cuts"] + [f"f{k + 1}" for k in range(dim)] + ["label", "censored", "metric", "seed"]


def write_pool_csv(pool: Pool, path: str, metric: str = "work") -> None:
    dim = len(pool.entries[0].features) if pool.entries else 0
    rows = (
        [e.sample_id, e.instance_id, e.n_cuts, *(_fmt(float(v)) for v in e.features), "", "", metric, pool.seed]
        for e in pool.entries
    )
    _atomic_csv(path, sample_header(dim), rows)


def write_labels_csv(labeled: LabeledSet, path: str) -> None:
    dim = len(labeled.samples[0].features) if labeled.samples else 0
    rows = (
        [s.sample_id, s.instance_id, s.n_cuts, *(_fmt(float(v)) for v in s.features), _fmt(float(s.label)), _fmt(s.censored), s.metric, s.seed]
        for s in sorted(labeled.samples, key=lambda s: s.sample_id)
    )
    _atomic_csv(path, sample_header(dim), rows)


def read_labels_csv(path: str) -> LabeledSet:
    out = LabeledSet()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["label"] == "" and row["censored"] == "":
                continue
            feats = np.array([float(row[k]) for k in row if k.startswith("f") and k[1:].isdigit()])
            lab = float(row["label"]) if row["label"] else math.nan
            out.add(
                LabeledSample(
                    int(row["sample_id"]),
                    row["instance_id"],
                    int(row["n_cuts"]),
                    feats,
                    lab,
                    row["censored"] == "1",
                    row["metric"],
                    int(row["seed"]),
                    "" if row["label"] else "error",
                )
            )
    return out


TRACE_HEADER = ["step", "chosen_sample_id", "sigma", "label"]


def write_trace_csv(trace: list[dict], path: str) -> None:
    _atomic_csv(path, TRACE_HEADER, ([r["step"], r["chosen_sample_id"], _fmt(r["sigma"]), _fmt(float(r["label"]))] for r in trace))


def initial_labels(pool: Pool, n_initial: int, seed: int, labeler, metric: str = "work") -> LabeledSet:
    return label_entries(initial_sample(pool, n_initial, seed), labeler, metric, seed)
