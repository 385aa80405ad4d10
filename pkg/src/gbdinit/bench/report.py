"""Paired benchmark statistics against the no-cuts baseline."""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import numpy as np

BASELINE = "NC"
REPORT_HEADER = ["strategy", "avg_cost", "avg_red_pct", "avg_fold", "max_red_pct", "min_red_pct", "max_fold", "min_fold"]
INSTANCE_HEADER = ["instance_id", "strategy", "n_cuts", "cost", "objective", "iterations", "oracle_calls", "converged"]


def _num(v: float) -> str:
    return repr(float(v))


def summarize(rows: list[dict]) -> list[dict]:
    """One row per strategy; reductions and folds use per-instance pairs with the baseline."""
    cost: dict[str, dict[str, float]] = defaultdict(dict)
    order: list[str] = []
    for r in rows:
        if r["strategy"] not in cost:
            order.append(r["strategy"])
        cost[r["strategy"]][r["instance_id"]] = float(r["cost"])
    if BASELINE not in cost:
        raise ValueError("per-instance rows lack the no-cuts baseline")
    base = cost[BASELINE]
    ids = sorted(base)
    out = []
    for name in [BASELINE] + [s for s in order if s != BASELINE]:
        if set(cost[name]) != set(ids):
            raise ValueError(f"strategy {name} is not paired with the baseline instance set")
        c = np.array([cost[name][i] for i in ids])
        b = np.array([base[i] for i in ids])
        red = 100.0 * (b - c) / b
        fold = b / c
        out.append(
            {
                "strategy": name,
                "avg_cost": float(c.mean()),
                "avg_red_pct": float(red.mean()),
                "avg_fold": float(fold.mean()),
                "max_red_pct": float(red.max()),
                "min_red_pct": float(red.min()),
                "max_fold": float(fold.max()),
                "min_fold": float(fold.min()),
            }
        )
    return out


def _atomic_rows(path: str, header: list[str], rows) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def write_report(summary: list[dict], path: str) -> None:
    _atomic_rows(path, REPORT_HEADER, ([r["strategy"]] + [_num(r[k]) for k in REPORT_HEADER[1:]] for r in summary))


def read_report(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "strategy" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_instances(rows: list[dict], path: str) -> None:
    def fmt(r):
        return [r["instance_id"], r["strategy"], r["n_cuts"], _num(r["cost"]), _num(r["objective"]), r["iterations"], r["oracle_calls"], int(r["converged"])]

    _atomic_rows(path, INSTANCE_HEADER, (fmt(r) for r in rows))


def read_instances(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
