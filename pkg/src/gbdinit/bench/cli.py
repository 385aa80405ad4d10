"""Command-line front end: pool-gen, label, train, evaluate, solve.

Every command writes inside a run directory named ``<config digest>-<UTC time>``
(created by ``pool-gen`` or on demand).  Files are written to a temporary name
and renamed into place.  Exit status 1 signals a configuration or input error,
2 a solver failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import active_learning as al
from ..cstr.case import CaseStudy, ScheduleInstance
from ..cstr.plant import InfeasibleTransition
from ..gbd import MasterInfeasible, select_initial_cuts
from ..lp_milp import CycleLimit
from ..policy import InitPolicy, optimal_cuts
from ..surrogates import SingularKernel, make_model
from . import report
from .config import ConfigError, ExperimentConfig

log = logging.getLogger("gbdinit")

SOLVER_ERRORS = (MasterInfeasible, CycleLimit, SingularKernel, InfeasibleTransition)


class InputError(Exception):
    pass


# -- run directory ---------------------------------------------------------


def new_run_dir(cfg: ExperimentConfig) -> str:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    path = os.path.join(cfg.raw["out_dir"], f"{cfg.digest()}-{stamp}")
    suffix = 0
    while os.path.exists(path if not suffix else f"{path}-{suffix}"):
        suffix += 1
    path = path if not suffix else f"{path}-{suffix}"
    os.makedirs(os.path.join(path, "instances"))
    return path


def _write_json(path: str, data) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
    os.replace(tmp, path)


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise InputError(f"missing {what}: {path}")
    return path


def load_run_config(run_dir: str, metric: str | None = None) -> ExperimentConfig:
    with open(_require(os.path.join(run_dir, "config.json"), "run config")) as fh:
        return ExperimentConfig.from_dict(json.load(fh), metric=metric)


def make_case(cfg: ExperimentConfig, run_dir: str | None = None) -> CaseStudy:
    case = CaseStudy(cfg.case_config(), cfg.n_max)
    if run_dir:
        case.nominal_schedule(os.path.join(run_dir, "nominal.json"))
    return case


def load_pool(run_dir: str, n_max: int) -> al.Pool:
    path = _require(os.path.join(run_dir, "pool.csv"), "pool file (run pool-gen first)")
    entries = []
    seed = 0
    cache: dict[str, ScheduleInstance] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            iid = row["instance_id"]
            if iid not in cache:
                cache[iid] = ScheduleInstance.load(_require(os.path.join(run_dir, "instances", f"{iid}.json"), "instance file"))
            feats = np.array([float(row[k]) for k in row if k.startswith("f") and k[1:].isdigit()])
            entries.append(al.PoolEntry(int(row["sample_id"]), cache[iid], int(row["n_cuts"]), feats))
            seed = int(row["seed"])
    return al.Pool(entries, seed, n_max)


# -- labeling with an optional worker pool -----------------------------------------------

_WORKER: dict = {}


def _worker_init(raw: dict) -> None:
    cfg = ExperimentConfig.from_dict(raw)
    case = CaseStudy(cfg.case_config(), cfg.n_max)
    _WORKER["labeler"] = al.Labeler(case, cfg.metric, cfg.gbd_config())


def _worker_label(job):
    key, inst_json, n = job
    labeler = _WORKER["labeler"]
    inst = ScheduleInstance.from_json(inst_json)
    res = labeler.solve_cost(inst, n)
    return key, res, labeler.details.get((inst.instance_id, n), {})


def label_jobs(cfg: ExperimentConfig, labeler: al.Labeler, jobs: list[tuple], workers: int) -> dict:
    """Label (key, instance, n) jobs; results keyed by job key regardless of completion order."""
    todo = [(k, inst, n) for k, inst, n in jobs if (inst.instance_id, n) not in labeler.cache]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(cfg.raw,)) as ex:
            payload = [(k, inst.to_json(), n) for k, inst, n in todo]
            for (k, inst, n), (_, res, detail) in zip(todo, ex.map(_worker_label, payload)):
                labeler.cache[(inst.instance_id, n)] = res
                if detail:
                    labeler.details[(inst.instance_id, n)] = detail
    return {k: labeler.solve_cost(inst, n) for k, inst, n in jobs}


def preload_labels(labeler: al.Labeler, run_dir: str) -> None:
    path = os.path.join(run_dir, "labels.csv")
    if not os.path.exists(path):
        return
    for s in al.read_labels_csv(path).samples:
        if s.metric == labeler.metric:
            labeler.cache[(s.instance_id, s.n_cuts)] = al.LabelResult(s.label, s.censored, s.error)


# -- commands -------------------------------------------------------------------


def cmd_pool_gen(args) -> int:
    cfg = ExperimentConfig.load(args.config, args.seed, args.metric)
    run_dir = args.run_dir or new_run_dir(cfg)
    os.makedirs(os.path.join(run_dir, "instances"), exist_ok=True)
    _write_json(os.path.join(run_dir, "config.json"), cfg.raw)
    case = make_case(cfg, run_dir)
    p = cfg.raw["pool"]
    pool = al.build_pool(p["seed"], p["n_data"], cfg.n_max, case, p.get("n_feasible"))
    for inst in pool.instances:
        inst.save(os.path.join(run_dir, "instances", f"{inst.instance_id}.json"))
    al.write_pool_csv(pool, os.path.join(run_dir, "pool.csv"), cfg.metric)
    log.info("pool: %d entries from %d feasible instances (%d discarded)", len(pool), len(pool.instances), pool.discarded)
    print(run_dir)
    return 0


def cmd_label(args) -> int:
    run_dir = _require(args.run_dir, "run directory")
    cfg = load_run_config(run_dir, args.metric)
    case = make_case(cfg, run_dir)
    pool = load_pool(run_dir, cfg.n_max)
    labeler = al.Labeler(case, cfg.metric, cfg.gbd_config())
    workers = args.workers or cfg.raw["workers"]
    results = label_jobs(cfg, labeler, [(e.sample_id, e.instance, e.n_cuts) for e in pool.entries], workers)
    labeled = al.LabeledSet()
    for e in pool.entries:
        labeled.add(al._labeled(e, results[e.sample_id], cfg.metric, pool.seed))
    al.write_labels_csv(labeled, os.path.join(run_dir, "labels.csv"))
    log.info("labeled %d entries (%d censored)", len(labeled), labeled.n_censored)
    return 0


def _model_options(cfg: ExperimentConfig, kind: str) -> dict:
    return dict(cfg.raw["learning"].get(kind, {}))


def cmd_train(args) -> int:
    run_dir = _require(args.run_dir, "run directory")
    cfg = load_run_config(run_dir, args.metric)
    if args.strategy == "al" and args.model != "gp":
        raise ConfigError("active learning is driven by the GP; use --model gp with --strategy al")
    case = make_case(cfg, run_dir)
    pool = load_pool(run_dir, cfg.n_max)
    labeler = al.Labeler(case, cfg.metric, cfg.gbd_config())
    preload_labels(labeler, run_dir)
    lrn = cfg.raw["learning"]
    seed = lrn["seed"]
    tag = f"{args.strategy}-{args.model}"
    if args.strategy == "al":
        init = al.initial_labels(pool, lrn["n_initial"], seed, labeler, cfg.metric)
        result = al.al_loop(pool, init, lrn["budget"], labeler, cfg.metric, seed, _model_options(cfg, "gp"))
        model, labeled = result.model, result.labeled
        al.write_trace_csv(result.trace, os.path.join(run_dir, f"trace-{tag}.csv"))
    else:
        labeled = al.random_label_baseline(pool, lrn["n_initial"] + lrn["budget"], seed, labeler, cfg.metric)
        x, y = labeled.xy()
        if len(y) == 0:
            raise InputError("no usable labels for training")
        model = make_model(args.model, seed, **_model_options(cfg, args.model)).fit(x, y)
    al.write_labels_csv(labeled, os.path.join(run_dir, f"labels-{tag}.csv"))
    policy = InitPolicy.for_range(model, cfg.n_max)
    path = os.path.join(run_dir, f"policy-{tag}.json")
    policy.save(path)
    print(path)
    return 0


def cmd_evaluate(args) -> int:
    run_dir = _require(args.run_dir, "run directory")
    cfg = load_run_config(run_dir, args.metric)
    out_rows_path = os.path.join(run_dir, "per_instance.csv")
    report_path = os.path.join(run_dir, "report.csv")
    if args.recompute:
        rows = report.read_instances(_require(out_rows_path, "per-instance results"))
        report.write_report(report.summarize(rows), report_path)
        print(report_path)
        return 0
    policy_paths = args.policy or sorted(glob.glob(os.path.join(run_dir, "policy-*.json")))
    policies = []
    for p in policy_paths:
        name = os.path.basename(p)[len("policy-") : -len(".json")] if os.path.basename(p).startswith("policy-") else p
        policies.append((name, InitPolicy.load(_require(p, "policy file"))))
    case = make_case(cfg, run_dir)
    ev = cfg.raw["evaluate"]
    n_test = args.n_test if args.n_test is not None else ev["n_test"]
    test, discarded = al.draw_instances(case, ev["seed"], max(10 * n_test, n_test + 50), al.TEST_STREAM, n_test, "t")
    if len(test) < n_test:
        log.warning("only %d feasible held-out instances found", len(test))
    os.makedirs(os.path.join(run_dir, "eval-instances"), exist_ok=True)
    for inst in test:
        inst.save(os.path.join(run_dir, "eval-instances", f"{inst.instance_id}.json"))
    labeler = al.Labeler(case, cfg.metric, cfg.gbd_config())
    counts = [0] + list(range(2, cfg.n_max + 1))
    chosen = {(name, inst.instance_id): optimal_cuts(pol, inst) for name, pol in policies for inst in test}
    jobs = [((inst.instance_id, n), inst, n) for inst in test for n in counts]
    label_jobs(cfg, labeler, jobs, args.workers or cfg.raw["workers"])
    rows = []

    def add(strategy, inst, n):
        res = labeler.cache[(inst.instance_id, n)]
        if res.error:
            raise MasterInfeasible(f"{inst.instance_id} n={n}: {res.error}")
        detail = labeler.details.get((inst.instance_id, n), {})
        rows.append(
            {
                "instance_id": inst.instance_id,
                "strategy": strategy,
                "n_cuts": n,
                "cost": res.value,
                "objective": detail.get("objective", math.nan),
                "iterations": detail.get("iterations", ""),
                "oracle_calls": detail.get("oracle_calls", ""),
                "converged": not res.censored,
            }
        )

    for inst in test:
        add(report.BASELINE, inst, 0)
        for name, _ in policies:
            add(name, inst, chosen[(name, inst.instance_id)])
        for n in counts[1:]:
            add(f"n={n}", inst, n)
    report.write_instances(rows, out_rows_path)
    report.write_report(report.summarize(rows), report_path)
    print(report_path)
    return 0


def cmd_solve(args) -> int:
    cfg = ExperimentConfig.load(args.config, args.seed, args.metric)
    inst = ScheduleInstance.load(_require(args.instance, "instance file"))
    case = CaseStudy(cfg.case_config(), cfg.n_max)
    gbd_cfg = cfg.gbd_config()
    gbd_cfg.trace_path = args.trace
    overhead = 0.0
    if args.policy:
        policy = InitPolicy.load(_require(args.policy, "policy file"))
        started = time.perf_counter()
        n = optimal_cuts(policy, inst)
        overhead = time.perf_counter() - started
    else:
        n = args.n_cuts
    if args.dump_lp:
        cuts = select_initial_cuts(case.library, n) if n else {}
        model = case.builder(inst)(cuts).model
        with open(args.dump_lp, "w") as fh:
            fh.write(model.dump())
    result = case.solve(inst, n, gbd_cfg)
    out = {
        "instance_id": inst.instance_id,
        "n_cuts": n,
        "objective": result.ub,
        "lower_bound": result.lb,
        "gap_percent": result.gap_percent,
        "iterations": result.iterations,
        "work_units": result.work_units,
        "wall_seconds": result.wall_seconds,
        "oracle_calls": result.oracle_calls,
        "converged": result.converged,
        "policy_overhead_seconds": overhead,
    }
    print(json.dumps(out, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbdinit", description="Learned initialisation of Benders decomposition")
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override every seed in the config")
    parser.add_argument("--metric", choices=["work", "wall"], help="solve-cost metric")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool-gen", help="sample disturbances and write the unlabeled pool")
    p.add_argument("--run-dir", help="existing directory to write into")
    p.set_defaults(func=cmd_pool_gen)

    p = sub.add_parser("label", help="label every pool entry with a GBD solve")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="fit a surrogate and write a policy file")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--strategy", choices=["al", "random"], default="al")
    p.add_argument("--model", choices=["gp", "dt", "rf", "mlp"], default="gp")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compare policies with no-cuts and fixed counts on held-out disturbances")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--n-test", type=int)
    p.add_argument("--policy", action="append", help="policy file (default: every policy in the run directory)")
    p.add_argument("--workers", type=int)
    p.add_argument("--recompute", action="store_true", help="rebuild report.csv from per_instance.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("--instance", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--n-cuts", type=int, default=0)
    group.add_argument("--policy")
    p.add_argument("--trace", help="write the GBD iteration trace CSV here")
    p.add_argument("--dump-lp", help="write the first master problem in text form here")
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, InputError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
