"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``verdict`` fixture; the lines
are repeated in the terminal summary.  The learning criteria share a single
seeded experiment (pool of 300 feasible instances, GP active learning, 100
held-out disturbances) which is also the timed run for the trend check.
"""

import json
import math
import time

import numpy as np
import pytest
from oracles import RandomMilp, SyntheticGbd

from gbdinit import active_learning as al
from gbdinit.bench.cli import main
from gbdinit.bench.config import ExperimentConfig
from gbdinit.cstr.case import CaseStudy, instance_features
from gbdinit.cstr.master import hat_key
from gbdinit.gbd import GbdConfig, NonConvexValueFunction, build_cut_library, convexity_audit, run_gbd
from gbdinit.lp_milp import solve_milp
from gbdinit.policy import InitPolicy, optimal_cuts
from gbdinit.surrogates import DecisionTree, GaussianProcess, matern_from_distance, matern_general

pytestmark = pytest.mark.slow

COUNTS = [0, 2, 3, 4, 5, 6]


@pytest.fixture(scope="module")
def case():
    return CaseStudy()


@pytest.fixture(scope="module")
def experiment():
    cfg = ExperimentConfig.from_dict()
    lrn = cfg.raw["learning"]
    started = time.perf_counter()
    case = CaseStudy(cfg.case_config(), cfg.n_max)
    pool = al.build_pool(cfg.raw["pool"]["seed"], cfg.raw["pool"]["n_data"], cfg.n_max, case, 300)
    labeler = al.Labeler(case, "work", cfg.gbd_config())
    init = al.initial_labels(pool, lrn["n_initial"], lrn["seed"], labeler)
    result = al.al_loop(pool, init, lrn["budget"], labeler, "work", lrn["seed"], lrn["gp"])
    policy = InitPolicy.for_range(result.model, cfg.n_max)
    test, _ = al.draw_instances(case, cfg.raw["evaluate"]["seed"], 1000, al.TEST_STREAM, 100, "t")
    chosen = {inst.instance_id: optimal_cuts(policy, inst) for inst in test}
    for inst in test:
        for n in COUNTS:
            labeler.solve_cost(inst, n)
    elapsed = time.perf_counter() - started
    return {
        "cfg": cfg,
        "case": case,
        "pool": pool,
        "labeler": labeler,
        "result": result,
        "policy": policy,
        "test": test,
        "chosen": chosen,
        "elapsed": elapsed,
    }


def _cost(exp, inst, n):
    return exp["labeler"].cache[(inst.instance_id, n)].value


def test_01_solver_correctness(verdict):
    started = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        prob = RandomMilp(seed)
        ours = solve_milp(prob.model()).objective
        ref = prob.enumerate()
        worst = max(worst, abs(ours - ref) / max(1.0, abs(ref)))
    elapsed = time.perf_counter() - started
    verdict(1, "MILP matches enumeration", worst <= 1e-6 and elapsed < 60, f"max rel err {worst:.2e}, {elapsed:.1f} s")


def test_02_gbd_equivalence(verdict):
    worst, monotone = 0.0, True
    for seed in range(20):
        prob = SyntheticGbd(seed)
        res = run_gbd(prob.builder, prob.oracles, {}, GbdConfig(tol=1e-5, max_iterations=500))
        ref = prob.brute_force()
        worst = max(worst, abs(res.ub - ref) / abs(ref))
        lbs = [lb for lb, _ in res.trace]
        ubs = [ub for _, ub in res.trace]
        monotone &= all(b >= a for a, b in zip(lbs, lbs[1:])) and all(b <= a for a, b in zip(ubs, ubs[1:]))
    verdict(2, "GBD matches grid/enumeration oracle", worst <= 1e-4 and monotone, f"max rel err {worst:.2e}, monotone={monotone}")


def _min_slack(library, oracles, points=50):
    worst = math.inf
    for cut in library.all_cuts():
        o = oracles[cut.key]
        for theta in np.linspace(o.lb, o.ub, points):
            worst = min(worst, o.evaluate(float(theta))[0] - cut(float(theta)))
    return worst


def test_03_cut_validity(verdict, case):
    slacks = [_min_slack(case.library, case.pair_oracles)]
    test, _ = al.draw_instances(case, 0, 100, al.TEST_STREAM, 5, "t")
    for inst in test:
        hats = {k: o for k, o in case.instance_oracles(inst).items() if k[0] == hat_key(0)[0]}
        if hats:
            slacks.append(_min_slack(build_cut_library(hats, case.n_max), hats))
    for seed in range(20):
        prob = SyntheticGbd(seed)
        slacks.append(_min_slack(build_cut_library(prob.oracles, 6), prob.oracles))
    try:
        for o in case.pair_oracles.values():
            convexity_audit(o, 50)
        audit = True
    except NonConvexValueFunction:
        audit = False
    verdict(3, "cuts under-estimate phi; convexity audit passes", min(slacks) >= -1e-6 and audit, f"min slack {min(slacks):.2e} over {len(slacks)} libraries")


def test_04_initialization_invariance(verdict, experiment):
    tol = experiment["cfg"].gbd_config().tol / 100.0
    details = experiment["labeler"].details
    worst = 0.0
    for inst in experiment["test"][:20]:
        objs = [details[(inst.instance_id, n)]["objective"] for n in COUNTS]
        worst = max(worst, (max(objs) - min(objs)) / abs(min(objs)))
    verdict(4, "objective independent of initial cuts", worst <= 2 * tol, f"max rel spread {worst:.2e} (limit {2 * tol:.0e})")


def test_05_multiplier_fidelity(verdict, case):
    rng = np.random.default_rng(5)
    h = 1e-4
    worst = 0.0
    for key, o in case.pair_oracles.items():
        for theta in rng.uniform(o.lb + h, o.ub - h, 20):
            lam = o.evaluate(float(theta))[1]
            fd = -(o.evaluate(float(theta + h))[0] - o.evaluate(float(theta - h))[0]) / (2 * h)
            worst = max(worst, abs(lam - fd) / abs(fd))
    verdict(5, "multipliers match central differences", worst <= 1e-3, f"max rel err {worst:.2e}")


def test_06_gp_units(verdict):
    rng = np.random.default_rng(6)
    kernel_err = 0.0
    for _ in range(100):
        d, ell, nu = rng.uniform(0, 5), rng.uniform(0.1, 3.0), float(rng.choice([0.5, 1.5, 2.5]))
        kernel_err = max(kernel_err, abs(matern_from_distance(d, ell, 1.3, nu) - matern_general(d, ell, 1.3, nu)))
    x = rng.uniform(-2, 2, (25, 3))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 1] ** 2 - x[:, 2]
    interp_err = np.abs(GaussianProcess(noise_free=True).fit(x, y).predict(x) - y).max()
    decreases = True
    for seed in range(10):
        sub = np.random.default_rng(60 + seed)
        xs = sub.uniform(-2, 2, (12, 3))
        ys = np.sin(xs[:, 0]) + xs[:, 1] * xs[:, 2]
        new = sub.uniform(-2, 2, (1, 3))
        before = GaussianProcess(noise_free=True, seed=seed).fit(xs, ys).predict_std(new)[0]
        y_new = np.sin(new[0, 0]) + new[0, 1] * new[0, 2]
        after = GaussianProcess(noise_free=True, seed=seed).fit(np.vstack([xs, new]), np.append(ys, y_new)).predict_std(new)[0]
        decreases &= after < before
    ok = kernel_err <= 1e-6 and interp_err <= 1e-6 and decreases
    verdict(6, "GP kernel, interpolation and variance reduction", ok, f"kernel {kernel_err:.1e}, interp {interp_err:.1e}, std drops={decreases}")


def test_07_trend_reproduction(verdict, experiment):
    test = experiment["test"]
    nc = np.mean([_cost(experiment, i, 0) for i in test])
    learned = np.mean([_cost(experiment, i, experiment["chosen"][i.instance_id]) for i in test])
    ok = len(test) == 100 and learned <= 0.7 * nc and experiment["elapsed"] < 15 * 60
    detail = f"learned/NC = {learned / nc:.3f}, pipeline {experiment['elapsed']:.0f} s"
    verdict(7, "learned policy cuts mean work to <= 0.7x no-cuts", ok, detail)


def test_08_never_worse(verdict, experiment):
    ratios = []
    for inst in experiment["test"]:
        ratios.append(_cost(experiment, inst, experiment["chosen"][inst.instance_id]) / _cost(experiment, inst, 0))
    worse = [r for r in ratios if r > 1.0]
    ok = len(worse) <= 5 and max(ratios) <= 1.05
    verdict(8, "learned policy rarely and only mildly worse than no cuts", ok, f"{len(worse)} worse, max ratio {max(ratios):.3f}")


def _heldout(exp):
    x, y = [], []
    for inst in exp["test"]:
        for n in COUNTS[1:]:
            res = exp["labeler"].cache[(inst.instance_id, n)]
            if math.isfinite(res.value) and not res.censored:
                x.append(instance_features(inst, n))
                y.append(res.value)
    return np.array(x), np.array(y)


def test_09_al_beats_random(verdict, experiment):
    labeler = experiment["labeler"]
    gp_opts = experiment["cfg"].raw["learning"]["gp"]
    pool = al.pool_from_instances(experiment["pool"].instances[:100], experiment["cfg"].n_max)
    x_test, y_test = _heldout(experiment)

    def rmse(model):
        return float(np.sqrt(np.mean((model.predict(x_test) - y_test) ** 2)))

    wins = []
    for seed in range(10):
        init = al.initial_labels(pool, 10, seed, labeler)
        active = al.al_loop(pool, init, 100, labeler, "work", seed, gp_opts).model
        rx, ry = al.random_label_baseline(pool, 110, seed, labeler).xy()
        passive = GaussianProcess(**{**gp_opts, "seed": seed}).fit(rx, ry)
        wins.append(rmse(active) <= rmse(passive))
    verdict(9, "AL GP at least as accurate as random GP", sum(wins) >= 6, f"AL wins {sum(wins)}/10")


def test_10_policy_overhead(verdict, experiment):
    x, y = experiment["result"].labeled.xy()
    policies = {"gp": experiment["policy"], "dt": InitPolicy.for_range(DecisionTree().fit(x, y), experiment["cfg"].n_max)}
    worst = 0.0
    for policy in policies.values():
        for inst in experiment["test"]:
            started = time.perf_counter()
            optimal_cuts(policy, inst)
            worst = max(worst, time.perf_counter() - started)
    verdict(10, "optimal_cuts under 0.1 s per instance", worst < 0.1, f"max {worst * 1e3:.2f} ms")


TINY = {
    "pool": {"n_data": 40, "n_feasible": 3},
    "learning": {"n_initial": 3, "budget": 4, "gp": {"restarts": 2, "evals": 15}},
    "evaluate": {"n_test": 2},
    "n_max": 4,
}


def _pipeline(base):
    base.mkdir()
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    run = str(base / "run")
    steps = [
        ["--config", str(cfg), "--metric", "work", "pool-gen", "--run-dir", run],
        ["label", "--run-dir", run],
        ["train", "--run-dir", run, "--strategy", "al", "--model", "gp"],
        ["evaluate", "--run-dir", run],
    ]
    assert all(main(s) == 0 for s in steps)
    names = ["pool.csv", "labels.csv", "labels-al-gp.csv", "trace-al-gp.csv", "per_instance.csv", "report.csv"]
    return {name: (base / "run" / name).read_bytes() for name in names}


def test_11_determinism(verdict, tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    differing = [name for name in a if a[name] != b[name]]
    verdict(11, "pipeline outputs byte-identical across runs", not differing, f"differing: {differing or 'none'}")
