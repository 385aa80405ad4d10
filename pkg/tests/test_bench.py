import csv
import json
import os

import pytest

from gbdinit.bench import report
from gbdinit.bench.cli import main
from gbdinit.bench.config import ConfigError, ExperimentConfig
from gbdinit.cstr.case import CaseStudy, ScheduleInstance

TINY = {
    "pool": {"n_data": 40, "n_feasible": 3},
    "learning": {"n_initial": 3, "budget": 4, "gp": {"restarts": 2, "evals": 15}, "mlp": {"epochs": 10}, "rf": {"n_trees": 5}},
    "evaluate": {"n_test": 2},
    "n_max": 4,
}


# -- config ---------------------------------------------------------------


def test_defaults_validate():
    cfg = ExperimentConfig.from_dict()
    assert cfg.metric == "work" and cfg.n_max == 6
    assert cfg.gbd_config().tol == 0.1
    assert cfg.raw["learning"]["budget"] == 100 and cfg.raw["learning"]["n_initial"] == 10


def test_seed_and_metric_overrides():
    cfg = ExperimentConfig.from_dict({}, seed=7, metric="wall")
    assert cfg.raw["pool"]["seed"] == cfg.raw["learning"]["seed"] == cfg.raw["evaluate"]["seed"] == 7
    assert cfg.metric == "wall"


@pytest.mark.parametrize(
    "bad",
    [
        {"nonsense": 1},
        {"pool": {"size": 3}},
        {"metric": "seconds"},
        {"n_max": 1},
        {"learning": {"budget": 0}},
        {"learning": {"n_initial": 1}},
        {"solver": {"tol": -1}},
        {"case": {"n_products": 3, "bogus": 1}},
        {"pool": 5},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_digest_ignores_execution_settings():
    a = ExperimentConfig.from_dict({"workers": 1, "out_dir": "a"})
    b = ExperimentConfig.from_dict({"workers": 4, "out_dir": "b"})
    c = ExperimentConfig.from_dict({"n_max": 5})
    assert a.digest() == b.digest() != c.digest()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(tmp_path / "missing.json"))
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(str(path))


# -- report ----------------------------------------------------------------


def _rows():
    rows = []
    for iid, nc, learned in (("a", 100.0, 50.0), ("b", 200.0, 250.0)):
        rows.append({"instance_id": iid, "strategy": "NC", "cost": nc})
        rows.append({"instance_id": iid, "strategy": "al-gp", "cost": learned})
    return rows


def test_summary_pairs_instances():
    summary = {r["strategy"]: r for r in report.summarize(_rows())}
    gp = summary["al-gp"]
    assert gp["avg_cost"] == 150.0
    assert gp["avg_red_pct"] == pytest.approx((50.0 - 25.0) / 2)
    assert gp["avg_fold"] == pytest.approx((2.0 + 0.8) / 2)
    assert (gp["max_red_pct"], gp["min_red_pct"]) == (50.0, -25.0)
    assert (gp["max_fold"], gp["min_fold"]) == (2.0, 0.8)
    nc = summary["NC"]
    assert nc["avg_red_pct"] == 0.0 and nc["avg_fold"] == 1.0


def test_summary_requires_pairs():
    with pytest.raises(ValueError):
        report.summarize(_rows()[:3])
    with pytest.raises(ValueError):
        report.summarize([r for r in _rows() if r["strategy"] != "NC"])


def test_report_roundtrip(tmp_path):
    summary = report.summarize(_rows())
    path = tmp_path / "report.csv"
    report.write_report(summary, str(path))
    assert report.read_report(str(path)) == summary
    assert path.read_text().splitlines()[0] == ",".join(report.REPORT_HEADER)


# -- command line -----------------------------------------------------------------


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "out_dir": str(base / "runs")}))
    assert main(["--config", str(cfg), "pool-gen"]) == 0
    (path,) = os.listdir(base / "runs")
    return str(base / "runs" / path), str(cfg)


def test_pool_gen_layout(run_dir):
    path, cfg = run_dir
    digest = ExperimentConfig.load(cfg).digest()
    assert os.path.basename(path).startswith(digest + "-")
    files = set(os.listdir(path))
    assert {"config.json", "nominal.json", "pool.csv", "instances"} <= files
    assert len(os.listdir(os.path.join(path, "instances"))) == 3
    with open(os.path.join(path, "pool.csv")) as fh:
        assert len(list(csv.DictReader(fh))) == 3 * 3


def test_label_train_evaluate(run_dir):
    path, _ = run_dir
    assert main(["label", "--run-dir", path]) == 0
    assert main(["train", "--run-dir", path, "--strategy", "al", "--model", "gp"]) == 0
    for model in ("dt", "rf", "mlp"):
        assert main(["train", "--run-dir", path, "--strategy", "random", "--model", model]) == 0
    assert main(["evaluate", "--run-dir", path]) == 0
    summary = report.read_report(os.path.join(path, "report.csv"))
    names = [r["strategy"] for r in summary]
    assert names[0] == "NC" and {"al-gp", "random-dt", "random-rf", "random-mlp", "n=2", "n=4"} <= set(names)
    with open(os.path.join(path, "trace-al-gp.csv")) as fh:
        assert len(list(csv.DictReader(fh))) == TINY["learning"]["budget"]
    before = open(os.path.join(path, "report.csv"), "rb").read()
    assert main(["evaluate", "--run-dir", path, "--recompute"]) == 0
    assert open(os.path.join(path, "report.csv"), "rb").read() == before
    rows = report.read_instances(os.path.join(path, "per_instance.csv"))
    assert len(rows) == 2 * len(names)


def test_solve_command(run_dir, tmp_path, capsys):
    path, cfg = run_dir
    inst = os.path.join(path, "instances", sorted(os.listdir(os.path.join(path, "instances")))[0])
    trace, lp = tmp_path / "t.csv", tmp_path / "m.lp"
    assert main(["--config", cfg, "solve", "--instance", inst, "--n-cuts", "3", "--trace", str(trace), "--dump-lp", str(lp)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["converged"] and out["n_cuts"] == 3
    assert trace.read_text().startswith("iteration,LB,UB")
    assert "lazy" in lp.read_text()


def test_exit_codes(run_dir, tmp_path):
    path, cfg = run_dir
    assert main(["train", "--run-dir", path, "--strategy", "al", "--model", "dt"]) == 1
    assert main(["label", "--run-dir", str(tmp_path / "nowhere")]) == 1
    assert main(["--config", str(tmp_path / "missing.json"), "pool-gen"]) == 1
    case = CaseStudy()
    data = case.nominal_instance().to_json()
    data.update({"t0": 40.0, "demands": [5000.0, 5000.0, 5000.0], "instance_id": "bad"})
    bad = tmp_path / "bad.json"
    ScheduleInstance.from_json(data).save(str(bad))
    assert main(["solve", "--instance", str(bad)]) == 2
