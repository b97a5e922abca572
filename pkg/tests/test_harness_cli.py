import json
import shutil

import numpy as np
import pytest
import yaml

from nudgeflow.assimilation import thresholds
from nudgeflow.cli import main
from nudgeflow.config import ConfigError, config_from_dict, config_hash
from nudgeflow.fields import read_snapshot
from nudgeflow.harness import (
    ENV_OUT,
    ExperimentPlan,
    RunSummary,
    certify,
    plan_from_dict,
    plan_to_dict,
    read_series_csv,
    read_summary_csv,
    simulate,
    sweep,
)
from nudgeflow.interpolants import InterpolantSpec, Kind, Order

SMALL = {
    "grid": {"n": 32},
    "forcing": {"grashof": 50},
    "interpolant": {"kind": "low_modes", "h": 0.5},
    "mu": 3.0,
    "c0": 1.0,
    "spinup": 0.2,
    "T": 0.3,
    "stepper": {"dt": 0.002},
    "sample_stride": 5,
    "checkpoint_stride": 10,
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return p


def test_simulate_writes_the_run_directory(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert str(out) in capsys.readouterr().out
    for name in ("config.json", "thresholds.json", "series.csv", "series.json", "monitors.jsonl", "summary.json"):
        assert (out / name).is_file(), name
    cfg = config_from_dict(SMALL)
    doc = json.loads((out / "config.json").read_text())
    assert doc["config_hash"] == config_hash(cfg)
    th = json.loads((out / "thresholds.json").read_text())
    assert {"configured", "calibrated"} <= th.keys()
    data = read_series_csv(out / "series.csv")
    assert data["t"][0] == 0 and data["t"][-1] == pytest.approx(0.3)
    assert (out / "series.csv").read_text().startswith("# schema_version: 1\n")
    mons = [json.loads(x) for x in (out / "monitors.jsonl").read_text().splitlines()]
    assert mons[0]["t"] == pytest.approx(-0.2) and not mons[0]["post_spinup"]
    s = RunSummary.from_dict(json.loads((out / "summary.json").read_text()))
    assert s.status == "ok" and s.config_hash == config_hash(cfg)
    snaps = sorted((out / "checkpoints").glob("truth_*.snap"))
    # 31 samples, every 10th checkpointed; the final save reuses the t = 0.3 name
    assert len(snaps) == 4
    fld, t, meta = read_snapshot(snaps[-1])
    assert t == pytest.approx(0.3) and meta["role"] == "truth" and meta["config_hash"] == config_hash(cfg)


def test_simulate_is_byte_reproducible(tmp_path, cfg_file):
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()
    assert (tmp_path / "a" / "summary.json").read_text().split('"wall_time"')[0] == (
        tmp_path / "b" / "summary.json"
    ).read_text().split('"wall_time"')[0]


def test_seed_flag_changes_the_truth(tmp_path, cfg_file):
    main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / "b"), "--seed", "7"])
    assert (tmp_path / "a" / "series.csv").read_bytes() != (tmp_path / "b" / "series.csv").read_bytes()


def test_constraint_violation_writes_nothing(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({**SMALL, "mu": 50.0}))
    out = tmp_path / "never"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 3
    assert "mu*c0*h^2" in capsys.readouterr().err
    assert not out.exists()
    assert main(["simulate", "--config", str(p), "--out", str(out), "--override-constraints"]) == 0


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"grid": {"n": 33}}))
    assert main(["simulate", "--config", str(p)]) == 3
    assert "grid.n" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 6


def test_solver_failure_exit_code(tmp_path):
    p = tmp_path / "unstable.yaml"
    p.write_text(yaml.safe_dump({**SMALL, "forcing": {"grashof": 1e6}, "stepper": {"dt": 0.05, "cfl_check_stride": 1}, "T": 1.0, "spinup": 0.5}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "r")]) == 4


def test_output_root_from_environment(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "root"))
    assert main(["simulate", "--config", str(cfg_file)]) == 0
    runs = list((tmp_path / "root").glob("run-*"))
    assert len(runs) == 1 and (runs[0] / "series.csv").exists()


def test_plot(tmp_path, cfg_file):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["plot", str(empty)]) == 6
    assert list(empty.iterdir()) == []
    assert main(["plot", str(tmp_path / "nowhere")]) == 6
    out = tmp_path / "run"
    main(["simulate", "--config", str(cfg_file), "--out", str(out)])
    assert main(["plot", str(out)]) == 0
    assert (out / "plots" / "decay.png").stat().st_size > 0
    dat = np.loadtxt(out / "plots" / "decay.dat")
    assert dat.shape[1] == 5


# ---------------------------------------------------------------------------
# Sweeps


def _plan_doc(tmp_path, **kw):
    doc = {"base": SMALL, "sweep": {"mu": [1.0, 3.0], "grashof": [20, 50]}, "seed": 4, **kw}
    p = tmp_path / "plan.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p, doc


def test_plan_cells_and_seeds(tmp_path):
    _, doc = _plan_doc(tmp_path, repetitions=2)
    plan = plan_from_dict(doc)
    cells = plan.cells()
    assert len(cells) == 8
    seeds = [p["seed"] for _, p, _ in cells]
    assert len(set(seeds)) == 8
    assert seeds == [p["seed"] for _, p, _ in plan_from_dict(doc).cells()]
    assert plan_from_dict(plan_to_dict(plan)) == plan
    assert cells[0][2].forcing.grashof == 20 and cells[0][2].mu == 1.0


@pytest.mark.parametrize(
    "doc,path",
    [
        ({"sweep": {"nu": [1]}}, "sweep.nu"),
        ({"sweep": {"mu": []}}, "sweep.mu"),
        ({"sweep": {"kind": ["fourier"]}}, "sweep.kind"),
        ({"sweep": {"h": [0]}}, "sweep.h"),
        ({"repetitions": 0}, "repetitions"),
        ({"base": {"mu": -1}}, "base.mu"),
        ({"extra": 1}, "extra"),
        ({"sweep": {"mu": list(range(20)), "h": list(range(1, 20))}, "cap": 100}, "sweep"),
    ],
)
def test_plan_validation(doc, path):
    with pytest.raises(ConfigError) as e:
        plan_from_dict(doc)
    assert e.value.path == path


def test_sweep_resume_and_failure_isolation(tmp_path, capsys):
    p, _ = _plan_doc(tmp_path)
    doc = yaml.safe_load(p.read_text())
    doc["sweep"]["mu"] = [1.0, 3.0, 50.0]  # 50 violates mu c0 h^2 <= nu
    p.write_text(yaml.safe_dump(doc))
    out = tmp_path / "sw"
    assert main(["sweep", "--plan", str(p), "--out", str(out)]) == 0
    assert "computed=6 cached=0 failed=2" in capsys.readouterr().out
    rows = read_summary_csv(out / "summary.csv")
    assert len(rows) == 6
    failed = [r for r in rows if r["status"] == "failed"]
    assert {r["error_class"] for r in failed} == {"ConstraintError"}
    assert all(r["mu"] == "50.0" and r["mu_in_window"] == "False" for r in failed)
    before = (out / "summary.csv").read_text()

    assert main(["sweep", "--plan", str(p), "--out", str(out)]) == 0
    assert "computed=0 cached=6" in capsys.readouterr().out
    assert (out / "summary.csv").read_text() == before

    victim = sorted((out / "cells").iterdir())[0]
    shutil.rmtree(victim)
    assert main(["sweep", "--plan", str(p), "--out", str(out)]) == 0
    assert "computed=1 cached=5" in capsys.readouterr().out
    strip = lambda text: [ln.rsplit(",", 1)[0] for ln in text.splitlines()]  # noqa: E731
    assert strip((out / "summary.csv").read_text()) == strip(before)

    assert main(["plot", str(out)]) == 0
    assert (out / "plots" / "rate_vs_mu_h0.5.png").exists()


def test_parallel_sweep_matches_serial(tmp_path):
    _, doc = _plan_doc(tmp_path)
    plan = plan_from_dict(doc)
    a = sweep(plan, tmp_path / "serial", workers=1)
    b = sweep(plan, tmp_path / "parallel", workers=2)
    assert a.computed == b.computed == 4
    key = lambda r: (r.cell_index, r.config_hash, r.fitted_rate, r.decay_orders)  # noqa: E731
    assert [key(r) for r in a.summaries] == [key(r) for r in b.summaries]


def test_one_cell_plan_equals_simulate(tmp_path):
    plan = plan_from_dict({"base": SMALL})
    (_, _, cfg), = plan.cells()
    res = sweep(plan, tmp_path / "sw")
    assert res.computed == 1 and len(read_summary_csv(tmp_path / "sw" / "summary.csv")) == 1
    simulate(cfg, tmp_path / "single")
    cell = tmp_path / "sw" / "cells" / config_hash(cfg)[:16]
    assert (cell / "series.csv").read_bytes() == (tmp_path / "single" / "series.csv").read_bytes()


def test_mu_ladder_flips_the_window_flag_at_the_wellposed_bound(tmp_path):
    cfg = config_from_dict(SMALL)
    ceiling = thresholds(1.0, cfg.nu, 1.0, 1.0, cfg.c, h=0.5, mu=1.0).wellposed_bound
    ladder = [0.5 * ceiling, 0.99 * ceiling, 1.01 * ceiling, 2 * ceiling]
    plan = plan_from_dict({"base": {**SMALL, "T": 0.1}, "sweep": {"mu": ladder}})
    rows = read_summary_csv(sweep(plan, tmp_path / "sw").directory / "summary.csv")
    assert [r["mu_in_window"] for r in rows] == ["True", "True", "False", "False"]
    assert [r["status"] for r in rows] == ["ok", "ok", "failed", "failed"]


def test_plan_cap(tmp_path):
    plan = ExperimentPlan(base=config_from_dict(SMALL), mu=tuple(range(10)), h=(0.5, 0.6), cap=5)
    with pytest.raises(ConfigError):
        plan.cells()


# ---------------------------------------------------------------------------
# Certificates, thresholds, defaults


def test_certify_command(tmp_path, capsys):
    args = ["certify", "--kind", "volume_elements", "--h", "1.0", "--n", "16", "--probes", "100", "--out", str(tmp_path)]
    assert main(args + ["--validate", "100"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["cached"] is False and doc["validation"]["ok"]
    assert doc["certificate"]["order"] == "H1"
    assert main(args) == 0
    assert json.loads(capsys.readouterr().out)["cached"] is True
    assert main(args[:-4] + ["--probes", "50", "--out", str(tmp_path)]) == 3


def test_certify_defaults_nodes_to_h2(tmp_path):
    doc, cached = certify(InterpolantSpec(Kind.NODES, 1.0), _grid16(), Order.H2, 100, 0, tmp_path)
    assert not cached and doc["certificate"]["order"] == "H2"
    again, cached = certify(InterpolantSpec(Kind.NODES, 1.0), _grid16(), Order.H2, 100, 0, tmp_path)
    assert cached and again == doc


def _grid16():
    from nudgeflow.fields import GridSpec

    return GridSpec(2 * np.pi, 16)


def test_thresholds_command(capsys):
    assert main(["thresholds", "--G", "10", "--json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["mu_dirichlet"] == 500 and f"{d['J']:.4g}" == "20.57"
    assert main(["thresholds", "--G", "10", "--h", "0.03", "--mu", "700"]) == 0
    assert "mu_in_window" in capsys.readouterr().out
    assert main(["thresholds", "--G", "-1"]) == 3


def test_defaults_command(capsys):
    assert main(["defaults"]) == 0
    out = capsys.readouterr().out
    assert config_from_dict(yaml.safe_load(out)) == config_from_dict({})


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["simulate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_simulate_api_returns_result(tmp_path):
    out, res = simulate(config_from_dict(SMALL), tmp_path / "x")
    assert out == tmp_path / "x"
    assert res.series.t[-1] == pytest.approx(0.3)
