import json
import os

import numpy as np
import pytest

from distqn.errors import ConfigError, SolverError
from distqn.harness import experiment as ex
from distqn.harness.cli import main
from distqn.harness.oracles import exact_solution, penalty_solution, relative_error
from distqn.penalty import PenaltyModel, phi_gradient
from distqn.problems import QuadraticProblem
from distqn.trace import CSV_HEADER, Trace

from conftest import instance, two_node


def _small(name="small", solvers=None, max_iter=40, **problem):
    doc = {
        "name": name,
        "graph": {"n": 8, "seed": 3},
        "problem": {"kind": "quadratic", "p": 2, "seed": 3, **problem},
        "solvers": solvers or [{"name": "DQN-0", "variant": "DQN0"},
                               {"name": "DQN-2", "variant": "DQN2"}],
        "budget": {"max_iter": max_iter},
    }
    return ex.ExperimentConfig.from_dict(doc)


# -- oracles ---------------------------------------------------------------


def test_exact_solution_examples(rng):
    problem, _ = two_node()
    assert exact_solution(problem)[0] == pytest.approx(2.0, rel=1e-15)
    a = np.tile([1.5, -2.0], (4, 1))
    B = np.stack([np.diag(rng.uniform(1, 5, 2)) for _ in range(4)])
    same = QuadraticProblem(B, a, np.stack([np.diag(b) for b in B]))
    np.testing.assert_allclose(exact_solution(same), [1.5, -2.0], atol=1e-14)
    logi, _ = instance(10, 3, 1, "logistic")
    y = exact_solution(logi)
    assert np.linalg.norm(logi.total(y)[1]) <= 1e-10


def test_penalty_solution_examples():
    problem, weights = two_node()
    np.testing.assert_allclose(penalty_solution(PenaltyModel(problem, weights, 0.1)),
                               [[5 / 3], [13 / 6]], atol=1e-13)
    x_small = penalty_solution(PenaltyModel(problem, weights, 1e-6))
    assert np.abs(x_small - 2.0).max() <= 1e-4
    # on a random instance the gap shrinks linearly with alpha
    quad, w = instance(10, 3, 2)
    y = exact_solution(quad)
    gaps = [np.abs(penalty_solution(PenaltyModel(quad, w, a)) - y).max() for a in (1e-5, 1e-6, 1e-7)]
    assert gaps[0] / gaps[1] == pytest.approx(10, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(10, rel=0.05)
    logi, w = instance(10, 3, 2, "logistic")
    model = PenaltyModel(logi, w, 0.05)
    assert np.linalg.norm(phi_gradient(model, penalty_solution(model))) <= 1e-9


def test_relative_error_examples():
    assert relative_error(np.zeros((2, 1)), [2.0]) == 1.0
    y = np.array([1.0, 2.0])
    X = np.array([[1.0, 2.0], [1.0, 2.0]])
    assert relative_error(X, y) == 0.0
    D = np.array([[0.3, -0.1], [0.0, 0.5]])
    assert relative_error(y + 2 * D, y) == pytest.approx(2 * relative_error(y + D, y), rel=1e-14)
    with pytest.raises(ValueError):
        relative_error(X, [0.0, 0.0])


# -- configuration -----------------------------------------------------------


def test_parse_grid():
    np.testing.assert_allclose(ex.parse_grid("log:-4:4:0.5"), 10.0 ** np.arange(-4, 4.01, 0.5))
    np.testing.assert_array_equal(ex.parse_grid("lin:0:1:0.25"), [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(ex.parse_grid("1,10, 100"), [1, 10, 100])
    for bad in ("log:1:0:1", "cube:0:1:1", "a,b", "log:0:1:0"):
        with pytest.raises(ConfigError):
            ex.parse_grid(bad)


@pytest.mark.parametrize("change", [
    {"solvers": []},
    {"solvers": [{"variant": "DQN0"}]},
    {"solvers": [{"name": "a", "variant": "DQN0"}, {"name": "a", "variant": "DQN2"}]},
    {"solvers": [{"name": "a", "variant": "DQN0", "beta": 1.0}]},
    {"solvers": [{"name": "a", "variant": "DQN7"}]},
    {"solvers": [{"name": "a"}]},
    {"graph": {"n": 1, "seed": 0}},
    {"problem": {"kind": "logistic", "p": 1}},
    {"problem": {"kind": "cubic"}},
    {"format": "something/else"},
])
def test_invalid_configs_are_rejected(change):
    doc = _small().to_dict()
    doc.update(change)
    with pytest.raises(ConfigError):
        ex.ExperimentConfig.from_dict(doc)


def test_config_round_trip(tmp_path):
    cfg = ex.preset("fig3", max_iter=12)
    path = tmp_path / "cfg.json"
    ex.save_config(path, cfg)
    back = ex.load_config(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.budget.max_iter == 12


def test_presets_cover_the_figures():
    assert sorted(ex.PRESETS) == ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6"]
    dims = {name: (ex.preset(name).graph.n, ex.preset(name).problem.kind, ex.preset(name).problem.p)
            for name in ex.PRESETS}
    assert dims["fig1"] == (30, "quadratic", 4)
    assert dims["fig2"] == (400, "quadratic", 3)
    assert dims["fig3"] == (30, "logistic", 4)
    assert dims["fig4"] == (200, "logistic", 4)
    assert dims["fig5"][0] == dims["fig6"][0] == 30
    with pytest.raises(ConfigError):
        ex.preset("fig9")


# -- running -----------------------------------------------------------------


def test_seven_csvs_and_byte_identical_reruns(tmp_path):
    cfg = ex.preset("fig1", max_iter=30)
    ex.run_experiment(cfg, tmp_path / "a")
    ex.run_experiment(cfg, tmp_path / "b")
    csvs = sorted(f for f in os.listdir(tmp_path / "a") if f.endswith(".csv"))
    assert len(csvs) == 7
    for f in csvs + ["manifest.json"]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    header = (tmp_path / "a" / "DQN-1.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_HEADER)


def test_manifest_contents_and_replay(tmp_path):
    cfg = _small(solvers=[{"name": "DQN-1", "variant": "DQN1"},
                          {"name": "PMM", "variant": "PMM2", "beta": "sweep", "beta_grid": "1,10"}])
    result = ex.run_experiment(cfg, tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["format"] == ex.MANIFEST_FORMAT
    assert manifest["graph"]["effective_seed"] >= manifest["graph"]["requested_seed"]
    rec = {r["name"]: r for r in manifest["solvers"]}
    for key in ("mu", "L", "mu_tilde", "L_tilde", "rho", "epsilon", "gamma", "t", "h_alpha", "xi"):
        assert key in rec["DQN-1"]["derived"]
    assert [s["beta"] for s in rec["PMM"]["sweep"]] == [1.0, 10.0]
    assert rec["PMM"]["beta"] in (1.0, 10.0)
    assert main(["run", "--config", str(tmp_path / "a" / "manifest.json"),
                 "--out", str(tmp_path / "b")]) == 0
    for name in ("DQN-1.csv", "PMM.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    tr = Trace.read_csv(tmp_path / "a" / "DQN-1.csv")
    assert tr.rel_err == result.trace("DQN-1").rel_err
    assert all(b >= a for a, b in zip(tr.comms, tr.comms[1:]))


def test_serialized_network_and_problem_replay():
    cfg = _small()
    inst = ex.build_instance(cfg)
    doc = cfg.to_dict()
    doc["graph"]["network"] = ex.network_snapshot(inst)
    doc["problem"]["data"] = inst.problem.to_dict()
    doc["graph"]["seed"] = 999
    doc["problem"]["seed"] = 999
    a = ex.run_experiment(cfg)
    b = ex.run_experiment(ex.ExperimentConfig.from_dict(json.loads(json.dumps(doc))))
    for name in a.outcomes:
        assert a.trace(name).rel_err == b.trace(name).rel_err


def test_solver_errors_carry_the_solver_name():
    cfg = _small(solvers=[{"name": "bad-eps", "variant": "DQN0", "epsilon": -1.0}])
    with pytest.raises(SolverError) as info:
        ex.run_experiment(cfg)
    assert info.value.solver == "bad-eps"
    assert "bad-eps" in str(info.value)


def test_divergence_needs_opt_in():
    spec = {"name": "DGD-big", "variant": "DGD", "alpha": 10.0}
    with pytest.raises(SolverError, match="DGD-big"):
        ex.run_experiment(_small(solvers=[spec], max_iter=500))
    result = ex.run_experiment(_small(solvers=[{**spec, "allow_divergence": True}], max_iter=500))
    out = result.outcomes["DGD-big"]
    assert out.status == "diverged" and "divergence" in out.record


def test_theoretical_mode_and_rho_options():
    cfg = _small(solvers=[{"name": "theory", "variant": "DQN2", "mode": "theoretical"},
                          {"name": "auto", "variant": "DQN1", "rho": "auto"},
                          {"name": "fixed", "variant": "DQN2", "rho": 0.5, "alpha": 0.01}])
    inst = ex.build_instance(cfg)
    theory = ex.resolve_dqn(cfg.solvers[0], inst, cfg.budget)
    assert theory.delta > 0 and 0 < theory.epsilon < 1
    auto = ex.resolve_dqn(cfg.solvers[1], inst, cfg.budget)
    assert auto.rho == pytest.approx(
        ex.dqn.safeguard_rho(auto.alpha, inst.mu, inst.L, inst.weights.w_min, inst.weights.w_max, 0, 0))
    fixed = ex.resolve_dqn(cfg.solvers[2], inst, cfg.budget)
    assert fixed.rho == 0.5 and fixed.alpha == 0.01
    with pytest.raises(ConfigError):
        ex.resolve_dqn({"name": "x", "variant": "DQN0", "mode": "lazy"}, inst, cfg.budget)


def test_penalty_floor_and_pmm_exactness_small():
    cfg = _small(solvers=[{"name": "DQN-2", "variant": "DQN2"},
                          {"name": "PMM", "variant": "PMM2", "beta": 100.0, "dual_beta_scaling": True}],
                 max_iter=3000)
    result = ex.run_experiment(cfg)
    floor = ex.oracle_report(cfg)["penalty"][0]["floor_rel_err"]
    dqn_err = result.trace("DQN-2").final_rel_err
    assert dqn_err == pytest.approx(floor, rel=1e-3)
    assert result.trace("PMM").final_rel_err <= 1e-8 < floor


# -- command line ------------------------------------------------------------


def test_cli_preset_and_run(tmp_path, capsys):
    cfg_path = tmp_path / "fig1.json"
    assert main(["preset", "--name", "fig1", "--out", str(cfg_path), "--config-only"]) == 0
    assert ex.load_config(cfg_path).name == "fig1"
    assert main(["preset", "--name", "fig1", "--out", str(tmp_path / "p"), "--max-iter", "5"]) == 0
    out = capsys.readouterr().out
    assert "DQN-2" in out and "NN-1" in out
    assert len([f for f in os.listdir(tmp_path / "p") if f.endswith(".csv")]) == 7
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r"), "--max-iter", "3"]) == 0
    tr = Trace.read_csv(tmp_path / "r" / "DGD.csv")
    assert tr.k == [0, 1, 2, 3]


def test_cli_oracle_prints_json(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    ex.save_config(path, _small())
    assert main(["oracle", "--config", str(path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["y_star"]) == 2
    assert set(report["solvers"]) == {"DQN-0", "DQN-2"}
    assert report["penalty"][0]["floor_rel_err"] > 0


def test_cli_sweep(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    ex.save_config(path, _small(max_iter=60))
    out_csv = tmp_path / "sweep.csv"
    assert main(["sweep", "--param", "beta", "--grid", "log:0:2:1", "--config", str(path),
                 "--variant", "PMM0", "--out", str(out_csv)]) == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "beta,final_rel_err,iterations,status" and len(lines) == 4
    assert "best beta" in capsys.readouterr().out


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["oracle", "--config", str(bad)]) == 2
    path = tmp_path / "cfg.json"
    ex.save_config(path, _small())
    assert main(["sweep", "--param", "alpha", "--config", str(path)]) == 2
    assert main(["run", "--config", str(path)]) == 2
    assert "error" in capsys.readouterr().err.lower()
