import json

import numpy as np
import pytest

from rehmc.bench import (
    ConfigError,
    ExperimentConfig,
    NumericalFailure,
    build_target,
    run_experiment,
    run_recycle_count_sweep,
    run_reference_chain,
    run_tuning_comparison,
    write_experiment_outputs,
)
from rehmc.cli import main


def _tiny_config(**overrides):
    base = dict(
        target={"kind": "gaussian-iid", "dim": 2},
        algorithm="hmc",
        arms=[
            {"name": "plain", "recycle": "none"},
            {"name": "recycled", "recycle": {"mode": "traversed"}},
        ],
        n_chains=3,
        n_iterations=120,
        burn_in=20,
        eps=0.6,
        path_steps={"kind": "fixed", "steps": 4},
        statistics=["mean", "variance"],
        seed=42,
    )
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


def test_config_round_trip():
    config = _tiny_config()
    again = ExperimentConfig.from_dict(config.to_dict())
    assert again == config


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"target": {"kind": "gaussian-iid", "dim": 1}, "nope": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"n_chains": 4})


def test_config_json_file_round_trip(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(_tiny_config().to_dict()))
    assert ExperimentConfig.from_json_file(str(path)) == _tiny_config()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json_file(str(tmp_path / "missing.json"))


def test_validate_rejects_degenerate_setups():
    with pytest.raises(ConfigError):
        _tiny_config(n_chains=1).validate()
    with pytest.raises(ConfigError):
        _tiny_config(algorithm="gibbs").validate()
    with pytest.raises(ConfigError):
        _tiny_config(arms=[{"name": "a"}, {"name": "a"}]).validate()
    with pytest.raises(ConfigError):
        _tiny_config(algorithm="calderhead",
                     path_steps={"kind": "uniform", "low": 2, "high": 5}).validate()
    with pytest.raises(ConfigError):
        _tiny_config(statistics=["median"]).validate()
    with pytest.raises(ConfigError):
        _tiny_config(params=[5]).validate()
    with pytest.raises(ConfigError):
        _tiny_config(burn_in=120).validate()


def test_build_target_kinds():
    target, truth, theta0 = build_target({"kind": "gaussian-scaled", "dim": 3})
    assert target.dim == 3
    assert truth.variance[2] == 9.0
    assert np.array_equal(theta0, np.zeros(3))
    target, truth, theta0 = build_target({"kind": "log-gamma", "shape": 4.0, "rate": 2.0})
    assert target.dim == 1
    assert theta0[0] == np.log(2.0)
    with pytest.raises(ConfigError):
        build_target({"kind": "dirichlet"})


def test_truthless_target_needs_reference_runner(tmp_path):
    csv = tmp_path / "toy.csv"
    rows = ["1,0.5,1.2", "0,-0.3,0.8", "1,0.1,-0.4", "0,-1.0,0.2"]
    csv.write_text("\n".join(rows) + "\n")
    config = _tiny_config(target={"kind": "logistic", "csv": str(csv)})
    with pytest.raises(ConfigError):
        config.validate()
    config.validate(require_truth=False)


def test_run_experiment_cell_grid_and_ratios():
    config = _tiny_config()
    result = run_experiment(config)
    # full grid: 2 params x 2 statistics x 2 arms
    assert len(result.cells) == 8
    for j in range(2):
        for stat in ["mean", "variance"]:
            base = result.cell(j, stat, "plain")
            assert base.ess_ratio == 1.0
            assert base.log2_ratio == 0.0
            other = result.cell(j, stat, "recycled")
            assert other.ess > 0
            assert other.mse > 0
    assert result.n_kept["plain"] == 100
    assert set(result.divergence_rates) == {"plain", "recycled"}


def test_identical_arms_tie_exactly():
    config = _tiny_config(
        arms=[{"name": "a", "recycle": "none"}, {"name": "b", "recycle": "none"}]
    )
    result = run_experiment(config)
    for c in result.cells:
        assert c.log2_ratio == 0.0


def test_outputs_byte_identical_across_runs(tmp_path):
    config = _tiny_config()
    paths = []
    for tag in ("one", "two"):
        result = run_experiment(config)
        csv_path, json_path = write_experiment_outputs(result, str(tmp_path / tag))
        paths.append((csv_path, json_path))
    (csv1, json1), (csv2, json2) = paths
    assert open(csv1, "rb").read() == open(csv2, "rb").read()
    assert open(json1, "rb").read() == open(json2, "rb").read()
    header = open(csv1).readline().strip()
    assert header == "param_index,statistic,arm,mse,ess,ess_ratio,log2_ratio"


def test_seed_changes_outputs(tmp_path):
    r1 = run_experiment(_tiny_config())
    r2 = run_experiment(_tiny_config(seed=43))
    m1 = [c.mse for c in r1.cells]
    m2 = [c.mse for c in r2.cells]
    assert m1 != m2


def test_divergence_gate_raises():
    config = _tiny_config(
        target={"kind": "log-gamma", "shape": 2.0, "rate": 1.0},
        eps=60.0,
        n_chains=2,
        n_iterations=60,
        burn_in=10,
        statistics=["mean"],
    )
    with pytest.raises(NumericalFailure):
        run_experiment(config)


def test_grad_budget_truncates_chains():
    config = _tiny_config(grad_budget=260)
    result = run_experiment(config)
    # 4 steps/iteration: the budget stops chains well short of 120 iterations
    assert result.n_kept["plain"] < 100


def test_recycle_sweep_orders_arms():
    config = _tiny_config(
        algorithm="nuts",
        path_steps=None,
        eps=0.7,
        arms=[],
        n_iterations=150,
        statistics=["mean"],
    )
    sweep = run_recycle_count_sweep(config, ks=(2, 1))
    names = [a["name"] for a in sweep.experiment.config.arms]
    assert names == ["k2", "k1", "all-acceptable"]
    assert sweep.reference_arm == "all-acceptable"
    with pytest.raises(ConfigError):
        run_recycle_count_sweep(_tiny_config(), ks=(2, 1))


def test_reference_chain_smoke():
    config = _tiny_config(arms=[{"name": "ref", "recycle": "none"}])
    ref = run_reference_chain(config)
    assert ref.n_kept == 100
    assert len(ref.mean) == 2
    assert len(ref.autocorr_time) == 2
    assert all(t >= 1.0 for t in ref.autocorr_time)


def test_tuning_comparison_smoke():
    config = _tiny_config(
        target={"kind": "gaussian-iid", "dim": 2},
        n_chains=2,
        n_adapt=30,
        n_iterations=80,
        burn_in=10,
        eps=None,
        statistics=["mean"],
    )
    out = run_tuning_comparison(config)
    assert out.n_pairs == 2
    assert len(out.scores_standard) == 2
    assert len(out.scores_recycled) == 2
    assert 0 <= out.wins <= 2
    assert out.win_fraction == out.wins / 2


def test_tuning_comparison_zero_adapt_is_exact_tie():
    config = _tiny_config(
        target={"kind": "gaussian-iid", "dim": 2},
        n_chains=2,
        n_adapt=0,
        n_iterations=80,
        burn_in=10,
        eps=None,
        statistics=["mean"],
    )
    out = run_tuning_comparison(config, eval_chains=2)
    assert out.scores_recycled == out.scores_standard
    assert out.wins == 0


def _write_config(tmp_path, config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config.to_dict()))
    return str(path)


def test_cli_bench_exit_zero(tmp_path, capsys):
    path = _write_config(tmp_path, _tiny_config())
    out = str(tmp_path / "result")
    assert main(["bench", "--config", path, "--out", out]) == 0
    assert (tmp_path / "result.csv").exists()
    assert (tmp_path / "result.json").exists()
    assert "plain" in capsys.readouterr().out


def test_cli_config_error_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"target": {"kind": "gaussian-iid", "dim": 1}, "oops": True}))
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["bench", "--config", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "x")]) == 2


def test_cli_numerical_failure_exit_three(tmp_path, capsys):
    config = _tiny_config(
        target={"kind": "log-gamma", "shape": 2.0, "rate": 1.0},
        eps=60.0,
        n_chains=2,
        n_iterations=60,
        burn_in=10,
        statistics=["mean"],
    )
    path = _write_config(tmp_path, config)
    assert main(["bench", "--config", path, "--out", str(tmp_path / "y")]) == 3


def test_cli_seed_override_changes_csv(tmp_path, capsys):
    path = _write_config(tmp_path, _tiny_config())
    main(["bench", "--config", path, "--out", str(tmp_path / "a")])
    main(["bench", "--config", path, "--seed", "7", "--out", str(tmp_path / "b")])
    main(["bench", "--config", path, "--seed", "42", "--out", str(tmp_path / "c")])
    a = (tmp_path / "a.csv").read_bytes()
    b = (tmp_path / "b.csv").read_bytes()
    c = (tmp_path / "c.csv").read_bytes()
    assert a != b
    assert a == c  # explicit seed equal to the config seed is a no-op


def test_cli_sample_writes_npz(tmp_path, capsys):
    path = _write_config(tmp_path, _tiny_config())
    out = str(tmp_path / "draws")
    assert main(["sample", "--config", path, "--out", out, "--arm", "1"]) == 0
    with np.load(out + ".npz") as data:
        assert data["states"].shape == (100, 2)
        assert len(data["recycled_weights"]) > 0


def test_cli_reference_writes_json(tmp_path, capsys):
    path = _write_config(tmp_path, _tiny_config())
    out = str(tmp_path / "ref")
    assert main(["reference", "--config", path, "--out", out]) == 0
    payload = json.loads((tmp_path / "ref.json").read_text())
    assert payload["n_kept"] == 100
    assert len(payload["mean"]) == 2
