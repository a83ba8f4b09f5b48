from pathlib import Path

import numpy as np
import pytest

import mixsgd

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def test_epsilons_match_closed_form():
    eps_p, eps_q = mixsgd.compute_epsilons(d=50, n_P=500, n_Q=100, sigma_y=1.0, c0=1.0, tau=0.05)
    log_term = np.log(1.0 / 0.05)
    assert eps_q == pytest.approx((50 + log_term) / 100)
    assert eps_p == pytest.approx((50 + log_term) / 500)


def test_dataset_round_trip_and_bounds():
    X = np.array([[3.0, 4.0], [0.0, 1.0]])
    y = np.array([1.0, -2.0])
    data = mixsgd.LabeledDataset(X, y)
    assert len(data) == 2
    assert data.dim == 2
    assert data.max_feature_norm == pytest.approx(5.0)
    assert data.max_abs_label == 2.0
    np.testing.assert_array_equal(data.X, X)


def test_errors_carry_a_code():
    with pytest.raises(mixsgd.MixSgdError) as info:
        mixsgd.LabeledDataset(np.zeros((2, 2)), np.zeros(3))
    assert info.value.code == "invalid-data"


def test_projection_onto_unit_sphere():
    res = mixsgd.project_quadratic_sublevel(np.array([2.0, 0.0]), np.eye(2), np.zeros(2), -1.0)
    np.testing.assert_allclose(res.theta, [1.0, 0.0], atol=1e-14)
    assert res.mu == pytest.approx(1.0)


def test_mixed_sgd_end_to_end():
    inst = mixsgd.gen_synthetic_regression(d=5, n_P=200, n_Q=40, q_rank=5, seed=3)
    cov_q = mixsgd.empirical_covariance(inst.target.X)
    loss = mixsgd.LossModel.square(inst.target.max_feature_norm, cov_q["lambda_min_plus"])
    cfg = mixsgd.HyperParamConfig()
    cfg.c0 = 0.5
    cfg.T = 5000
    hp = mixsgd.derive_hyperparams(inst.source, inst.target, loss, cfg, 1)
    a = mixsgd.run_mixed_sample_sgd(inst.source, inst.target, loss, hp, 7)
    b = mixsgd.run_mixed_sample_sgd(inst.source, inst.target, loss, hp, 7)
    np.testing.assert_array_equal(a.theta_hat_PQ, b.theta_hat_PQ)
    assert a.constraint_value <= 1e-8
    assert min(a.lambda_trace) >= 0.0
    assert mixsgd.population_excess_risk_q(a.theta_hat_PQ, inst.truth) >= 0.0

    cp = mixsgd.solve_cp_exact(inst.source, inst.target, hp.epsilon_Q, 6.0)
    assert cp.lambda_star >= 0.0
    assert cp.stationarity <= 1e-8


def test_baselines_and_aggregation():
    inst = mixsgd.gen_synthetic_regression(d=4, n_P=100, n_Q=30, q_rank=4, seed=2)
    loss = mixsgd.LossModel.square(1.0, 1.0)
    theta_q = mixsgd.fit_erm(inst.target, loss)
    assert mixsgd.empirical_risk(loss, inst.target, theta_q) <= mixsgd.empirical_risk(
        loss, inst.target, np.zeros(4)
    )
    theta, beta = mixsgd.htl(inst.source, inst.target, loss, seed=5)
    assert theta.shape == (4,)
    assert beta > 0.0
    mean, std, count = mixsgd.aggregate_trials([1.0, 3.0])
    assert (mean, count) == (2.0, 2)
    assert std == pytest.approx(np.sqrt(2.0))


def test_classification_error_rate():
    inst = mixsgd.gen_synthetic_classification(d=3, n_P=200, n_Q=200, margin=2.0, seed=4)
    rate = mixsgd.misclassification_rate(inst.direction, inst.target)
    assert 0.0 <= rate < 0.2


def test_shipped_configs_validate():
    configs = sorted(CONFIG_DIR.glob("*.toml"))
    assert configs
    for path in configs:
        mixsgd.validate_config(path)


def test_run_config_and_plot(tmp_path):
    cfg = tmp_path / "small.toml"
    cfg.write_text(
        "[experiment]\nkind = \"synthetic_regression\"\nmethods = [\"target_erm\", \"source_erm\"]\n"
        "seeds = [1, 2]\n[sweep]\nvariable = \"n_P\"\nvalues = [50, 100]\n[instance]\nd = 5\nn_Q = 20\n"
    )
    csv, failures = mixsgd.run_config(cfg, jobs=2)
    assert failures == []
    lines = csv.strip().splitlines()
    assert lines[0] == "sweep_var,sweep_value,seed,method,metric,value,wall_time_s"
    assert len(lines) == 1 + 2 * 2 * 2
    results = tmp_path / "results.csv"
    results.write_text(csv)
    svg = mixsgd.render_plot_svg(results, "excess_risk_q")
    assert svg.startswith("<svg") or svg.startswith("<?xml")
