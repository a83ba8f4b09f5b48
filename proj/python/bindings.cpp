#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mixsgd/baselines.hpp"
#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/eval.hpp"
#include "mixsgd/experiment.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/plot.hpp"
#include "mixsgd/projection.hpp"
#include "mixsgd/solver.hpp"
#include "mixsgd/spectral.hpp"

namespace py = pybind11;
using namespace mixsgd;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mixed-sample SGD for constrained transfer learning";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::object(py::exception<Error>(m, "MixSgdError", PyExc_RuntimeError)); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object& type = error_type.get_stored();
      py::object exc = type(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(type.ptr(), exc.ptr());
    }
  });

  // Data.
  py::class_<LabeledDataset>(m, "LabeledDataset")
      .def(py::init<RowMatrix, Vector>(), py::arg("X"), py::arg("y"))
      .def_property_readonly("X", &LabeledDataset::X)
      .def_property_readonly("y", &LabeledDataset::y)
      .def_property_readonly("size", &LabeledDataset::size)
      .def_property_readonly("dim", &LabeledDataset::dim)
      .def_property_readonly("max_feature_norm", &LabeledDataset::max_feature_norm)
      .def_property_readonly("max_abs_label", &LabeledDataset::max_abs_label)
      .def("__len__", &LabeledDataset::size);

  py::class_<SyntheticTruth>(m, "SyntheticTruth")
      .def_readonly("sigma_P", &SyntheticTruth::sigma_P)
      .def_readonly("sigma_Q", &SyntheticTruth::sigma_Q)
      .def_readonly("theta_star_P", &SyntheticTruth::theta_star_P)
      .def_readonly("theta_star_Q", &SyntheticTruth::theta_star_Q)
      .def_readonly("sigma_y", &SyntheticTruth::sigma_y)
      .def_readonly("lambda_max_ratio", &SyntheticTruth::lambda_max_ratio)
      .def_readonly("source_target_gap", &SyntheticTruth::source_target_gap);

  py::class_<SyntheticRegression>(m, "SyntheticRegression")
      .def_readonly("source", &SyntheticRegression::source)
      .def_readonly("target", &SyntheticRegression::target)
      .def_readonly("truth", &SyntheticRegression::truth);

  m.def(
      "gen_synthetic_regression",
      [](Index d, Index n_P, Index n_Q, double lambda_max_ratio, double source_target_gap, double sigma_y,
         std::optional<Index> q_rank, std::uint64_t seed) {
        SyntheticRegressionSpec spec;
        spec.d = d;
        spec.n_P = n_P;
        spec.n_Q = n_Q;
        spec.lambda_max_ratio = lambda_max_ratio;
        spec.source_target_gap = source_target_gap;
        spec.sigma_y = sigma_y;
        spec.q_rank = q_rank.value_or(d);
        spec.seed = seed;
        return gen_synthetic_regression(spec);
      },
      py::arg("d") = 50, py::arg("n_P") = 500, py::arg("n_Q") = 100, py::arg("lambda_max_ratio") = 1.0,
      py::arg("source_target_gap") = 0.0, py::arg("sigma_y") = 1.0, py::arg("q_rank") = py::none(),
      py::arg("seed") = 0);

  py::class_<SyntheticClassification>(m, "SyntheticClassification")
      .def_readonly("source", &SyntheticClassification::source)
      .def_readonly("target", &SyntheticClassification::target)
      .def_readonly("direction", &SyntheticClassification::direction);

  m.def(
      "gen_synthetic_classification",
      [](Index d, Index n_P, Index n_Q, double pos_ratio_P, double pos_ratio_Q, double margin, std::uint64_t seed) {
        return gen_synthetic_classification({d, n_P, n_Q, pos_ratio_P, pos_ratio_Q, margin, seed});
      },
      py::arg("d") = 10, py::arg("n_P") = 100, py::arg("n_Q") = 50, py::arg("pos_ratio_P") = 0.5,
      py::arg("pos_ratio_Q") = 0.8, py::arg("margin") = 1.0, py::arg("seed") = 0);

  m.def(
      "load_csv",
      [](const std::filesystem::path& path, const std::vector<std::string>& features, const std::string& label,
         bool standardize) { return load_csv(path, features, label, standardize).data; },
      py::arg("path"), py::arg("features"), py::arg("label"), py::arg("standardize") = false);

  // Spectral helpers.
  m.def(
      "empirical_covariance",
      [](const RowMatrix& X) {
        const auto c = empirical_covariance(X);
        py::dict out;
        out["sigma_hat"] = c.sigma_hat;
        out["eigenvalues"] = c.eigenvalues;
        out["lambda_max"] = c.lambda_max;
        out["lambda_min_plus"] = c.lambda_min_plus;
        out["kappa"] = c.kappa;
        out["rank"] = c.rank();
        return out;
      },
      py::arg("X"));
  m.def("min_norm_erm", [](const RowMatrix& X, const Vector& y) { return min_norm_erm(X, y); }, py::arg("X"),
        py::arg("y"));
  m.def("quad_form", &quad_form, py::arg("v"), py::arg("sigma"));

  // Losses.
  py::enum_<LossKind>(m, "LossKind")
      .value("square", LossKind::square)
      .value("logistic", LossKind::logistic)
      .value("hinge", LossKind::hinge)
      .value("weighted_hinge", LossKind::weighted_hinge);

  py::class_<LossModel>(m, "LossModel")
      .def_readonly("kind", &LossModel::kind)
      .def_readonly("m1", &LossModel::m1)
      .def_readonly("m2", &LossModel::m2)
      .def_readonly("weight", &LossModel::weight)
      .def_static("square", &LossModel::square, py::arg("max_feature_norm"), py::arg("lambda_min_plus"))
      .def_static("logistic", &LossModel::logistic, py::arg("max_feature_norm"), py::arg("ball_radius"))
      .def_static("hinge", &LossModel::hinge, py::arg("max_feature_norm"))
      .def_static("weighted_hinge", &LossModel::weighted_hinge, py::arg("max_feature_norm"),
                  py::arg("positive_weight"));

  m.def("loss_value", [](const LossModel& l, const Vector& t, const Vector& x, double y) { return loss_value(l, t, x, y); },
        py::arg("loss"), py::arg("theta"), py::arg("x"), py::arg("y"));
  m.def("loss_grad", [](const LossModel& l, const Vector& t, const Vector& x, double y) { return loss_grad(l, t, x, y); },
        py::arg("loss"), py::arg("theta"), py::arg("x"), py::arg("y"));
  m.def("empirical_risk",
        [](const LossModel& l, const LabeledDataset& d, const Vector& t) { return empirical_risk(l, d, t); },
        py::arg("loss"), py::arg("data"), py::arg("theta"));

  // Projection.
  py::class_<ProjectionResult>(m, "ProjectionResult")
      .def_readonly("theta", &ProjectionResult::theta)
      .def_readonly("mu", &ProjectionResult::mu)
      .def_readonly("constraint_value", &ProjectionResult::constraint_value)
      .def_readonly("stationarity", &ProjectionResult::stationarity)
      .def_readonly("complementarity", &ProjectionResult::complementarity);
  m.def(
      "project_quadratic_sublevel",
      [](const Vector& theta_bar, const Matrix& A, const Vector& b, double c) {
        return project_quadratic_sublevel(theta_bar, QuadraticConstraint{A, b, c});
      },
      py::arg("theta_bar"), py::arg("A"), py::arg("b"), py::arg("c"));
  m.def("project_l2_ball", [](const Vector& t, double r) { return project_l2_ball(t, r); }, py::arg("theta"),
        py::arg("radius"));

  // Solver.
  py::enum_<SolverMode>(m, "SolverMode").value("square", SolverMode::square).value("general", SolverMode::general);
  py::enum_<StepsizePolicy>(m, "StepsizePolicy")
      .value("theory", StepsizePolicy::theory)
      .value("stable", StepsizePolicy::stable);

  m.def(
      "compute_epsilons",
      [](Index d, Index n_P, Index n_Q, double sigma_y, double c0, double tau) {
        const auto e = compute_epsilons(d, n_P, n_Q, sigma_y, c0, tau);
        return py::make_tuple(e.P, e.Q);
      },
      py::arg("d"), py::arg("n_P"), py::arg("n_Q"), py::arg("sigma_y") = 1.0, py::arg("c0") = 1.0,
      py::arg("tau") = 0.05);

  py::class_<HyperParamConfig>(m, "HyperParamConfig")
      .def(py::init<>())
      .def_readwrite("mode", &HyperParamConfig::mode)
      .def_readwrite("policy", &HyperParamConfig::policy)
      .def_readwrite("c0", &HyperParamConfig::c0)
      .def_readwrite("tau", &HyperParamConfig::tau)
      .def_readwrite("sigma_y", &HyperParamConfig::sigma_y)
      .def_readwrite("T", &HyperParamConfig::T)
      .def_readwrite("epsilon_Q", &HyperParamConfig::epsilon_Q)
      .def_readwrite("lambda_slack_mult", &HyperParamConfig::lambda_slack_mult)
      .def_readwrite("proj_slack_mult", &HyperParamConfig::proj_slack_mult)
      .def_readwrite("c_eta", &HyperParamConfig::c_eta)
      .def_readwrite("stable_reference_T", &HyperParamConfig::stable_reference_T)
      .def_readwrite("gamma_multiplier", &HyperParamConfig::gamma_multiplier)
      .def_readwrite("lambda_star_hat", &HyperParamConfig::lambda_star_hat)
      .def_readwrite("ridge_fallback", &HyperParamConfig::ridge_fallback)
      .def_readwrite("theta_ball_radius", &HyperParamConfig::theta_ball_radius);

  py::class_<HyperParams>(m, "HyperParams")
      .def_readonly("mode", &HyperParams::mode)
      .def_readonly("epsilon_Q", &HyperParams::epsilon_Q)
      .def_readonly("epsilon_P", &HyperParams::epsilon_P)
      .def_readonly("sigma_y", &HyperParams::sigma_y)
      .def_readonly("T", &HyperParams::T)
      .def_readonly("c_eta", &HyperParams::c_eta)
      .def_readonly("eta", &HyperParams::eta)
      .def_readonly("gamma", &HyperParams::gamma)
      .def_readonly("lambda_slack", &HyperParams::lambda_slack)
      .def_readonly("proj_slack", &HyperParams::proj_slack)
      .def_readonly("rho", &HyperParams::rho)
      .def_readonly("g_theta_hat", &HyperParams::g_theta_hat)
      .def_readonly("g_lambda_hat", &HyperParams::g_lambda_hat)
      .def_readonly("lambda_star_hat", &HyperParams::lambda_star_hat);

  m.def("derive_hyperparams", &derive_hyperparams, py::arg("S_P"), py::arg("S_Q"), py::arg("loss"),
        py::arg("config") = HyperParamConfig{}, py::arg("seed") = 0);

  py::class_<TransferSolution>(m, "TransferSolution")
      .def_readonly("theta_hat_PQ", &TransferSolution::theta_hat_PQ)
      .def_readonly("theta_Q_final", &TransferSolution::theta_Q_final)
      .def_readonly("theta_bar", &TransferSolution::theta_bar)
      .def_readonly("lambda_trace", &TransferSolution::lambda_trace)
      .def_readonly("lambda_final", &TransferSolution::lambda_final)
      .def_readonly("source_fraction", &TransferSolution::source_fraction)
      .def_readonly("constraint_value", &TransferSolution::constraint_value)
      .def_readonly("wall_time", &TransferSolution::wall_time);

  m.def(
      "run_mixed_sample_sgd",
      [](const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& loss, const HyperParams& hp,
         std::uint64_t seed) {
        py::gil_scoped_release release;
        return run_mixed_sample_sgd(S_P, S_Q, loss, hp, seed);
      },
      py::arg("S_P"), py::arg("S_Q"), py::arg("loss"), py::arg("hp"), py::arg("seed") = 0);

  py::class_<CpSolution>(m, "CpSolution")
      .def_readonly("lambda_star", &CpSolution::lambda_star)
      .def_readonly("theta", &CpSolution::theta)
      .def_readonly("objective", &CpSolution::objective)
      .def_readonly("stationarity", &CpSolution::stationarity)
      .def_readonly("complementarity", &CpSolution::complementarity);
  m.def("solve_cp_exact", &solve_cp_exact, py::arg("S_P"), py::arg("S_Q"), py::arg("epsilon_Q"),
        py::arg("slack_mult") = 6.0);

  // Baselines.
  m.def(
      "fit_erm",
      [](const LabeledDataset& d, const LossModel& l, double ball_radius) {
        ErmOptions opt;
        opt.ball_radius = ball_radius;
        return fit_erm(d, l, opt);
      },
      py::arg("data"), py::arg("loss"), py::arg("ball_radius") = std::numeric_limits<double>::infinity());
  m.def(
      "htl",
      [](const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& l, std::vector<double> grid, int folds,
         std::uint64_t seed) {
        const auto r = htl(S_P, S_Q, l, grid.empty() ? default_beta_grid() : grid, folds, seed);
        return py::make_tuple(r.theta, r.chosen_beta);
      },
      py::arg("S_P"), py::arg("S_Q"), py::arg("loss"), py::arg("beta_grid") = std::vector<double>{},
      py::arg("folds") = 5, py::arg("seed") = 0);
  m.def(
      "psgd",
      [](const LabeledDataset& S_P, const LabeledDataset& S_Q, const LossModel& l, const HyperParams& hp,
         std::uint64_t seed) { return psgd(S_P, S_Q, l, hp, seed).theta; },
      py::arg("S_P"), py::arg("S_Q"), py::arg("loss"), py::arg("hp"), py::arg("seed") = 0);

  // Evaluation.
  m.def("population_excess_risk_q",
        [](const Vector& t, const SyntheticTruth& truth) { return population_excess_risk_q(t, truth); },
        py::arg("theta"), py::arg("truth"));
  m.def("misclassification_rate",
        [](const Vector& t, const LabeledDataset& test) { return misclassification_rate(t, test); }, py::arg("theta"),
        py::arg("test"));
  m.def(
      "aggregate_trials",
      [](const std::vector<double>& v) {
        const auto s = aggregate_trials(v);
        return py::make_tuple(s.mean, s.std, s.count);
      },
      py::arg("values"));

  // Experiments.
  m.def(
      "run_config",
      [](const std::filesystem::path& path, int jobs) {
        const auto cfg = load_experiment_config(path);
        validate_experiment_config(cfg);
        ExperimentResults res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg, jobs);
        }
        py::list failures;
        for (const auto& f : res.failures) failures.append(py::make_tuple(f.sweep_value, f.seed, f.method, f.message));
        return py::make_tuple(results_csv_text(res.rows), failures);
      },
      py::arg("path"), py::arg("jobs") = 1,
      "Runs a TOML experiment; returns (results CSV text, list of failed cells).");
  m.def("validate_config",
        [](const std::filesystem::path& path) { validate_experiment_config(load_experiment_config(path)); },
        py::arg("path"));
  m.def(
      "render_plot_svg",
      [](const std::filesystem::path& results, const std::string& metric) {
        return render_plot_svg(read_results_csv(results), metric);
      },
      py::arg("results_csv"), py::arg("metric"));
}
