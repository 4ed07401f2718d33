// Python bindings for the main operations: models, filters, risk solver,
// least-favorable-model simulator and the particle filter baseline.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rspkf/experiments.hpp"
#include "rspkf/lfm.hpp"
#include "rspkf/linear_oracle.hpp"
#include "rspkf/models.hpp"
#include "rspkf/particle.hpp"

namespace py = pybind11;
using namespace rspkf;

namespace {

SigmaRule rule_from_string(const std::string& spec) {
  if (spec == "ukf") return SigmaRule::unscented(0.5, 2.0, 1.0);
  if (spec == "ckf") return SigmaRule::cubature();
  if (spec.rfind("gh:", 0) == 0) return SigmaRule::gauss_hermite(std::stoi(spec.substr(3)));
  throw Error("unknown sigma rule: " + spec);
}

FilterKind kind_from_string(const std::string& name) {
  if (name == "standard") return FilterKind::Standard;
  if (name == "prediction_resilient") return FilterKind::PredictionResilient;
  if (name == "update_resilient") return FilterKind::UpdateResilient;
  if (name == "utf") return FilterKind::Utf;
  throw Error("unknown filter kind: " + name);
}

py::dict trace_to_dict(const FilterTrace& trace) {
  const std::size_t steps = trace.size();
  py::list prior_means, updated_means, predicted_means, predicted_covs, lf_predicted_covs,
      updated_covs, lf_updated_covs, gains;
  Eigen::VectorXd thetas(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    prior_means.append(trace[t].prior_mean);
    updated_means.append(trace[t].updated_mean);
    predicted_means.append(trace[t].predicted_mean);
    predicted_covs.append(trace[t].predicted_cov);
    lf_predicted_covs.append(trace[t].lf_predicted_cov);
    updated_covs.append(trace[t].updated_cov);
    lf_updated_covs.append(trace[t].lf_updated_cov);
    gains.append(trace[t].gain);
    thetas[static_cast<Eigen::Index>(t)] = trace[t].theta;
  }
  py::dict out;
  out["prior_mean"] = prior_means;
  out["updated_mean"] = updated_means;
  out["predicted_mean"] = predicted_means;
  out["predicted_cov"] = predicted_covs;
  out["lf_predicted_cov"] = lf_predicted_covs;
  out["updated_cov"] = updated_covs;
  out["lf_updated_cov"] = lf_updated_covs;
  out["gain"] = gains;
  out["theta"] = thetas;
  return out;
}

}  // namespace

PYBIND11_MODULE(_rspkf, m) {
  m.doc() = "robust sigma-point Kalman filters and the least-favorable-model simulator";

  py::class_<NonlinearStateSpaceModel>(m, "Model")
      .def_property_readonly("state_dim",
                             [](const NonlinearStateSpaceModel& mod) { return mod.state_dim; })
      .def_property_readonly("obs_dim",
                             [](const NonlinearStateSpaceModel& mod) { return mod.obs_dim; })
      .def("f", [](const NonlinearStateSpaceModel& mod,
                   const Eigen::VectorXd& x) { return mod.f(x); })
      .def("h", [](const NonlinearStateSpaceModel& mod,
                   const Eigen::VectorXd& x) { return mod.h(x); });

  m.def("example1_model", &example1_model);
  m.def("worstcase_model", &worstcase_model);
  m.def(
      "mass_spring_model",
      [](double a, double mu_k, double mu_s, double r, double epsilon) {
        MassSpringParams p;
        p.hardening_a = a;
        p.mu_kinetic = mu_k;
        p.mu_static = mu_s;
        p.meas_noise = r;
        p.epsilon = epsilon;
        return mass_spring_model(p);
      },
      py::arg("a") = 0.03, py::arg("mu_k") = 0.6, py::arg("mu_s") = 0.5, py::arg("r") = 1.0,
      py::arg("epsilon") = 1e-8);
  m.def(
      "custom_model",
      [](int n, int m_dim, const std::function<Eigen::VectorXd(Eigen::VectorXd)>& f,
         const std::function<Eigen::VectorXd(Eigen::VectorXd)>& h, const Eigen::MatrixXd& B,
         const Eigen::MatrixXd& D, const Eigen::VectorXd& x0, const Eigen::MatrixXd& P0) {
        return NonlinearStateSpaceModel(
            n, m_dim, [f](const Eigen::VectorXd& x) { return f(x); },
            [h](const Eigen::VectorXd& x) { return h(x); }, B, D, x0, SpdMatrix(P0));
      },
      py::arg("n"), py::arg("m"), py::arg("f"), py::arg("h"), py::arg("B"), py::arg("D"),
      py::arg("x0"), py::arg("P0"));

  m.def(
      "simulate_nominal",
      [](const NonlinearStateSpaceModel& model, int horizon, std::uint64_t seed) {
        const Trajectory traj = simulate_nominal(model, horizon, seed);
        return py::make_tuple(traj.states, traj.observations);
      },
      py::arg("model"), py::arg("horizon"), py::arg("seed"));

  m.def(
      "sigma_points",
      [](const std::string& rule, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
        const SigmaSet set = generate(rule_from_string(rule), {mean, SpdMatrix(cov)});
        return py::make_tuple(set.points, set.mean_weights, set.cov_weights);
      },
      py::arg("rule"), py::arg("mean"), py::arg("cov"));

  m.def(
      "gamma", [](const Eigen::MatrixXd& p, double theta) { return gamma(SpdMatrix(p), theta); },
      py::arg("P"), py::arg("theta"));
  m.def(
      "solve_theta",
      [](const Eigen::MatrixXd& p, double c) {
        return solve_theta(SpdMatrix(p), c, ResilientConfig{});
      },
      py::arg("P"), py::arg("c"));
  m.def(
      "lf_cov",
      [](const Eigen::MatrixXd& p, double theta) {
        return lf_cov(SpdMatrix(p), theta).matrix();
      },
      py::arg("P"), py::arg("theta"));

  m.def(
      "run_filter",
      [](const NonlinearStateSpaceModel& model, const std::string& kind,
         const Eigen::MatrixXd& observations, const std::string& rule, double c) {
        const ResilientConfig cfg = ResilientConfig::constant(rule_from_string(rule), c);
        return trace_to_dict(run_filter(model, kind_from_string(kind), observations, cfg));
      },
      py::arg("model"), py::arg("kind"), py::arg("observations"), py::arg("rule"),
      py::arg("c") = 0.0);

  m.def(
      "mh_sample",
      [](const NonlinearStateSpaceModel& model, const std::string& uncertainty,
         const std::string& rule, double c, int horizon, std::size_t sample_count,
         std::uint64_t seed, int burn_in, int thinning, int r_init, int r_cap, double tau_star) {
        const ResilientConfig cfg = ResilientConfig::constant(rule_from_string(rule), c);
        MHConfig mh;
        mh.seed = seed;
        mh.burn_in = burn_in;
        mh.thinning = thinning;
        mh.r_init = r_init;
        mh.r_cap = r_cap;
        mh.tau_star = tau_star;
        const UncertaintyCase kind = uncertainty == "update" ? UncertaintyCase::Update
                                                             : UncertaintyCase::Prediction;
        const MHResult result = mh_sample(model, cfg, kind, horizon, mh, sample_count);
        py::list states, observations;
        for (const Trajectory& traj : result.samples) {
          states.append(traj.states);
          observations.append(traj.observations);
        }
        py::list log;
        for (const MHProposalRecord& rec : result.acceptance_log) {
          log.append(py::make_tuple(rec.proposal_index, rec.accepted, rec.alpha, rec.r_total));
        }
        py::dict out;
        out["states"] = states;
        out["observations"] = observations;
        out["acceptance_log"] = log;
        out["r_log"] = result.r_log;
        return out;
      },
      py::arg("model"), py::arg("uncertainty"), py::arg("rule"), py::arg("c"),
      py::arg("horizon"), py::arg("sample_count"), py::arg("seed") = 0, py::arg("burn_in") = 200,
      py::arg("thinning") = 1, py::arg("r_init") = 100, py::arg("r_cap") = 4000,
      py::arg("tau_star") = 2e-3);

  m.def(
      "run_pf",
      [](const NonlinearStateSpaceModel& model, const Eigen::MatrixXd& observations,
         int n_particles, std::uint64_t seed) {
        Eigen::MatrixXd predicted, filtered;
        run_pf(model, observations, n_particles, seed, predicted, filtered);
        return py::make_tuple(predicted, filtered);
      },
      py::arg("model"), py::arg("observations"), py::arg("n_particles"), py::arg("seed"));
}
