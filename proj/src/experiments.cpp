#include "rspkf/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace rspkf {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string c_label(double c) { return "c=" + format_double(c); }

std::string np_label(int np) { return "Np=" + std::to_string(np); }

bool filter_selected(const ExperimentConfig& cfg, const std::string& label) {
  if (cfg.filters.empty()) return true;
  return std::find(cfg.filters.begin(), cfg.filters.end(), label) != cfg.filters.end();
}

void accumulate_sq_err(const Trajectory& truth, const FilterTrace& trace, bool use_updated,
                       std::vector<double>& sums) {
  for (std::size_t i = 0; i < sums.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    const Eigen::VectorXd& est =
        use_updated ? trace[static_cast<std::size_t>(t)].updated_mean
                    : trace[static_cast<std::size_t>(t)].prior_mean;
    sums[i] += (truth.states.col(t) - est).squaredNorm();
  }
}

MseSeries finalize_series(std::string filter, std::string param, std::vector<double> sums,
                          int trials) {
  MseSeries s;
  s.filter = std::move(filter);
  s.param = std::move(param);
  s.per_time = std::move(sums);
  for (double& v : s.per_time) v /= static_cast<double>(trials);
  double total = 0.0;
  for (double v : s.per_time) total += v;
  s.overall = total / static_cast<double>(s.per_time.size());
  return s;
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
  std::ofstream out(std::filesystem::path(dir) / name);
  if (!out) throw IoError("cannot write " + name + " in " + dir);
  return out;
}

nlohmann::json config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["experiment"] = cfg.kind_name();
  j["trials"] = cfg.trials;
  j["horizon"] = cfg.horizon;
  j["tolerances"] = cfg.tolerances;
  std::vector<std::string> rules;
  for (const SigmaRule& r : cfg.rules) rules.push_back(rule_label(r));
  j["rules"] = rules;
  j["pf_particles"] = cfg.pf_particles;
  j["seed"] = cfg.seed;
  j["full_scale"] = cfg.full_scale;
  j["mh"] = {{"r_init", cfg.mh.r_init},     {"r_cap", cfg.mh.r_cap},
             {"tau_star", cfg.mh.tau_star}, {"burn_in", cfg.mh.burn_in},
             {"thinning", cfg.mh.thinning}, {"max_proposals", cfg.mh.max_proposals}};
  return j;
}

void write_mse_files(const MseReport& report, const std::string& dir) {
  {
    std::ofstream out = open_out(dir, "mse_by_time.csv");
    out << "t";
    for (const MseSeries& s : report.series) {
      out << "," << s.filter;
      if (!s.param.empty()) out << "(" << s.param << ")";
    }
    out << "\n";
    const std::size_t steps = report.series.empty() ? 0 : report.series.front().per_time.size();
    for (std::size_t i = 0; i < steps; ++i) {
      out << (i + 1);
      for (const MseSeries& s : report.series) out << "," << format_double(s.per_time[i]);
      out << "\n";
    }
  }
  {
    std::ofstream out = open_out(dir, "mse_long.csv");
    out << "filter,param,t,mse\n";
    for (const MseSeries& s : report.series) {
      for (std::size_t i = 0; i < s.per_time.size(); ++i) {
        out << s.filter << "," << s.param << "," << (i + 1) << ","
            << format_double(s.per_time[i]) << "\n";
      }
    }
  }
  {
    std::ofstream out = open_out(dir, "mse_overall.csv");
    out << "filter,param,overall_mse\n";
    for (const MseSeries& s : report.series) {
      out << s.filter << "," << s.param << "," << format_double(s.overall) << "\n";
    }
  }
}

}  // namespace

std::string rule_label(const SigmaRule& rule) {
  switch (rule.kind) {
    case SigmaRule::Kind::Unscented:
      return "UKF";
    case SigmaRule::Kind::Cubature:
      return "CKF";
    case SigmaRule::Kind::GaussHermite:
      return "GH" + std::to_string(rule.order);
  }
  return "?";
}

ExperimentConfig::Kind ExperimentConfig::parse_kind(const std::string& name) {
  if (name == "worstcase") return Kind::Worstcase;
  if (name == "mass_spring_measurement_dominant") return Kind::MassSpringMeasurementDominant;
  if (name == "mass_spring_balanced") return Kind::MassSpringBalanced;
  throw Error("unknown experiment: " + name);
}

const char* ExperimentConfig::kind_name() const {
  switch (experiment) {
    case Kind::Worstcase:
      return "worstcase";
    case Kind::MassSpringMeasurementDominant:
      return "mass_spring_measurement_dominant";
    case Kind::MassSpringBalanced:
      return "mass_spring_balanced";
  }
  return "?";
}

ExperimentConfig ExperimentConfig::defaults(Kind kind) {
  ExperimentConfig cfg;
  cfg.experiment = kind;
  cfg.rules = {SigmaRule::unscented(0.5, 2.0, 1.0), SigmaRule::cubature()};
  cfg.horizon = 50;
  switch (kind) {
    case Kind::Worstcase:
      cfg.trials = 100;
      cfg.tolerances = {1e-3};
      break;
    case Kind::MassSpringMeasurementDominant:
      cfg.trials = 200;
      cfg.tolerances = {0.0, 1e-4, 1e-3, 1e-2, 0.03, 0.05, 0.1};
      cfg.pf_particles = {100, 1000, 20000};
      break;
    case Kind::MassSpringBalanced:
      cfg.trials = 200;
      cfg.tolerances = {0.0, 1e-4, 1e-2, 0.1, 0.2, 0.3, 0.5};
      cfg.pf_particles = {100, 1000, 20000};
      break;
  }
  return cfg;
}

const MseSeries* MseReport::find(const std::string& filter, const std::string& param) const {
  for (const MseSeries& s : series) {
    if (s.filter == filter && s.param == param) return &s;
  }
  return nullptr;
}

WorstcaseResult run_worstcase(const ExperimentConfig& cfg) {
  if (cfg.experiment != ExperimentConfig::Kind::Worstcase) {
    throw Error("run_worstcase: wrong experiment kind");
  }
  const NonlinearStateSpaceModel model = worstcase_model();
  const int trials = cfg.full_scale ? 500 : cfg.trials;
  const double c = cfg.tolerances.empty() ? 1e-3 : cfg.tolerances.front();

  WorstcaseResult result;
  int dataset_index = 0;
  for (UncertaintyCase kind : {UncertaintyCase::Prediction, UncertaintyCase::Update}) {
    for (const SigmaRule& rule : cfg.rules) {
      WorstcaseResult::Dataset ds;
      ds.kind = kind;
      ds.name = (kind == UncertaintyCase::Prediction ? "P-" : "U-") + rule_label(rule);

      MHConfig mh = cfg.mh;
      mh.seed = derive_seed(cfg.seed, 100, static_cast<std::uint64_t>(dataset_index));
      const ResilientConfig sim_cfg = ResilientConfig::constant(rule, c);
      MHResult chain = mh_sample(model, sim_cfg, kind, cfg.horizon, mh,
                                 static_cast<std::size_t>(trials));
      ds.acceptance_log = std::move(chain.acceptance_log);
      ds.r_log = std::move(chain.r_log);
      ds.samples = std::move(chain.samples);

      // score every filter on this dataset
      struct Evaluated {
        std::string label;
        FilterKind kind;
        ResilientConfig cfg;
      };
      std::vector<Evaluated> filters;
      for (const SigmaRule& frule : cfg.rules) {
        filters.push_back({rule_label(frule), FilterKind::Standard,
                           ResilientConfig::constant(frule, 0.0)});
        filters.push_back({"P-" + rule_label(frule), FilterKind::PredictionResilient,
                           ResilientConfig::constant(frule, c)});
        filters.push_back({"U-" + rule_label(frule), FilterKind::UpdateResilient,
                           ResilientConfig::constant(frule, c)});
      }
      const bool use_updated = kind == UncertaintyCase::Update;
      for (const Evaluated& f : filters) {
        if (!filter_selected(cfg, f.label)) continue;
        std::vector<double> sums(static_cast<std::size_t>(cfg.horizon), 0.0);
        for (const Trajectory& traj : ds.samples) {
          const FilterTrace trace = run_filter(model, f.kind, traj.observations, f.cfg);
          accumulate_sq_err(traj, trace, use_updated, sums);
        }
        ds.mse.series.push_back(finalize_series(f.label, "", std::move(sums),
                                                static_cast<int>(ds.samples.size())));
      }
      result.datasets.push_back(std::move(ds));
      ++dataset_index;
    }
  }
  return result;
}

MseReport run_mass_spring(const ExperimentConfig& cfg) {
  const bool balanced = cfg.experiment == ExperimentConfig::Kind::MassSpringBalanced;
  if (cfg.experiment == ExperimentConfig::Kind::Worstcase) {
    throw Error("run_mass_spring: wrong experiment kind");
  }
  const int trials = cfg.full_scale ? 1000 : cfg.trials;
  const int horizon = cfg.horizon;

  MassSpringParams nominal;
  nominal.meas_noise = balanced ? 0.1 : 1.0;
  const NonlinearStateSpaceModel nominal_model = mass_spring_model(nominal);

  struct Evaluated {
    std::string label;
    std::string param;
    FilterKind kind;
    ResilientConfig cfg;
    std::vector<double> sums;
  };
  std::vector<Evaluated> filters;
  for (const SigmaRule& rule : cfg.rules) {
    if (filter_selected(cfg, rule_label(rule))) {
      filters.push_back({rule_label(rule), "", FilterKind::Standard,
                         ResilientConfig::constant(rule, 0.0), {}});
    }
  }
  for (double c : cfg.tolerances) {
    for (const SigmaRule& rule : cfg.rules) {
      if (filter_selected(cfg, "P-" + rule_label(rule))) {
        filters.push_back({"P-" + rule_label(rule), c_label(c), FilterKind::PredictionResilient,
                           ResilientConfig::constant(rule, c), {}});
      }
      if (filter_selected(cfg, "U-" + rule_label(rule))) {
        filters.push_back({"U-" + rule_label(rule), c_label(c), FilterKind::UpdateResilient,
                           ResilientConfig::constant(rule, c), {}});
      }
    }
  }
  for (Evaluated& f : filters) f.sums.assign(static_cast<std::size_t>(horizon), 0.0);
  const bool run_pf_baseline = filter_selected(cfg, "PF");
  std::vector<std::vector<double>> pf_sums(
      cfg.pf_particles.size(), std::vector<double>(static_cast<std::size_t>(horizon), 0.0));

  const std::uint64_t experiment_id = balanced ? 2 : 1;
  for (int k = 0; k < trials; ++k) {
    const std::uint64_t trial_seed = derive_seed(cfg.seed, experiment_id, static_cast<std::uint64_t>(k));
    Rng param_rng(derive_seed(trial_seed, 11));

    MassSpringParams actual = nominal;
    actual.hardening_a = 0.01 + 0.04 * param_rng.uniform();
    actual.mu_kinetic = 0.1 + 0.7 * param_rng.uniform();
    actual.mu_static = 0.1 + 0.7 * param_rng.uniform();
    actual.meas_noise = balanced ? 0.1 + 0.02 * param_rng.uniform()
                                 : 0.8 + 0.4 * param_rng.uniform();
    actual.epsilon = 0.0;  // actual displacement recursion is deterministic
    const NonlinearStateSpaceModel actual_model = mass_spring_model(actual);
    const Trajectory traj = simulate_nominal(actual_model, horizon, derive_seed(trial_seed, 12));

    for (Evaluated& f : filters) {
      const FilterTrace trace = run_filter(nominal_model, f.kind, traj.observations, f.cfg);
      accumulate_sq_err(traj, trace, /*use_updated=*/false, f.sums);
    }
    if (run_pf_baseline) {
      for (std::size_t i = 0; i < cfg.pf_particles.size(); ++i) {
        Eigen::MatrixXd predicted, filtered;
        run_pf(nominal_model, traj.observations, cfg.pf_particles[i],
               derive_seed(trial_seed, 13, static_cast<std::uint64_t>(i)), predicted, filtered);
        for (int t = 1; t <= horizon; ++t) {
          pf_sums[i][static_cast<std::size_t>(t - 1)] +=
              (traj.states.col(t) - predicted.col(t)).squaredNorm();
        }
      }
    }
  }

  MseReport report;
  for (Evaluated& f : filters) {
    report.series.push_back(finalize_series(f.label, f.param, std::move(f.sums), trials));
  }
  if (run_pf_baseline) {
    for (std::size_t i = 0; i < cfg.pf_particles.size(); ++i) {
      report.series.push_back(
          finalize_series("PF", np_label(cfg.pf_particles[i]), std::move(pf_sums[i]), trials));
    }
  }
  return report;
}

void emit_report(const MseReport& report, const ExperimentConfig& cfg, const std::string& dir,
                 double runtime_seconds) {
  std::filesystem::create_directories(dir);
  write_mse_files(report, dir);

  // Table-shaped pivot: tolerance rows by robust-filter columns, then the
  // particle-filter rows.
  {
    std::ofstream out = open_out(dir, "table1.csv");
    std::vector<std::string> robust;
    for (const MseSeries& s : report.series) {
      if (s.param.rfind("c=", 0) == 0 &&
          std::find(robust.begin(), robust.end(), s.filter) == robust.end()) {
        robust.push_back(s.filter);
      }
    }
    std::vector<std::string> c_params;
    for (const MseSeries& s : report.series) {
      if (s.param.rfind("c=", 0) == 0 &&
          std::find(c_params.begin(), c_params.end(), s.param) == c_params.end()) {
        c_params.push_back(s.param);
      }
    }
    out << "c";
    for (const std::string& f : robust) out << "," << f;
    out << "\n";
    for (const std::string& param : c_params) {
      out << param.substr(2);
      for (const std::string& f : robust) {
        const MseSeries* s = report.find(f, param);
        out << "," << (s ? format_double(s->overall) : "");
      }
      out << "\n";
    }
    bool any_pf = false;
    for (const MseSeries& s : report.series) any_pf |= s.filter == "PF";
    if (any_pf) {
      out << "Np,PF\n";
      for (const MseSeries& s : report.series) {
        if (s.filter == "PF") out << s.param.substr(3) << "," << format_double(s.overall) << "\n";
      }
    }
  }

  nlohmann::json j;
  j["config"] = config_json(cfg);
  j["seed"] = cfg.seed;
  j["runtime_seconds"] = runtime_seconds;
  std::ofstream out = open_out(dir, "diagnostics.json");
  out << j.dump(2) << "\n";
}

void emit_worstcase(const WorstcaseResult& result, const ExperimentConfig& cfg,
                    const std::string& dir, double runtime_seconds) {
  std::filesystem::create_directories(dir);
  nlohmann::json diag;
  diag["config"] = config_json(cfg);
  diag["seed"] = cfg.seed;
  diag["runtime_seconds"] = runtime_seconds;

  for (const WorstcaseResult::Dataset& ds : result.datasets) {
    const std::string suffix = ds.name;
    {
      std::ofstream out = open_out(dir, "mse_by_time_" + suffix + ".csv");
      out << "t";
      for (const MseSeries& s : ds.mse.series) out << "," << s.filter;
      out << "\n";
      const std::size_t steps =
          ds.mse.series.empty() ? 0 : ds.mse.series.front().per_time.size();
      for (std::size_t i = 0; i < steps; ++i) {
        out << (i + 1);
        for (const MseSeries& s : ds.mse.series) out << "," << format_double(s.per_time[i]);
        out << "\n";
      }
    }
    {
      std::ofstream out = open_out(dir, "mse_overall_" + suffix + ".csv");
      out << "filter,overall_mse\n";
      for (const MseSeries& s : ds.mse.series) {
        out << s.filter << "," << format_double(s.overall) << "\n";
      }
    }
    {
      std::ofstream out = open_out(dir, "acceptance_" + suffix + ".csv");
      out << "proposal_index,accepted,alpha,r_total\n";
      for (const MHProposalRecord& rec : ds.acceptance_log) {
        out << rec.proposal_index << "," << (rec.accepted ? 1 : 0) << ","
            << format_double(rec.alpha) << "," << rec.r_total << "\n";
      }
    }
    {
      std::ofstream out = open_out(dir, "r_values_" + suffix + ".csv");
      out << "r\n";
      for (int r : ds.r_log) out << r << "\n";
    }
    {
      std::ofstream out = open_out(dir, "samples_" + suffix + ".csv");
      out << "sample_index,t";
      const int n = static_cast<int>(worstcase_model().state_dim);
      for (int i = 0; i < n; ++i) out << ",x_" << i;
      out << ",y_0\n";
      for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        const Trajectory& traj = ds.samples[s];
        for (int t = 0; t <= traj.horizon; ++t) {
          out << s << "," << t;
          for (int i = 0; i < traj.states.rows(); ++i) {
            out << "," << format_double(traj.states(i, t));
          }
          out << "," << format_double(traj.observations(0, t)) << "\n";
        }
      }
    }
    long accepted = 0;
    for (const MHProposalRecord& rec : ds.acceptance_log) accepted += rec.accepted ? 1 : 0;
    diag["acceptance_rate"][ds.name] =
        ds.acceptance_log.empty()
            ? 0.0
            : static_cast<double>(accepted) / static_cast<double>(ds.acceptance_log.size());
  }
  std::ofstream out = open_out(dir, "diagnostics.json");
  out << diag.dump(2) << "\n";
}

}  // namespace rspkf
