#pragma once

#include <map>
#include <string>
#include <vector>

#include "rspkf/lfm.hpp"
#include "rspkf/models.hpp"
#include "rspkf/particle.hpp"

namespace rspkf {

struct ExperimentConfig {
  enum class Kind { Worstcase, MassSpringMeasurementDominant, MassSpringBalanced };

  Kind experiment = Kind::Worstcase;
  int trials = 100;
  int horizon = 50;
  std::vector<double> tolerances;   // c grid; worstcase uses the first entry
  std::vector<SigmaRule> rules;
  std::vector<std::string> filters; // empty = evaluate everything
  std::vector<int> pf_particles;
  MHConfig mh;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  bool full_scale = false;

  static ExperimentConfig defaults(Kind kind);
  static Kind parse_kind(const std::string& name);
  const char* kind_name() const;
};

/// One MSE curve: filter label, parameter label (c or particle count), squared
/// error averaged over trials at each time step, and the mean over time.
struct MseSeries {
  std::string filter;
  std::string param;
  std::vector<double> per_time;  // t = 1..N
  double overall = 0.0;
};

struct MseReport {
  std::vector<MseSeries> series;

  const MseSeries* find(const std::string& filter, const std::string& param = "") const;
};

/// Least-favorable-data study: one MH dataset per (case, rule), each filter
/// scored on every dataset. Prediction-type datasets score the predictor,
/// update-type datasets the filtered estimate.
struct WorstcaseResult {
  struct Dataset {
    std::string name;
    UncertaintyCase kind = UncertaintyCase::Prediction;
    MseReport mse;
    std::vector<MHProposalRecord> acceptance_log;
    std::vector<int> r_log;
    std::vector<Trajectory> samples;
  };
  std::vector<Dataset> datasets;
};

WorstcaseResult run_worstcase(const ExperimentConfig& cfg);

/// Mass-spring Monte Carlo study over the tolerance grid and particle counts;
/// per trial the data comes from an actual model with parameters drawn
/// uniformly, while every filter uses the nominal model.
MseReport run_mass_spring(const ExperimentConfig& cfg);

/// Writes mse_by_time.csv (wide), mse_long.csv (plot-ready long format),
/// mse_overall.csv and diagnostics.json into dir.
void emit_report(const MseReport& report, const ExperimentConfig& cfg, const std::string& dir,
                 double runtime_seconds);

/// emit_report plus per-dataset samples, acceptance and r logs.
void emit_worstcase(const WorstcaseResult& result, const ExperimentConfig& cfg,
                    const std::string& dir, double runtime_seconds);

/// Short label of a sigma rule for report columns (UKF, CKF, GH<q>).
std::string rule_label(const SigmaRule& rule);

}  // namespace rspkf
