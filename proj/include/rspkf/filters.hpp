#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "rspkf/model.hpp"
#include "rspkf/sigma.hpp"

namespace rspkf {

enum class FilterKind { Standard, PredictionResilient, UpdateResilient, Utf };

/// Settings shared by the resilient filters: sigma rule, tolerance schedule
/// c_t, the bracket shrink delta for the risk parameter and the bisection
/// stop rule.
struct ResilientConfig {
  SigmaRule rule;
  std::function<double(int)> tolerance = [](int) { return 0.0; };
  double theta_bracket_shrink = 1e-9;
  BisectionSpec bisection{0.0, 1.0, 1e-12, 200};

  static ResilientConfig constant(const SigmaRule& rule, double c) {
    ResilientConfig cfg;
    cfg.rule = rule;
    cfg.tolerance = [c](int) { return c; };
    return cfg;
  }
};

/// One filter recursion step. Prior, update and prediction quantities are all
/// recorded; the lf_* fields carry the least-favorable (inflated) covariances
/// and coincide with the nominal ones when theta = 0.
struct FilterStep {
  Eigen::VectorXd prior_mean;        // x-hat_t
  Eigen::MatrixXd prior_cov;         // covariance fed into the step
  Eigen::VectorXd updated_mean;      // x-hat_{t|t}
  Eigen::MatrixXd updated_cov;       // P_{t|t}
  Eigen::MatrixXd lf_updated_cov;    // inflated P_{t|t} (update-resilient)
  Eigen::VectorXd predicted_mean;    // x-hat_{t+1}
  Eigen::MatrixXd predicted_cov;     // P_{t+1}
  Eigen::MatrixXd lf_predicted_cov;  // inflated P_{t+1} (prediction-resilient)
  Eigen::MatrixXd gain;              // L_t
  double theta = 0.0;                // risk sensitivity parameter of the step
  Eigen::VectorXd innov_mean;        // m_{y_t}
  Eigen::MatrixXd innov_cov;         // K_{y_t}
  Eigen::MatrixXd cross_cov;         // K_{x_t y_t}
};

using FilterTrace = std::vector<FilterStep>;

/// gamma(P, theta) = 1/2 (logdet(I - theta P) + tr((I - theta P)^{-1} - I)).
/// Zero at theta = 0 and strictly increasing on [0, 1/lambda_max(P)).
double gamma(const SpdMatrix& p, double theta);

/// Unique theta >= 0 with gamma(P, theta) = c, found by bisection on
/// [0, (1 - delta)/lambda_max(P)]. Returns exactly 0 for c = 0.
double solve_theta(const SpdMatrix& p, double c, const ResilientConfig& cfg);

/// Least-favorable covariance (P^{-1} - theta I)^{-1}, computed as
/// (I - theta P)^{-1} P and symmetrized. Dominates P for theta > 0.
SpdMatrix lf_cov(const SpdMatrix& p, double theta);

/// Joint Gaussian over (next state, current observation) given past data.
struct JointGaussian {
  Eigen::VectorXd mean_x;
  Eigen::VectorXd mean_y;
  Eigen::MatrixXd cov_xx;
  Eigen::MatrixXd cov_xy;
  Eigen::MatrixXd cov_yy;
};

/// Conditions a JointGaussian on an observation: returns the predictor mean
/// and its error covariance.
void condition_joint(const JointGaussian& joint, const Eigen::VectorXd& y,
                     Eigen::VectorXd& mean, Eigen::MatrixXd& cov);

/// Single-generation approximation of the joint conditional density: one
/// sigma set at the belief feeds both f and h blocks.
JointGaussian utf_density(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                          const SigmaRule& rule);

/// Two-stage joint conditional density that reproduces the standard
/// sigma-point filter through the conditioning recursion. Exposed for testing;
/// the production filters use the algorithm listings directly.
JointGaussian prop1_density(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                            const Eigen::VectorXd& y, const SigmaRule& rule);

/// Standard sigma-point Kalman filter step (theta = 0).
FilterStep spkf_step(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                     const Eigen::VectorXd& y, const SigmaRule& rule);

/// Prediction-resilient step: the belief carries the inflated prediction
/// covariance; the risk parameter is solved on P_{t+1}.
FilterStep prediction_resilient_step(const NonlinearStateSpaceModel& model,
                                     const GaussianBelief& lf_belief, const Eigen::VectorXd& y,
                                     const ResilientConfig& cfg, int t);

/// Update-resilient step: the risk parameter is solved on P_{t|t} and the
/// inflated update covariance drives the prediction stage.
FilterStep update_resilient_step(const NonlinearStateSpaceModel& model,
                                 const GaussianBelief& belief, const Eigen::VectorXd& y,
                                 const ResilientConfig& cfg, int t);

/// Folds the chosen step over observations (columns y_0..y_N) starting from
/// the model's initial belief. Step failures abort with the step index.
FilterTrace run_filter(const NonlinearStateSpaceModel& model, FilterKind kind,
                       const Eigen::MatrixXd& observations, const ResilientConfig& cfg);

/// Writes one row per step: t, prior mean, diag of prior covariance, theta,
/// updated mean.
void trace_to_csv(const FilterTrace& trace, std::ostream& out);

}  // namespace rspkf
