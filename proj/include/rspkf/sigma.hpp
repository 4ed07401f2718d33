#pragma once

#include <Eigen/Dense>
#include <functional>

#include "rspkf/model.hpp"

namespace rspkf {

/// Sigma-point rule selector: scaled unscented, spherical cubature, or
/// Gauss-Hermite of order q (q^n points).
struct SigmaRule {
  enum class Kind { Unscented, Cubature, GaussHermite };

  Kind kind = Kind::Cubature;
  double alpha = 0.5;
  double beta = 2.0;
  double kappa = 1.0;
  int order = 3;

  static SigmaRule unscented(double alpha, double beta, double kappa) {
    SigmaRule r;
    r.kind = Kind::Unscented;
    r.alpha = alpha;
    r.beta = beta;
    r.kappa = kappa;
    return r;
  }
  static SigmaRule cubature() { return SigmaRule{}; }
  static SigmaRule gauss_hermite(int q) {
    SigmaRule r;
    r.kind = Kind::GaussHermite;
    r.order = q;
    return r;
  }

  int point_count(int n) const;
  const char* name() const;
};

/// Sigma points (columns) with mean and covariance weights.
struct SigmaSet {
  Eigen::MatrixXd points;       // n x p
  Eigen::VectorXd mean_weights; // p
  Eigen::VectorXd cov_weights;  // p
};

/// Weighted moments of a transformed sigma set.
struct MomentMatch {
  Eigen::VectorXd mean;       // sum W_m g(X_i)
  Eigen::MatrixXd cov;        // sum W_c (g-mean)(g-mean)^T + noise, symmetrized
  Eigen::MatrixXd cross;      // sum W_c (X_i - x)(g-mean)^T
};

/// Roots and weights of the order-q Gauss-Hermite rule for a standard normal
/// weight (1-D), nodes ascending.
void gauss_hermite_nodes(int q, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

/// Generates sigma points for the belief under the chosen rule, using the
/// lower Cholesky factor of the covariance as the square root.
SigmaSet generate(const SigmaRule& rule, const GaussianBelief& belief);

/// Propagates the belief through g and matches mean/covariance/cross moments;
/// noise_cov is added to the covariance block.
MomentMatch moment_match(const SigmaRule& rule, const GaussianBelief& belief,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                         const Eigen::MatrixXd& noise_cov);

}  // namespace rspkf
