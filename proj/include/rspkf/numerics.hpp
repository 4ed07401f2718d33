#pragma once

#include <Eigen/Dense>
#include <functional>

#include "rspkf/errors.hpp"

namespace rspkf {

/// Returns (M + M^T)/2.
Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// If the plain factorization fails, the input is symmetrized and a jitter
/// eps*I with eps = 1e-12*trace(P)/n is added, escalating x10 at most three
/// times before NotPositiveDefinite is raised.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& p);

/// Symmetric positive definite matrix with its Cholesky factor attached.
///
/// Construction symmetrizes, factorizes (with the jitter policy above) and
/// keeps the factor, so downstream solves and log-determinants are cheap.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  explicit SpdMatrix(const Eigen::MatrixXd& m);

  const Eigen::MatrixXd& matrix() const { return mat_; }
  const Eigen::MatrixXd& chol_lower() const { return chol_; }
  Eigen::Index dim() const { return mat_.rows(); }

  double log_det() const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  Eigen::MatrixXd inverse() const;

  /// Quadratic form x^T P^{-1} x.
  double inv_quad(const Eigen::VectorXd& x) const;

 private:
  Eigen::MatrixXd mat_;
  Eigen::MatrixXd chol_;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration (50 rounds).
double lambda_max(const Eigen::MatrixXd& p);

struct BisectionSpec {
  double lower = 0.0;
  double upper = 1.0;
  double abs_tolerance = 1e-12;
  int max_iterations = 200;
};

/// Root of a continuous strictly monotone function bracketed by [lower, upper].
///
/// Stops when |f| <= abs_tolerance or the interval width falls below a
/// machine-scaled floor. Raises NoSignChange when the bracket is invalid and
/// MaxIterationsExceeded when neither stop condition is met in time.
double bisect(const std::function<double(double)>& f, const BisectionSpec& spec);

/// log N(x; mean, cov) for an SPD covariance.
double gaussian_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                        const SpdMatrix& cov);

}  // namespace rspkf
