#include "rspkf/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

namespace rspkf {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool try_llt(const Eigen::MatrixXd& p, Eigen::MatrixXd& lower) {
  Eigen::LLT<Eigen::MatrixXd> llt(p);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  if (!lower.allFinite()) return false;
  for (Eigen::Index i = 0; i < lower.rows(); ++i) {
    if (!(lower(i, i) > 0.0)) return false;
  }
  return true;
}

}  // namespace

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("symmetrize: matrix not square");
  return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& p) {
  if (p.rows() != p.cols()) throw DimensionMismatch("cholesky_lower: matrix not square");
  Eigen::MatrixXd lower;
  if (try_llt(p, lower)) return lower;

  const Eigen::MatrixXd sym = symmetrize(p);
  if (try_llt(sym, lower)) return lower;

  const Eigen::Index n = sym.rows();
  double eps = 1e-12 * sym.trace() / static_cast<double>(n);
  if (!(eps > 0.0)) eps = std::numeric_limits<double>::min();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  for (int attempt = 0; attempt < 3; ++attempt) {
    if (try_llt(sym + eps * eye, lower)) return lower;
    eps *= 10.0;
  }
  throw NotPositiveDefinite("cholesky_lower: factorization failed after jitter escalation");
}

SpdMatrix::SpdMatrix(const Eigen::MatrixXd& m) : mat_(symmetrize(m)) {
  chol_ = cholesky_lower(mat_);
}

double SpdMatrix::log_det() const {
  return 2.0 * chol_.diagonal().array().log().sum();
}

Eigen::MatrixXd SpdMatrix::solve(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd y = chol_.triangularView<Eigen::Lower>().solve(rhs);
  return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd SpdMatrix::inverse() const {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim(), dim());
  return solve(eye);
}

double SpdMatrix::inv_quad(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd y = chol_.triangularView<Eigen::Lower>().solve(x);
  return y.squaredNorm();
}

double lambda_max(const Eigen::MatrixXd& p) {
  if (p.rows() != p.cols()) throw DimensionMismatch("lambda_max: matrix not square");
  if (p.rows() == 1) return p(0, 0);
  // exact symmetric solve: a power iteration underestimates on clustered
  // spectra, which would push the risk-parameter bracket out of its domain
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(p));
  if (es.info() != Eigen::Success) throw Error("lambda_max: eigensolver failed");
  return es.eigenvalues().maxCoeff();
}

double bisect(const std::function<double(double)>& f, const BisectionSpec& spec) {
  if (!(spec.lower < spec.upper)) throw Error("bisect: lower must be below upper");
  if (!(spec.abs_tolerance > 0.0)) throw Error("bisect: tolerance must be positive");
  if (spec.max_iterations < 1) throw Error("bisect: max_iterations must be >= 1");

  double lo = spec.lower;
  double hi = spec.upper;
  double flo = f(lo);
  if (std::abs(flo) <= spec.abs_tolerance) return lo;
  double fhi = f(hi);
  if (std::abs(fhi) <= spec.abs_tolerance) return hi;
  if ((flo < 0.0) == (fhi < 0.0)) {
    throw NoSignChange("bisect: f has the same sign at both bracket ends");
  }

  const double width_floor =
      std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(lo), std::abs(hi)});
  for (int it = 0; it < spec.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fmid = f(mid);
    if (std::abs(fmid) <= spec.abs_tolerance) return mid;
    if ((fmid < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fmid;
    } else {
      hi = mid;
    }
    if (hi - lo <= width_floor) return 0.5 * (lo + hi);
  }
  throw MaxIterationsExceeded("bisect: no convergence within iteration budget");
}

double gaussian_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                        const SpdMatrix& cov) {
  if (x.size() != mean.size() || x.size() != cov.dim()) {
    throw DimensionMismatch("gaussian_log_pdf: inconsistent dimensions");
  }
  const double k = static_cast<double>(x.size());
  return -0.5 * (k * std::log(2.0 * kPi) + cov.log_det() + cov.inv_quad(x - mean));
}

}  // namespace rspkf
