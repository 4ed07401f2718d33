#include "rspkf/sigma.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <vector>

namespace rspkf {

namespace {

double hermite_eval(int degree, double x) {
  // Probabilists' Hermite recurrence He_{k+1} = x He_k - k He_{k-1}.
  double prev = 1.0;
  if (degree == 0) return prev;
  double cur = x;
  for (int k = 1; k < degree; ++k) {
    const double next = x * cur - static_cast<double>(k) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

struct GhProduct {
  Eigen::MatrixXd offsets;  // n x q^n unit-space points
  Eigen::VectorXd weights;  // q^n
};

const GhProduct& gauss_hermite_product(int q, int n) {
  static std::map<std::pair<int, int>, GhProduct> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find({q, n});
  if (it != cache.end()) return it->second;

  Eigen::VectorXd nodes, weights;
  gauss_hermite_nodes(q, nodes, weights);

  const long p = static_cast<long>(std::llround(std::pow(double(q), double(n))));
  GhProduct prod;
  prod.offsets.resize(n, p);
  prod.weights.resize(p);
  std::vector<int> idx(n, 0);
  for (long i = 0; i < p; ++i) {
    double w = 1.0;
    for (int k = 0; k < n; ++k) {
      prod.offsets(k, i) = nodes[idx[k]];
      w *= weights[idx[k]];
    }
    prod.weights[i] = w;
    // lexicographic advance, last coordinate fastest
    for (int k = n - 1; k >= 0; --k) {
      if (++idx[k] < q) break;
      idx[k] = 0;
    }
  }
  return cache.emplace(std::make_pair(q, n), std::move(prod)).first->second;
}

}  // namespace

int SigmaRule::point_count(int n) const {
  switch (kind) {
    case Kind::Unscented:
      return 2 * n + 1;
    case Kind::Cubature:
      return 2 * n;
    case Kind::GaussHermite:
      return static_cast<int>(std::llround(std::pow(double(order), double(n))));
  }
  return 0;
}

const char* SigmaRule::name() const {
  switch (kind) {
    case Kind::Unscented:
      return "unscented";
    case Kind::Cubature:
      return "cubature";
    case Kind::GaussHermite:
      return "gauss-hermite";
  }
  return "?";
}

void gauss_hermite_nodes(int q, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  if (q < 1) throw Error("gauss_hermite_nodes: order must be >= 1");
  if (q == 1) {
    nodes = Eigen::VectorXd::Zero(1);
    weights = Eigen::VectorXd::Ones(1);
    return;
  }
  // Golub-Welsch on the monic Hermite recurrence: zero diagonal, sqrt(k) off
  // diagonal. Eigenvalues are the roots of He_q.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(q, q);
  for (int k = 1; k < q; ++k) {
    const double b = std::sqrt(static_cast<double>(k));
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  if (es.info() != Eigen::Success) throw Error("gauss_hermite_nodes: eigensolver failed");
  nodes = es.eigenvalues();
  std::vector<double> sorted(nodes.data(), nodes.data() + q);
  std::sort(sorted.begin(), sorted.end());

  nodes.resize(q);
  weights.resize(q);
  double factorial = 1.0;
  for (int k = 2; k <= q; ++k) factorial *= k;
  for (int i = 0; i < q; ++i) {
    nodes[i] = sorted[static_cast<std::size_t>(i)];
    const double hq1 = hermite_eval(q - 1, nodes[i]);
    weights[i] = factorial / (static_cast<double>(q) * static_cast<double>(q) * hq1 * hq1);
  }
}

SigmaSet generate(const SigmaRule& rule, const GaussianBelief& belief) {
  const int n = static_cast<int>(belief.mean.size());
  if (belief.cov.dim() != n) throw DimensionMismatch("generate: belief dimensions disagree");
  const Eigen::MatrixXd& root = belief.cov.chol_lower();

  SigmaSet set;
  switch (rule.kind) {
    case SigmaRule::Kind::Unscented: {
      const double lambda = rule.alpha * rule.alpha * (rule.kappa + n) - n;
      const double scale = lambda + n;
      if (!(scale > 0.0)) throw Error("generate: unscented scaling lambda + n must be positive");
      const int p = 2 * n + 1;
      set.points.resize(n, p);
      set.mean_weights.resize(p);
      set.cov_weights.resize(p);
      const double spread = std::sqrt(scale);
      for (int i = 0; i < n; ++i) {
        set.points.col(i) = belief.mean + spread * root.col(i);
        set.points.col(n + i) = belief.mean - spread * root.col(i);
      }
      set.points.col(2 * n) = belief.mean;
      const double side = 1.0 / (2.0 * scale);
      set.mean_weights.setConstant(side);
      set.cov_weights.setConstant(side);
      set.mean_weights[2 * n] = lambda / scale;
      set.cov_weights[2 * n] = lambda / scale + 1.0 - rule.alpha * rule.alpha + rule.beta;
      break;
    }
    case SigmaRule::Kind::Cubature: {
      const int p = 2 * n;
      set.points.resize(n, p);
      const double spread = std::sqrt(static_cast<double>(n));
      for (int i = 0; i < n; ++i) {
        set.points.col(i) = belief.mean + spread * root.col(i);
        set.points.col(n + i) = belief.mean - spread * root.col(i);
      }
      set.mean_weights = Eigen::VectorXd::Constant(p, 1.0 / (2.0 * n));
      set.cov_weights = set.mean_weights;
      break;
    }
    case SigmaRule::Kind::GaussHermite: {
      const GhProduct& prod = gauss_hermite_product(rule.order, n);
      const long p = prod.weights.size();
      set.points.resize(n, p);
      for (long i = 0; i < p; ++i) {
        set.points.col(i) = belief.mean + root * prod.offsets.col(i);
      }
      set.mean_weights = prod.weights;
      set.cov_weights = prod.weights;
      break;
    }
  }
  return set;
}

MomentMatch moment_match(const SigmaRule& rule, const GaussianBelief& belief,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                         const Eigen::MatrixXd& noise_cov) {
  const SigmaSet set = generate(rule, belief);
  const long p = set.mean_weights.size();
  const Eigen::VectorXd first = g(set.points.col(0));
  const long out_dim = first.size();
  if (noise_cov.rows() != out_dim || noise_cov.cols() != out_dim) {
    throw DimensionMismatch("moment_match: noise covariance does not match output dimension");
  }

  Eigen::MatrixXd images(out_dim, p);
  images.col(0) = first;
  for (long i = 1; i < p; ++i) images.col(i) = g(set.points.col(i));

  MomentMatch mm;
  mm.mean = images * set.mean_weights;
  mm.cov = Eigen::MatrixXd::Zero(out_dim, out_dim);
  mm.cross = Eigen::MatrixXd::Zero(belief.mean.size(), out_dim);
  for (long i = 0; i < p; ++i) {
    const Eigen::VectorXd dg = images.col(i) - mm.mean;
    mm.cov.noalias() += set.cov_weights[i] * dg * dg.transpose();
    mm.cross.noalias() +=
        set.cov_weights[i] * (set.points.col(i) - belief.mean) * dg.transpose();
  }
  mm.cov = symmetrize(mm.cov + noise_cov);
  return mm;
}

}  // namespace rspkf
