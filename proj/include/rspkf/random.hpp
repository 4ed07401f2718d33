#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace rspkf {

/// splitmix64 mixing step; used to derive independent seeds from a master seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a stream seed from (master, salt) pairs, e.g. per-trial or per-role.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(master ^ mix64(a)) ^ mix64(b + 0x632be59bd9b4e019ULL));
}

/// Seeded random stream with the vector draws the filters and samplers need.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return unif_(gen_); }
  double normal() { return norm_(gen_); }

  Eigen::VectorXd normal_vector(Eigen::Index k) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = norm_(gen_);
    return v;
  }

  /// Draw from N(mean, L L^T) given the lower Cholesky factor L.
  Eigen::VectorXd gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower) {
    return mean + chol_lower * normal_vector(mean.size());
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> norm_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

/// Streaming mean/variance accumulator (Welford updates).
class StreamingMoments {
 public:
  void push(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }

  /// Multiplies every accumulated value by `factor` (mean scales linearly,
  /// the squared spread quadratically); used to shift a log-space offset.
  void rescale(double factor) {
    mean_ *= factor;
    m2_ *= factor * factor;
  }

  long count() const { return n_; }
  double mean() const { return mean_; }
  double sample_variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

 private:
  long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace rspkf
