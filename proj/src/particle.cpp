#include "rspkf/particle.hpp"

#include <cmath>

namespace rspkf {

namespace {

/// Weights the cloud in place by N(y; h(x), DD^T); returns the weighted mean
/// computed before resampling.
Eigen::VectorXd weight_by_likelihood(const NonlinearStateSpaceModel& model, ParticleCloud& cloud,
                                     const Eigen::VectorXd& y) {
  const SpdMatrix obs_cov{model.obs_noise_cov()};
  const long np = cloud.weights.size();
  Eigen::VectorXd log_w(np);
  for (long i = 0; i < np; ++i) {
    log_w[i] = std::log(cloud.weights[i]) + gaussian_log_pdf(y, model.h(cloud.particles.col(i)), obs_cov);
  }
  const double max_log = log_w.maxCoeff();
  if (!std::isfinite(max_log)) {
    cloud.weights.setConstant(1.0 / static_cast<double>(np));
    cloud.weight_collapse = true;
  } else {
    cloud.weights = (log_w.array() - max_log).exp();
    const double total = cloud.weights.sum();
    cloud.weights /= total;
  }
  return cloud.particles * cloud.weights;
}

}  // namespace

ParticleCloud pf_init(const NonlinearStateSpaceModel& model, int n_particles, Rng& rng) {
  if (n_particles < 1) throw Error("pf_init: need at least one particle");
  ParticleCloud cloud;
  cloud.particles.resize(model.state_dim, n_particles);
  for (int i = 0; i < n_particles; ++i) {
    cloud.particles.col(i) = rng.gaussian(model.initial_mean, model.initial_cov.chol_lower());
  }
  cloud.weights = Eigen::VectorXd::Constant(n_particles, 1.0 / n_particles);
  return cloud;
}

void systematic_resample(ParticleCloud& cloud, Rng& rng) {
  const long np = cloud.weights.size();
  const double step = 1.0 / static_cast<double>(np);
  double position = rng.uniform() * step;
  Eigen::MatrixXd resampled(cloud.particles.rows(), np);
  double cumulative = cloud.weights[0];
  long j = 0;
  for (long i = 0; i < np; ++i) {
    while (cumulative < position && j + 1 < np) {
      ++j;
      cumulative += cloud.weights[j];
    }
    resampled.col(i) = cloud.particles.col(j);
    position += step;
  }
  cloud.particles = std::move(resampled);
  cloud.weights.setConstant(step);
}

PfStepResult pf_step(const NonlinearStateSpaceModel& model, const ParticleCloud& cloud,
                     const Eigen::VectorXd& y, Rng& rng) {
  const long np = cloud.weights.size();
  PfStepResult out;
  out.cloud.particles.resize(model.state_dim, np);
  out.cloud.weights = cloud.weights;
  for (long i = 0; i < np; ++i) {
    const Eigen::VectorXd v = rng.normal_vector(model.state_dim + model.obs_dim);
    out.cloud.particles.col(i) = model.f(cloud.particles.col(i)) + model.B * v;
  }
  out.predicted = out.cloud.particles * out.cloud.weights;
  out.filtered = weight_by_likelihood(model, out.cloud, y);
  systematic_resample(out.cloud, rng);
  return out;
}

PfStepResult pf_step(const NonlinearStateSpaceModel& model, const ParticleCloud& cloud,
                     const Eigen::VectorXd& y, std::uint64_t seed) {
  Rng rng(seed);
  return pf_step(model, cloud, y, rng);
}

void run_pf(const NonlinearStateSpaceModel& model, const Eigen::MatrixXd& observations,
            int n_particles, std::uint64_t seed, Eigen::MatrixXd& predicted,
            Eigen::MatrixXd& filtered) {
  const int steps = static_cast<int>(observations.cols());
  predicted.resize(model.state_dim, steps);
  filtered.resize(model.state_dim, steps);
  if (steps == 0) return;

  Rng rng(seed);
  ParticleCloud cloud = pf_init(model, n_particles, rng);
  predicted.col(0) = cloud.particles * cloud.weights;
  filtered.col(0) = weight_by_likelihood(model, cloud, observations.col(0));
  systematic_resample(cloud, rng);
  for (int t = 1; t < steps; ++t) {
    PfStepResult step = pf_step(model, cloud, observations.col(t), rng);
    predicted.col(t) = step.predicted;
    filtered.col(t) = step.filtered;
    cloud = std::move(step.cloud);
  }
}

}  // namespace rspkf
