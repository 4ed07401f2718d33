#include "rspkf/particle.hpp"

#include <cmath>

#include "doctest.h"
#include "rspkf/linear_oracle.hpp"
#include "test_util.hpp"

using namespace rspkf;

namespace {

LinearStateSpaceModel scalar_linear(double a, double b_std, double d_std) {
  LinearStateSpaceModel lin;
  lin.A = Eigen::MatrixXd::Constant(1, 1, a);
  lin.C = Eigen::MatrixXd::Constant(1, 1, 1.0);
  lin.B = Eigen::MatrixXd::Zero(1, 2);
  lin.B(0, 0) = b_std;
  lin.D = Eigen::MatrixXd::Zero(1, 2);
  lin.D(0, 1) = d_std;
  lin.initial_mean = Eigen::VectorXd::Zero(1);
  lin.initial_cov = Eigen::MatrixXd::Identity(1, 1);
  return lin;
}

}  // namespace

TEST_CASE("flat likelihood keeps weights uniform") {
  const LinearStateSpaceModel lin = scalar_linear(0.9, 0.0, 1e6);
  NonlinearStateSpaceModel model = to_nonlinear(lin);
  Rng rng(5);
  const ParticleCloud cloud = pf_init(model, 500, rng);
  const PfStepResult step = pf_step(model, cloud, Eigen::VectorXd::Zero(1), rng);
  // all weights collapse back to uniform before resampling
  CHECK((step.filtered - step.predicted).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("resampling preserves count, normalization and expected offspring") {
  Rng rng(11);
  const int np = 200;
  ParticleCloud cloud;
  cloud.particles = testutil::random_matrix(1, np, rng);
  Eigen::VectorXd w(np);
  for (int i = 0; i < np; ++i) w[i] = rng.uniform() + 1e-3;
  cloud.weights = w / w.sum();
  const Eigen::MatrixXd before = cloud.particles;
  const Eigen::VectorXd weights_before = cloud.weights;

  // offspring counts over many seeds concentrate at N_p * w_i
  Eigen::VectorXd offspring = Eigen::VectorXd::Zero(np);
  const int reps = 3000;
  for (int rep = 0; rep < reps; ++rep) {
    ParticleCloud copy = cloud;
    systematic_resample(copy, rng);
    CHECK(copy.weights.size() == np);
    CHECK(copy.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < np; ++i) {
      // count how many copies of particle i survived (particles are distinct)
      for (int j = 0; j < np; ++j) {
        if (copy.particles(0, j) == before(0, i)) offspring[i] += 1.0;
      }
    }
  }
  offspring /= static_cast<double>(reps);
  for (int i = 0; i < np; ++i) {
    const double expected = np * weights_before[i];
    // systematic resampling keeps counts within one unit of the expectation
    CHECK(std::abs(offspring[i] - expected) < 1.0);
  }
}

TEST_CASE("bootstrap filter tracks the Kalman posterior on a linear model") {
  const LinearStateSpaceModel lin = scalar_linear(0.9, 0.6, 0.5);
  const NonlinearStateSpaceModel model = to_nonlinear(lin);
  const Trajectory traj = simulate_nominal(model, 30, 2022);

  const FilterTrace kalman = linear_robust_trace(lin, FilterKind::Standard, traj.observations,
                                                 [](int) { return 0.0; });
  Eigen::MatrixXd predicted, filtered;
  run_pf(model, traj.observations, 20000, 99, predicted, filtered);
  for (int t = 0; t < 31; ++t) {
    const double kf_mean = kalman[static_cast<std::size_t>(t)].updated_mean[0];
    const double kf_var = kalman[static_cast<std::size_t>(t)].updated_cov(0, 0);
    // 3 sigma of the particle estimator
    CHECK(std::abs(filtered(0, t) - kf_mean) < 3.0 * std::sqrt(kf_var / 20000.0) + 0.02);
  }
}

TEST_CASE("mse against the truth decreases with the particle count") {
  const LinearStateSpaceModel lin = scalar_linear(0.95, 0.5, 0.7);
  const NonlinearStateSpaceModel model = to_nonlinear(lin);

  double mse_small = 0.0, mse_large = 0.0;
  const int trials = 40;
  for (int k = 0; k < trials; ++k) {
    const Trajectory traj = simulate_nominal(model, 25, 3000 + k);
    const FilterTrace kalman = linear_robust_trace(lin, FilterKind::Standard, traj.observations,
                                                   [](int) { return 0.0; });
    for (int np : {100, 10000}) {
      Eigen::MatrixXd predicted, filtered;
      run_pf(model, traj.observations, np, derive_seed(17, k, np), predicted, filtered);
      double err = 0.0;
      for (int t = 0; t < 26; ++t) {
        const double d = filtered(0, t) - kalman[static_cast<std::size_t>(t)].updated_mean[0];
        err += d * d;
      }
      (np == 100 ? mse_small : mse_large) += err;
    }
  }
  CHECK(mse_large < mse_small);
}

TEST_CASE("determinism given the seed") {
  const LinearStateSpaceModel lin = scalar_linear(0.9, 0.6, 0.5);
  const NonlinearStateSpaceModel model = to_nonlinear(lin);
  const Trajectory traj = simulate_nominal(model, 10, 8);
  Eigen::MatrixXd p1, f1, p2, f2;
  run_pf(model, traj.observations, 300, 42, p1, f1);
  run_pf(model, traj.observations, 300, 42, p2, f2);
  CHECK((f1 - f2).norm() == 0.0);
  CHECK((p1 - p2).norm() == 0.0);
}
