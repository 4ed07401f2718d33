#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>

#include "rspkf/numerics.hpp"

namespace rspkf {

/// Gaussian state belief: mean and SPD covariance.
struct GaussianBelief {
  Eigen::VectorXd mean;
  SpdMatrix cov;

  GaussianBelief() = default;
  GaussianBelief(Eigen::VectorXd m, SpdMatrix c) : mean(std::move(m)), cov(std::move(c)) {}
};

/// Discrete-time nonlinear state space model
///
///   x_{t+1} = f(x_t) + B v_t
///   y_t     = h(x_t) + D v_t,   v_t ~ N(0, I_{n+m}),
///
/// with B (n x (n+m)) and D (m x (n+m)) satisfying B D^T = 0, so the process
/// and measurement noises are independent even though they share one draw.
struct NonlinearStateSpaceModel {
  using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  int state_dim = 0;
  int obs_dim = 0;
  VectorFn f;
  VectorFn h;
  Eigen::MatrixXd B;
  Eigen::MatrixXd D;
  Eigen::VectorXd initial_mean;
  SpdMatrix initial_cov;

  NonlinearStateSpaceModel() = default;
  NonlinearStateSpaceModel(int n, int m, VectorFn f_fn, VectorFn h_fn, Eigen::MatrixXd b,
                           Eigen::MatrixXd d, Eigen::VectorXd x0, SpdMatrix p0);

  GaussianBelief initial_belief() const { return {initial_mean, initial_cov}; }

  /// B B^T and D D^T, cached at construction.
  const Eigen::MatrixXd& process_noise_cov() const { return bbt_; }
  const Eigen::MatrixXd& obs_noise_cov() const { return ddt_; }

 private:
  Eigen::MatrixXd bbt_;
  Eigen::MatrixXd ddt_;
};

/// State/observation record over a horizon N: states x_0..x_{N+1} (columns),
/// observations y_0..y_N.
struct Trajectory {
  Eigen::MatrixXd states;        // n x (N+2)
  Eigen::MatrixXd observations;  // m x (N+1)
  int horizon = -1;

  bool well_formed() const {
    return horizon >= 0 && states.cols() == horizon + 2 && observations.cols() == horizon + 1;
  }
};

/// Simulates the nominal model for `horizon` steps; deterministic given seed.
/// Draws x_0 from the initial belief, then one shared v_t per step.
Trajectory simulate_nominal(const NonlinearStateSpaceModel& model, int horizon,
                            std::uint64_t seed);

}  // namespace rspkf
