#pragma once

#include "rspkf/filters.hpp"

namespace rspkf {

/// Linear-Gaussian state space model x' = A x + B v, y = C x + D v.
struct LinearStateSpaceModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd C;
  Eigen::MatrixXd B;
  Eigen::MatrixXd D;
  Eigen::VectorXd initial_mean;
  Eigen::MatrixXd initial_cov;
};

/// Wraps the linear model as a NonlinearStateSpaceModel (affine f, h).
NonlinearStateSpaceModel to_nonlinear(const LinearStateSpaceModel& lin);

/// Robust filter recursions with exact Gaussian moment propagation instead of
/// sigma-point matching. Serves as the closed-form oracle for the resilient
/// filters on linear models; kind Utf falls back to Standard (they coincide
/// for affine maps).
FilterTrace linear_robust_trace(const LinearStateSpaceModel& lin, FilterKind kind,
                                const Eigen::MatrixXd& observations,
                                const std::function<double(int)>& tolerance);

}  // namespace rspkf
