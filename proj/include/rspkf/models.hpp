#pragma once

#include "rspkf/model.hpp"

namespace rspkf {

/// Scalar benchmark model with the ratio drift f(x) = x/2 + (5/2) x/(x^2+1)
/// and quadratic readout h(x) = x^2/20; x_0 ~ N(0.1, 2).
NonlinearStateSpaceModel example1_model();

/// Two-state benchmark with drift first component
/// 0.1 x1 + x2 + cos(0.1 x2) - 1 and quadratic readout
/// h(x) = x1 - x1^2 - x2 + x2^2; x_0 ~ N(0, 1e-3 I).
///
/// The source only prints the first drift component; here the second state
/// carries its noise channel alone (x2_{t+1} = 1.40 v_2), the linear part
/// left implied by the second row of B. Results that depend on this model
/// are assessed through orderings, not absolute values.
NonlinearStateSpaceModel worstcase_model();

/// Mass-spring-friction benchmark parameters (SI units).
struct MassSpringParams {
  double mass = 1.0;            // kg
  double spring_k = 10.0;       // N/m
  double friction_alpha = 0.5;  // Ns/m
  double hardening_a = 0.03;    // 1/m
  double mu_kinetic = 0.6;
  double mu_static = 0.5;
  double gravity = 9.81;        // m/s^2
  double sampling_time = 0.1;   // s
  double force_variance = 0.25; // N^2
  double meas_noise = 1.0;      // m (std dev)
  double epsilon = 1e-8;        // displacement noise scale

  void validate() const;
};

/// Restoring force of the hardening spring: k p + k a^2 p^3.
double spring_force(const MassSpringParams& p, double displacement);

/// Resistive force alpha*s + eta(x) with the three-branch static/kinetic eta.
/// Velocities below 1e-9 m/s are treated as zero.
double friction_force(const MassSpringParams& p, double displacement, double velocity);

/// Discretized mass-spring model with state x = [p, s] and h(x) = p;
/// x_0 ~ N([3, 0], 0.1 I).
NonlinearStateSpaceModel mass_spring_model(const MassSpringParams& params);

}  // namespace rspkf
