#include "rspkf/models.hpp"

#include <cmath>

namespace rspkf {

namespace {
constexpr double kVelocityZeroTol = 1e-9;
}

NonlinearStateSpaceModel example1_model() {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = 0.5 * x[0] + 2.5 * x[0] / (x[0] * x[0] + 1.0);
    return out;
  };
  auto h = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = x[0] * x[0] / 20.0;
    return out;
  };
  Eigen::MatrixXd B(1, 2);
  B << 0.5, 0.0;
  Eigen::MatrixXd D(1, 2);
  D << 0.0, 0.1;
  Eigen::VectorXd x0(1);
  x0 << 0.1;
  Eigen::MatrixXd p0(1, 1);
  p0 << 2.0;
  return {1, 1, f, h, B, D, x0, SpdMatrix(p0)};
}

NonlinearStateSpaceModel worstcase_model() {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(2);
    out[0] = 0.1 * x[0] + x[1] + std::cos(0.1 * x[1]) - 1.0;
    out[1] = 0.0;  // second state carries its noise channel alone
    return out;
  };
  auto h = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = x[0] - x[0] * x[0] - x[1] + x[1] * x[1];
    return out;
  };
  Eigen::MatrixXd B(2, 3);
  B << 1.40, 0.014, 0.0, 0.0, 1.40, 0.0;
  Eigen::MatrixXd D(1, 3);
  D << 0.0, 0.0, 1.0;
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd p0 = 1e-3 * Eigen::MatrixXd::Identity(2, 2);
  return {2, 1, f, h, B, D, x0, SpdMatrix(p0)};
}

void MassSpringParams::validate() const {
  const bool ok = mass > 0.0 && spring_k > 0.0 && friction_alpha > 0.0 && hardening_a >= 0.0 &&
                  mu_kinetic > 0.0 && mu_static > 0.0 && gravity > 0.0 && sampling_time > 0.0 &&
                  force_variance > 0.0 && meas_noise > 0.0 && epsilon >= 0.0;
  if (!ok) throw Error("mass-spring parameters out of range");
}

double spring_force(const MassSpringParams& p, double displacement) {
  return p.spring_k * displacement +
         p.spring_k * p.hardening_a * p.hardening_a * displacement * displacement * displacement;
}

double friction_force(const MassSpringParams& p, double displacement, double velocity) {
  double eta;
  if (std::abs(velocity) > kVelocityZeroTol) {
    eta = p.mu_kinetic * p.mass * p.gravity * (velocity > 0.0 ? 1.0 : -1.0);
  } else if (std::abs(displacement) <= p.mu_static * p.mass * p.gravity / p.spring_k) {
    eta = -p.spring_k * displacement;
  } else {
    eta = -p.mu_static * p.mass * p.gravity * (displacement > 0.0 ? 1.0 : -1.0);
  }
  return p.friction_alpha * velocity + eta;
}

NonlinearStateSpaceModel mass_spring_model(const MassSpringParams& params) {
  params.validate();
  const MassSpringParams p = params;
  auto f = [p](const Eigen::VectorXd& x) {
    const double disp = x[0];
    const double vel = x[1];
    Eigen::VectorXd out(2);
    out[0] = disp + p.sampling_time * vel;
    out[1] = vel + p.sampling_time / p.mass * (-friction_force(p, disp, vel) - spring_force(p, disp));
    return out;
  };
  auto h = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = x[0];
    return out;
  };
  Eigen::MatrixXd B(2, 3);
  B << p.epsilon, 0.0, 0.0, 0.0, std::sqrt(p.force_variance) / p.mass, 0.0;
  B *= p.sampling_time;
  Eigen::MatrixXd D(1, 3);
  D << 0.0, 0.0, p.meas_noise;
  Eigen::VectorXd x0(2);
  x0 << 3.0, 0.0;
  Eigen::MatrixXd p0 = 0.1 * Eigen::MatrixXd::Identity(2, 2);
  return {2, 1, f, h, B, D, x0, SpdMatrix(p0)};
}

}  // namespace rspkf
