#include "rspkf/linear_oracle.hpp"

namespace rspkf {

NonlinearStateSpaceModel to_nonlinear(const LinearStateSpaceModel& lin) {
  const Eigen::MatrixXd a = lin.A;
  const Eigen::MatrixXd c = lin.C;
  auto f = [a](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; };
  auto h = [c](const Eigen::VectorXd& x) -> Eigen::VectorXd { return c * x; };
  return {static_cast<int>(lin.A.rows()), static_cast<int>(lin.C.rows()), f, h,
          lin.B,  lin.D, lin.initial_mean, SpdMatrix(lin.initial_cov)};
}

FilterTrace linear_robust_trace(const LinearStateSpaceModel& lin, FilterKind kind,
                                const Eigen::MatrixXd& observations,
                                const std::function<double(int)>& tolerance) {
  const Eigen::MatrixXd bbt = lin.B * lin.B.transpose();
  const Eigen::MatrixXd ddt = lin.D * lin.D.transpose();
  ResilientConfig theta_cfg;  // default bracket shrink and bisection stop rule

  FilterTrace trace;
  Eigen::VectorXd mean = lin.initial_mean;
  SpdMatrix cov{lin.initial_cov};
  for (int t = 0; t < observations.cols(); ++t) {
    const Eigen::VectorXd y = observations.col(t);
    FilterStep step;
    step.prior_mean = mean;
    step.prior_cov = cov.matrix();

    step.innov_mean = lin.C * mean;
    const SpdMatrix innov_cov(lin.C * cov.matrix() * lin.C.transpose() + ddt);
    step.innov_cov = innov_cov.matrix();
    step.cross_cov = cov.matrix() * lin.C.transpose();
    step.gain = innov_cov.solve(step.cross_cov.transpose()).transpose();

    step.updated_mean = mean + step.gain * (y - step.innov_mean);
    const SpdMatrix updated_cov(cov.matrix() -
                                step.gain * innov_cov.matrix() * step.gain.transpose());
    step.updated_cov = updated_cov.matrix();

    SpdMatrix carry_up = updated_cov;
    if (kind == FilterKind::UpdateResilient) {
      step.theta = solve_theta(updated_cov, tolerance(t), theta_cfg);
      carry_up = lf_cov(updated_cov, step.theta);
    }
    step.lf_updated_cov = carry_up.matrix();

    step.predicted_mean = lin.A * step.updated_mean;
    const SpdMatrix pred_cov(lin.A * carry_up.matrix() * lin.A.transpose() + bbt);
    step.predicted_cov = pred_cov.matrix();

    SpdMatrix carry = pred_cov;
    if (kind == FilterKind::PredictionResilient) {
      step.theta = solve_theta(pred_cov, tolerance(t), theta_cfg);
      carry = lf_cov(pred_cov, step.theta);
    }
    step.lf_predicted_cov = carry.matrix();

    mean = step.predicted_mean;
    cov = kind == FilterKind::PredictionResilient ? carry : pred_cov;
    trace.push_back(std::move(step));
  }
  return trace;
}

}  // namespace rspkf
