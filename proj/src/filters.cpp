#include "rspkf/filters.hpp"

#include <cmath>
#include <ostream>

namespace rspkf {

namespace {

/// Shared observation-side moments of one sigma set.
struct ObsMoments {
  Eigen::MatrixXd h_images;  // m x p
  Eigen::VectorXd mean;      // m_{y_t}
  Eigen::MatrixXd cov;       // K_{y_t}, noise included
  Eigen::MatrixXd cross;     // K_{x_t y_t}
};

ObsMoments observe(const NonlinearStateSpaceModel& model, const SigmaSet& set,
                   const Eigen::VectorXd& prior_mean) {
  const long p = set.mean_weights.size();
  ObsMoments om;
  om.h_images.resize(model.obs_dim, p);
  for (long i = 0; i < p; ++i) om.h_images.col(i) = model.h(set.points.col(i));
  om.mean = om.h_images * set.mean_weights;
  om.cov = Eigen::MatrixXd::Zero(model.obs_dim, model.obs_dim);
  om.cross = Eigen::MatrixXd::Zero(model.state_dim, model.obs_dim);
  for (long i = 0; i < p; ++i) {
    const Eigen::VectorXd dh = om.h_images.col(i) - om.mean;
    om.cov.noalias() += set.cov_weights[i] * dh * dh.transpose();
    om.cross.noalias() += set.cov_weights[i] * (set.points.col(i) - prior_mean) * dh.transpose();
  }
  om.cov = symmetrize(om.cov + model.obs_noise_cov());
  return om;
}

/// Drift-side prediction moments from a sigma set at the updated belief.
void predict_moments(const NonlinearStateSpaceModel& model, const SigmaSet& set,
                     Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  const long p = set.mean_weights.size();
  Eigen::MatrixXd f_images(model.state_dim, p);
  for (long i = 0; i < p; ++i) f_images.col(i) = model.f(set.points.col(i));
  mean = f_images * set.mean_weights;
  cov = Eigen::MatrixXd::Zero(model.state_dim, model.state_dim);
  for (long i = 0; i < p; ++i) {
    const Eigen::VectorXd df = f_images.col(i) - mean;
    cov.noalias() += set.cov_weights[i] * df * df.transpose();
  }
  cov = symmetrize(cov + model.process_noise_cov());
}

FilterStep core_step(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                     const Eigen::VectorXd& y, const SigmaRule& rule, double c, double delta,
                     const BisectionSpec& bisection, FilterKind kind) {
  if (y.size() != model.obs_dim) throw DimensionMismatch("filter step: observation dimension");

  ResilientConfig theta_cfg;
  theta_cfg.theta_bracket_shrink = delta;
  theta_cfg.bisection = bisection;

  FilterStep step;
  step.prior_mean = belief.mean;
  step.prior_cov = belief.cov.matrix();

  const SigmaSet set = generate(rule, belief);
  const ObsMoments om = observe(model, set, belief.mean);
  const SpdMatrix innov_cov(om.cov);

  step.innov_mean = om.mean;
  step.innov_cov = innov_cov.matrix();
  step.cross_cov = om.cross;
  step.gain = innov_cov.solve(om.cross.transpose()).transpose();

  step.updated_mean = belief.mean + step.gain * (y - om.mean);
  const SpdMatrix updated_cov(belief.cov.matrix() -
                              step.gain * innov_cov.matrix() * step.gain.transpose());
  step.updated_cov = updated_cov.matrix();

  SpdMatrix sprout_cov = updated_cov;
  if (kind == FilterKind::UpdateResilient) {
    step.theta = solve_theta(updated_cov, c, theta_cfg);
    sprout_cov = lf_cov(updated_cov, step.theta);
  }
  step.lf_updated_cov = sprout_cov.matrix();

  const SigmaSet updated_set = generate(rule, {step.updated_mean, sprout_cov});
  Eigen::VectorXd pred_mean;
  Eigen::MatrixXd pred_cov_raw;
  predict_moments(model, updated_set, pred_mean, pred_cov_raw);
  const SpdMatrix pred_cov(pred_cov_raw);
  step.predicted_mean = pred_mean;
  step.predicted_cov = pred_cov.matrix();

  SpdMatrix lf_pred = pred_cov;
  if (kind == FilterKind::PredictionResilient) {
    step.theta = solve_theta(pred_cov, c, theta_cfg);
    lf_pred = lf_cov(pred_cov, step.theta);
  }
  step.lf_predicted_cov = lf_pred.matrix();
  return step;
}

FilterStep utf_step(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                    const Eigen::VectorXd& y, const SigmaRule& rule) {
  const JointGaussian joint = utf_density(model, belief, rule);
  FilterStep step;
  step.prior_mean = belief.mean;
  step.prior_cov = belief.cov.matrix();
  step.innov_mean = joint.mean_y;
  step.innov_cov = joint.cov_yy;
  step.cross_cov = joint.cov_xy;  // cross of next state with observation
  step.gain = SpdMatrix(joint.cov_yy).solve(joint.cov_xy.transpose()).transpose();

  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  condition_joint(joint, y, mean, cov);
  step.predicted_mean = mean;
  step.predicted_cov = SpdMatrix(cov).matrix();
  step.lf_predicted_cov = step.predicted_cov;
  // no separate update stage in the single-generation recursion
  step.updated_mean = step.predicted_mean;
  step.updated_cov = step.predicted_cov;
  step.lf_updated_cov = step.predicted_cov;
  return step;
}

}  // namespace

double gamma(const SpdMatrix& p, double theta) {
  if (theta < 0.0) throw ThetaOutOfDomain("gamma: theta must be nonnegative");
  if (theta == 0.0) return 0.0;
  const Eigen::Index n = p.dim();
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - theta * p.matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) {
    throw ThetaOutOfDomain("gamma: I - theta P is not positive definite");
  }
  const Eigen::MatrixXd lower = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = lower(i, i);
    if (!(d > 0.0)) throw ThetaOutOfDomain("gamma: I - theta P is not positive definite");
    log_det += std::log(d);
  }
  log_det *= 2.0;
  const Eigen::MatrixXd inv_lower =
      lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
  const double trace_inv = inv_lower.squaredNorm();
  return 0.5 * (log_det + trace_inv - static_cast<double>(n));
}

double solve_theta(const SpdMatrix& p, double c, const ResilientConfig& cfg) {
  if (c < 0.0) throw Error("solve_theta: tolerance must be nonnegative");
  if (c == 0.0) return 0.0;
  const double lmax = lambda_max(p.matrix());
  if (!(lmax > 0.0)) throw NotPositiveDefinite("solve_theta: nonpositive spectrum");
  const double upper = (1.0 - cfg.theta_bracket_shrink) / lmax;
  if (gamma(p, upper) < c) {
    throw ToleranceUnreachable("solve_theta: tolerance exceeds the bracket range");
  }
  BisectionSpec spec = cfg.bisection;
  spec.lower = 0.0;
  spec.upper = upper;
  return bisect([&](double theta) { return gamma(p, theta) - c; }, spec);
}

SpdMatrix lf_cov(const SpdMatrix& p, double theta) {
  if (theta < 0.0) throw ThetaOutOfDomain("lf_cov: theta must be nonnegative");
  if (theta == 0.0) return p;
  const Eigen::Index n = p.dim();
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - theta * p.matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) {
    throw ThetaOutOfDomain("lf_cov: I - theta P is not positive definite");
  }
  return SpdMatrix(llt.solve(p.matrix()));
}

void condition_joint(const JointGaussian& joint, const Eigen::VectorXd& y,
                     Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  const SpdMatrix kyy(joint.cov_yy);
  const Eigen::MatrixXd gain = kyy.solve(joint.cov_xy.transpose()).transpose();
  mean = joint.mean_x + gain * (y - joint.mean_y);
  cov = symmetrize(joint.cov_xx - gain * joint.cov_xy.transpose());
}

JointGaussian utf_density(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                          const SigmaRule& rule) {
  const SigmaSet set = generate(rule, belief);
  const long p = set.mean_weights.size();
  Eigen::MatrixXd f_images(model.state_dim, p);
  Eigen::MatrixXd h_images(model.obs_dim, p);
  for (long i = 0; i < p; ++i) {
    f_images.col(i) = model.f(set.points.col(i));
    h_images.col(i) = model.h(set.points.col(i));
  }

  JointGaussian joint;
  joint.mean_x = f_images * set.mean_weights;
  joint.mean_y = h_images * set.mean_weights;
  joint.cov_xx = Eigen::MatrixXd::Zero(model.state_dim, model.state_dim);
  joint.cov_yy = Eigen::MatrixXd::Zero(model.obs_dim, model.obs_dim);
  joint.cov_xy = Eigen::MatrixXd::Zero(model.state_dim, model.obs_dim);
  for (long i = 0; i < p; ++i) {
    const Eigen::VectorXd df = f_images.col(i) - joint.mean_x;
    const Eigen::VectorXd dh = h_images.col(i) - joint.mean_y;
    joint.cov_xx.noalias() += set.cov_weights[i] * df * df.transpose();
    joint.cov_yy.noalias() += set.cov_weights[i] * dh * dh.transpose();
    joint.cov_xy.noalias() += set.cov_weights[i] * df * dh.transpose();
  }
  joint.cov_xx = symmetrize(joint.cov_xx + model.process_noise_cov());
  joint.cov_yy = symmetrize(joint.cov_yy + model.obs_noise_cov());
  return joint;
}

JointGaussian prop1_density(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                            const Eigen::VectorXd& y, const SigmaRule& rule) {
  const SigmaSet set = generate(rule, belief);
  const long p = set.mean_weights.size();
  Eigen::MatrixXd f_images(model.state_dim, p);
  Eigen::MatrixXd h_images(model.obs_dim, p);
  for (long i = 0; i < p; ++i) {
    f_images.col(i) = model.f(set.points.col(i));
    h_images.col(i) = model.h(set.points.col(i));
  }

  JointGaussian joint;
  joint.mean_y = h_images * set.mean_weights;
  joint.cov_yy = Eigen::MatrixXd::Zero(model.obs_dim, model.obs_dim);
  Eigen::MatrixXd state_obs_cross = Eigen::MatrixXd::Zero(model.state_dim, model.obs_dim);
  for (long i = 0; i < p; ++i) {
    const Eigen::VectorXd dh = h_images.col(i) - joint.mean_y;
    joint.cov_yy.noalias() += set.cov_weights[i] * dh * dh.transpose();
    state_obs_cross.noalias() +=
        set.cov_weights[i] * (set.points.col(i) - belief.mean) * dh.transpose();
  }
  joint.cov_yy = symmetrize(joint.cov_yy + model.obs_noise_cov());
  const SpdMatrix kyy(joint.cov_yy);

  // Update map applied inside the drift: delta^i are drift images of the
  // conditioned sigma set.
  const Eigen::MatrixXd gain = kyy.solve(state_obs_cross.transpose()).transpose();
  const Eigen::VectorXd cond_mean = belief.mean + gain * (y - joint.mean_y);
  const SpdMatrix cond_cov(belief.cov.matrix() - gain * joint.cov_yy * gain.transpose());
  const SigmaSet cond_set = generate(rule, {cond_mean, cond_cov});
  Eigen::MatrixXd delta_images(model.state_dim, cond_set.mean_weights.size());
  for (long i = 0; i < cond_set.mean_weights.size(); ++i) {
    delta_images.col(i) = model.f(cond_set.points.col(i));
  }
  const Eigen::VectorXd xi = delta_images * cond_set.mean_weights;

  const Eigen::VectorXd innov_dir = kyy.solve(y - joint.mean_y);
  double denom = 1.0;
  Eigen::VectorXd numer = xi;
  for (long i = 0; i < p; ++i) {
    const double s_i = (h_images.col(i) - joint.mean_y).dot(innov_dir);
    denom -= set.cov_weights[i] * s_i;
    numer -= set.cov_weights[i] * s_i * f_images.col(i);
  }
  if (std::abs(denom) < 1e-10) {
    throw DegenerateDenominator("prop1_density: conditioning denominator vanishes");
  }
  joint.mean_x = numer / denom;

  joint.cov_xy = Eigen::MatrixXd::Zero(model.state_dim, model.obs_dim);
  for (long i = 0; i < p; ++i) {
    joint.cov_xy.noalias() += set.cov_weights[i] * (f_images.col(i) - joint.mean_x) *
                              (h_images.col(i) - joint.mean_y).transpose();
  }

  joint.cov_xx = Eigen::MatrixXd::Zero(model.state_dim, model.state_dim);
  for (long i = 0; i < cond_set.mean_weights.size(); ++i) {
    const Eigen::VectorXd dd = delta_images.col(i) - xi;
    joint.cov_xx.noalias() += cond_set.cov_weights[i] * dd * dd.transpose();
  }
  joint.cov_xx = symmetrize(joint.cov_xx + model.process_noise_cov() +
                            joint.cov_xy * kyy.solve(joint.cov_xy.transpose()));
  return joint;
}

FilterStep spkf_step(const NonlinearStateSpaceModel& model, const GaussianBelief& belief,
                     const Eigen::VectorXd& y, const SigmaRule& rule) {
  ResilientConfig defaults;
  return core_step(model, belief, y, rule, 0.0, defaults.theta_bracket_shrink,
                   defaults.bisection, FilterKind::Standard);
}

FilterStep prediction_resilient_step(const NonlinearStateSpaceModel& model,
                                     const GaussianBelief& lf_belief, const Eigen::VectorXd& y,
                                     const ResilientConfig& cfg, int t) {
  return core_step(model, lf_belief, y, cfg.rule, cfg.tolerance(t), cfg.theta_bracket_shrink,
                   cfg.bisection, FilterKind::PredictionResilient);
}

FilterStep update_resilient_step(const NonlinearStateSpaceModel& model,
                                 const GaussianBelief& belief, const Eigen::VectorXd& y,
                                 const ResilientConfig& cfg, int t) {
  return core_step(model, belief, y, cfg.rule, cfg.tolerance(t), cfg.theta_bracket_shrink,
                   cfg.bisection, FilterKind::UpdateResilient);
}

FilterTrace run_filter(const NonlinearStateSpaceModel& model, FilterKind kind,
                       const Eigen::MatrixXd& observations, const ResilientConfig& cfg) {
  if (observations.cols() > 0 && observations.rows() != model.obs_dim) {
    throw DimensionMismatch("run_filter: observation dimension");
  }
  FilterTrace trace;
  trace.reserve(observations.cols());
  GaussianBelief belief = model.initial_belief();
  for (int t = 0; t < observations.cols(); ++t) {
    const Eigen::VectorXd y = observations.col(t);
    FilterStep step;
    try {
      switch (kind) {
        case FilterKind::Standard:
          step = spkf_step(model, belief, y, cfg.rule);
          break;
        case FilterKind::PredictionResilient:
          step = prediction_resilient_step(model, belief, y, cfg, t);
          break;
        case FilterKind::UpdateResilient:
          step = update_resilient_step(model, belief, y, cfg, t);
          break;
        case FilterKind::Utf:
          step = utf_step(model, belief, y, cfg.rule);
          break;
      }
    } catch (const Error& e) {
      throw FilterStepFailed(t, e.what());
    }
    const Eigen::MatrixXd& carry = kind == FilterKind::PredictionResilient
                                       ? step.lf_predicted_cov
                                       : step.predicted_cov;
    belief = GaussianBelief(step.predicted_mean, SpdMatrix(carry));
    trace.push_back(std::move(step));
  }
  return trace;
}

void trace_to_csv(const FilterTrace& trace, std::ostream& out) {
  if (trace.empty()) {
    out << "t\n";
    return;
  }
  const Eigen::Index n = trace.front().prior_mean.size();
  out << "t";
  for (Eigen::Index i = 0; i < n; ++i) out << ",xhat_" << i;
  for (Eigen::Index i = 0; i < n; ++i) out << ",P_diag_" << i;
  out << ",theta";
  for (Eigen::Index i = 0; i < n; ++i) out << ",xupd_" << i;
  out << "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << ',' << buf;
  };
  for (std::size_t t = 0; t < trace.size(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < n; ++i) put(trace[t].prior_mean[i]);
    for (Eigen::Index i = 0; i < n; ++i) put(trace[t].prior_cov(i, i));
    put(trace[t].theta);
    for (Eigen::Index i = 0; i < n; ++i) put(trace[t].updated_mean[i]);
    out << "\n";
  }
}

}  // namespace rspkf
