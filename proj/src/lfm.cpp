#include "rspkf/lfm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace rspkf {

namespace {

GaussianBelief prior_at(const NonlinearStateSpaceModel& model, const FilterTrace& trace, int t,
                        bool least_favorable) {
  if (t == 0) return model.initial_belief();
  const FilterStep& prev = trace[static_cast<std::size_t>(t - 1)];
  return {prev.predicted_mean,
          SpdMatrix(least_favorable ? prev.lf_predicted_cov : prev.predicted_cov)};
}

/// Joint noise covariance blockdiag(BB^T, DD^T) of the transition density.
SpdMatrix joint_noise_cov(const NonlinearStateSpaceModel& model) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n + m, n + m);
  r.topLeftCorner(n, n) = model.process_noise_cov();
  r.bottomRightCorner(m, m) = model.obs_noise_cov();
  return SpdMatrix(r);
}

/// Adaptive Monte Carlo mean of exp(log_weight()) with 95%-confidence
/// relative accuracy tau_star; grows the sample size multiplicatively (x2)
/// up to r_cap, streaming the moments. Accumulation runs relative to the
/// running maximum log weight, so scaled weights stay in (0, 1] and a heavy
/// tail draw cannot overflow; it shows up as a large reported rel_error
/// instead.
NormConstEstimate adaptive_norm_const(const std::function<double()>& log_weight,
                                      const MHConfig& mh) {
  StreamingMoments mom;
  double offset = -std::numeric_limits<double>::infinity();
  auto push = [&](double lw) {
    if (lw > offset) {
      mom.rescale(std::isfinite(offset) ? std::exp(offset - lw) : 0.0);
      offset = lw;
    }
    mom.push(std::exp(lw - offset));
  };
  for (int j = 0; j < mh.r_init; ++j) push(log_weight());

  int r = mh.r_init;
  auto rel_error = [&]() {
    return 1.96 * std::sqrt(mom.sample_variance()) /
           (std::sqrt(static_cast<double>(r)) * mom.mean());
  };
  while (rel_error() > mh.tau_star && r < mh.r_cap) {
    const int target = std::min(2 * r, mh.r_cap);
    for (; r < target; ++r) push(log_weight());
  }

  NormConstEstimate est;
  est.sample_count = r;
  est.log_value = offset + std::log(mom.mean());
  est.value = std::exp(est.log_value);
  est.sigma_hat = std::sqrt(mom.sample_variance()) * std::exp(offset);
  est.rel_error = rel_error();
  return est;
}

NormConstEstimate unit_norm_const() { return NormConstEstimate{}; }

TargetLogDensity eval_target_p_with_sweep(const NonlinearStateSpaceModel& model,
                                          const ResilientConfig& cfg, const Trajectory& traj,
                                          const MHConfig& mh, Rng& rng,
                                          const FilterTrace& trace) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  const SpdMatrix joint_cov = joint_noise_cov(model);
  const Eigen::MatrixXd joint_prec = joint_cov.inverse();

  TargetLogDensity out;
  out.norm_consts.reserve(trace.size());
  for (int t = 0; t <= traj.horizon; ++t) {
    const FilterStep& step = trace[static_cast<std::size_t>(t)];
    const Eigen::VectorXd x_t = traj.states.col(t);
    const Eigen::VectorXd y_t = traj.observations.col(t);
    Eigen::VectorXd z(n + m), mu(n + m);
    z << traj.states.col(t + 1), y_t;
    mu << model.f(x_t), model.h(x_t);
    const double log_phi = gaussian_log_pdf(z, mu, joint_cov);
    const double theta = step.theta;
    if (theta == 0.0) {
      out.log_density += log_phi;
      out.norm_consts.push_back(unit_norm_const());
      continue;
    }

    // Joint conditional blocks at the prior, with the conditioning recentred
    // on the actual observation; gives the affine dependence of the robust
    // predictor on the integrated observation.
    const GaussianBelief prior = prior_at(model, trace, t, /*least_favorable=*/true);
    const SigmaSet set = generate(cfg.rule, prior);
    const long p = set.mean_weights.size();
    Eigen::MatrixXd f_images(n, p), h_images(m, p);
    for (long i = 0; i < p; ++i) {
      f_images.col(i) = model.f(set.points.col(i));
      h_images.col(i) = model.h(set.points.col(i));
    }
    const Eigen::VectorXd& m_y = step.innov_mean;
    const SpdMatrix k_y(step.innov_cov);
    const Eigen::VectorXd innov_dir = k_y.solve(y_t - m_y);
    double denom = 1.0;
    Eigen::VectorXd numer = step.predicted_mean;
    for (long i = 0; i < p; ++i) {
      const double s_i = (h_images.col(i) - m_y).dot(innov_dir);
      denom -= set.cov_weights[i] * s_i;
      numer -= set.cov_weights[i] * s_i * f_images.col(i);
    }
    if (std::abs(denom) < 1e-10) {
      throw DegenerateDenominator("target density: conditioning denominator vanishes");
    }
    const Eigen::VectorXd m_x = numer / denom;
    Eigen::MatrixXd k_xy = Eigen::MatrixXd::Zero(n, m);
    for (long i = 0; i < p; ++i) {
      k_xy.noalias() += set.cov_weights[i] * (f_images.col(i) - m_x) *
                        (h_images.col(i) - m_y).transpose();
    }
    const Eigen::MatrixXd gain = k_y.solve(k_xy.transpose()).transpose();

    // Predictor as an affine map of z: pred(z) = Hbar z - l_t offsets.
    Eigen::MatrixXd hbar(n, n + m);
    hbar << Eigen::MatrixXd::Identity(n, n), -gain;
    const Eigen::VectorXd l = m_x - gain * m_y;

    SpdMatrix tilt_cov;  // S_t = R^{-1} - theta Hbar^T Hbar
    try {
      tilt_cov = SpdMatrix(joint_prec - theta * hbar.transpose() * hbar);
    } catch (const NotPositiveDefinite&) {
      throw NotPositiveDefinite("target density: tilted precision S_t lost definiteness");
    }
    const double tilt_const = theta * l.squaredNorm();
    const Eigen::VectorXd tilt_shift = theta * (hbar.transpose() * l);
    const double log_norm = -0.5 * (joint_cov.log_det() + tilt_cov.log_det());

    auto log_weight = [&]() {
      const Eigen::VectorXd x = rng.gaussian(prior.mean, prior.cov.chol_lower());
      Eigen::VectorXd mu_j(n + m);
      mu_j << model.f(x), model.h(x);
      const Eigen::VectorXd s_j = joint_cov.solve(mu_j) - tilt_shift;
      return -0.5 * (joint_cov.inv_quad(mu_j) - tilt_cov.inv_quad(s_j) - tilt_const) + log_norm;
    };
    const NormConstEstimate est = adaptive_norm_const(log_weight, mh);

    const double tilt = 0.5 * theta * (traj.states.col(t + 1) - step.predicted_mean).squaredNorm();
    out.log_density += tilt + log_phi - est.log_value;
    out.norm_consts.push_back(est);
  }
  return out;
}

TargetLogDensity eval_target_u_with_sweep(const NonlinearStateSpaceModel& model,
                                          const ResilientConfig& cfg, const Trajectory& traj,
                                          const MHConfig& mh, Rng& rng,
                                          const FilterTrace& trace) {
  (void)cfg;
  const SpdMatrix obs_cov{model.obs_noise_cov()};

  TargetLogDensity out;
  out.norm_consts.reserve(trace.size());
  for (int t = 0; t <= traj.horizon; ++t) {
    const FilterStep& step = trace[static_cast<std::size_t>(t)];
    const Eigen::VectorXd x_t = traj.states.col(t);
    const Eigen::VectorXd y_t = traj.observations.col(t);
    const double log_psi = gaussian_log_pdf(y_t, model.h(x_t), obs_cov);
    const double theta = step.theta;
    if (theta == 0.0) {
      out.log_density += log_psi;
      out.norm_consts.push_back(unit_norm_const());
      continue;
    }

    const GaussianBelief prior = prior_at(model, trace, t, /*least_favorable=*/false);
    const Eigen::MatrixXd& gain = step.gain;
    SpdMatrix tilt_cov;  // S_t = (DD^T)^{-1} - theta L^T L
    try {
      tilt_cov = SpdMatrix(obs_cov.inverse() - theta * gain.transpose() * gain);
    } catch (const NotPositiveDefinite&) {
      throw NotPositiveDefinite("target density: tilted precision S_t lost definiteness");
    }
    const double log_norm = -0.5 * (tilt_cov.log_det() + obs_cov.log_det());
    const Eigen::VectorXd recentred = step.prior_mean - gain * step.innov_mean;

    auto log_weight = [&]() {
      const Eigen::VectorXd x = rng.gaussian(prior.mean, prior.cov.chol_lower());
      const Eigen::VectorXd d = x - recentred;  // x - x_hat + L m_y
      const Eigen::VectorXd h_x = model.h(x);
      const Eigen::VectorXd s_j = obs_cov.solve(h_x) - theta * (gain.transpose() * d);
      const double l_j = theta * d.squaredNorm() - obs_cov.inv_quad(h_x);
      return 0.5 * (tilt_cov.inv_quad(s_j) + l_j) + log_norm;
    };
    const NormConstEstimate est = adaptive_norm_const(log_weight, mh);

    const double tilt = 0.5 * theta * (x_t - step.updated_mean).squaredNorm();
    out.log_density += tilt + log_psi - est.log_value;
    out.norm_consts.push_back(est);
  }
  return out;
}

}  // namespace

void jacobians(const NonlinearStateSpaceModel& model, const Eigen::VectorXd& x,
               Eigen::MatrixXd& A, Eigen::MatrixXd& C) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  A.resize(n, n);
  C.resize(m, n);
  Eigen::VectorXd probe = x;
  for (int i = 0; i < n; ++i) {
    const double step = 1e-6 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + step;
    const Eigen::VectorXd f_hi = model.f(probe);
    const Eigen::VectorXd h_hi = model.h(probe);
    probe[i] = x[i] - step;
    const Eigen::VectorXd f_lo = model.f(probe);
    const Eigen::VectorXd h_lo = model.h(probe);
    probe[i] = x[i];
    A.col(i) = (f_hi - f_lo) / (2.0 * step);
    C.col(i) = (h_hi - h_lo) / (2.0 * step);
  }
  if (!A.allFinite() || !C.allFinite()) {
    throw NonFiniteDerivative("jacobians: non-finite finite-difference entry");
  }
}

ProposalModelP build_proposal_p(const NonlinearStateSpaceModel& model,
                                const Eigen::MatrixXd& observations,
                                const ResilientConfig& cfg) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  const int N = static_cast<int>(observations.cols()) - 1;
  if (N < 0) throw Error("build_proposal_p: empty observation record");

  ProposalModelP pm;
  pm.horizon = N;
  pm.sweep = run_filter(model, FilterKind::PredictionResilient, observations, cfg);

  pm.A.resize(N + 1);
  pm.C.resize(N + 1);
  pm.G.resize(N + 1);
  pm.theta.resize(N + 1);
  for (int t = 0; t <= N; ++t) {
    const FilterStep& step = pm.sweep[static_cast<std::size_t>(t)];
    Eigen::MatrixXd a_upd, c_upd, a_prior, c_prior;
    jacobians(model, step.updated_mean, a_upd, c_upd);
    jacobians(model, step.prior_mean, a_prior, c_prior);
    pm.A[t] = a_upd;    // drift linearized at the updated estimate
    pm.C[t] = c_prior;  // observation linearized at the prior estimate
    pm.G[t] = a_upd * step.gain;
    pm.theta[t] = step.theta;
  }

  // Backward information recursion with zero terminal block, then the noise
  // shaping O_t and error feed H_t at each step.
  pm.omega_inv.assign(static_cast<std::size_t>(N + 2), Eigen::MatrixXd::Zero(n, n));
  pm.O.resize(N + 1);
  pm.F.resize(N + 1);
  pm.H.resize(N + 1);
  const Eigen::MatrixXd eye_nm = Eigen::MatrixXd::Identity(n + m, n + m);
  const Eigen::MatrixXd eye_n = Eigen::MatrixXd::Identity(n, n);
  for (int t = N; t >= 0; --t) {
    const Eigen::MatrixXd noise_gain = model.B - pm.G[t] * model.D;      // n x (n+m)
    const Eigen::MatrixXd closed_loop = pm.A[t] - pm.G[t] * pm.C[t];     // n x n
    const Eigen::MatrixXd tilt = pm.omega_inv[static_cast<std::size_t>(t + 1)] +
                                 pm.theta[t] * eye_n;

    Eigen::MatrixXd bracket =
        symmetrize(eye_nm - noise_gain.transpose() * tilt * noise_gain);
    Eigen::LLT<Eigen::MatrixXd> llt(bracket);
    if (llt.info() != Eigen::Success) {
      throw NotPositiveDefinite("build_proposal_p: noise shaping O_t lost definiteness");
    }
    pm.O[t] = symmetrize(llt.solve(eye_nm));
    pm.F[t] = cholesky_lower(pm.O[t]);
    pm.H[t] = pm.O[t] * noise_gain.transpose() * tilt * closed_loop;

    // (tilt^{-1} - Q)^{-1} = (I - tilt Q)^{-1} tilt, valid at tilt = 0 too.
    const Eigen::MatrixXd q = noise_gain * noise_gain.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(eye_n - tilt * q);
    if (!lu.isInvertible()) {
      throw OmegaSingular("build_proposal_p: backward recursion lost invertibility");
    }
    pm.omega_inv[static_cast<std::size_t>(t)] =
        symmetrize(closed_loop.transpose() * lu.solve(tilt) * closed_loop);
  }

  // Forward covariance of the stacked (state, error) process; the error block
  // drives the proposal transition covariance.
  pm.Pi.resize(N + 1);
  pm.Pi_e.resize(N + 1);
  pm.RL.resize(N + 1);
  Eigen::MatrixXd stacked_bd(n + m, n + m);
  stacked_bd << model.B, model.D;
  Eigen::MatrixXd pi(2 * n, 2 * n);
  const Eigen::MatrixXd p0 = model.initial_cov.matrix();
  pi << p0, p0, p0, p0;  // error at time zero equals the initial state offset
  for (int t = 0; t <= N; ++t) {
    pm.Pi[t] = pi;
    pm.Pi_e[t] = pi.bottomRightCorner(n, n);
    pm.RL[t] = SpdMatrix(stacked_bd *
                         (pm.H[t] * pm.Pi_e[t] * pm.H[t].transpose() +
                          pm.O[t]) *
                         stacked_bd.transpose());

    const Eigen::MatrixXd noise_gain = model.B - pm.G[t] * model.D;
    Eigen::MatrixXd a_bar(2 * n, 2 * n);
    a_bar << pm.A[t], model.B * pm.H[t], Eigen::MatrixXd::Zero(n, n),
        pm.A[t] - pm.G[t] * pm.C[t] + noise_gain * pm.H[t];
    Eigen::MatrixXd c_bar(m, 2 * n);
    c_bar << pm.C[t], model.D * pm.H[t];
    Eigen::MatrixXd b_bar(2 * n, n + m);
    b_bar << model.B * pm.F[t], noise_gain * pm.F[t];
    const Eigen::MatrixXd d_bar = model.D * pm.F[t];
    Eigen::MatrixXd g_stack = Eigen::MatrixXd::Zero(2 * n, m);
    g_stack.topRows(n) = pm.G[t];

    const Eigen::MatrixXd closed = a_bar - g_stack * c_bar;
    const Eigen::MatrixXd driven = b_bar - g_stack * d_bar;
    pi = symmetrize(closed * pi * closed.transpose() + driven * driven.transpose());
  }
  return pm;
}

ProposalModelU build_proposal_u(const NonlinearStateSpaceModel& model,
                                const Eigen::MatrixXd& observations,
                                const ResilientConfig& cfg) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  const int N = static_cast<int>(observations.cols()) - 1;
  if (N < 0) throw Error("build_proposal_u: empty observation record");

  ProposalModelU pm;
  pm.horizon = N;
  pm.sweep = run_filter(model, FilterKind::UpdateResilient, observations, cfg);

  pm.A.resize(N + 1);
  pm.C.resize(N + 1);
  pm.theta.resize(N + 1);
  Eigen::MatrixXd a_init, c_unused;
  jacobians(model, model.initial_mean, a_init, c_unused);
  for (int t = 0; t <= N; ++t) {
    const FilterStep& step = pm.sweep[static_cast<std::size_t>(t)];
    Eigen::MatrixXd a_upd, c_upd, a_prior, c_prior;
    jacobians(model, step.updated_mean, a_upd, c_upd);
    jacobians(model, step.prior_mean, a_prior, c_prior);
    pm.A[t] = a_upd;
    pm.C[t] = c_prior;
    pm.theta[t] = step.theta;
  }
  // drift Jacobian one step behind; before the horizon there is no
  // information, so the placeholder never influences the output
  auto a_prev = [&](int t) -> const Eigen::MatrixXd& {
    return t == 0 ? a_init : pm.A[t - 1];
  };

  pm.omega_inv.assign(static_cast<std::size_t>(N + 2), Eigen::MatrixXd::Zero(n, n));
  pm.O.resize(N + 1);
  pm.F.resize(N + 1);
  pm.Upsilon.resize(N + 1);
  pm.Delta.resize(N + 1);
  pm.Lambda.resize(N + 1);
  const Eigen::MatrixXd eye_n = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd eye_m = Eigen::MatrixXd::Identity(m, m);
  for (int t = N; t >= 0; --t) {
    const Eigen::MatrixXd& gain = pm.sweep[static_cast<std::size_t>(t)].gain;
    const double theta_next = t == N ? 0.0 : pm.theta[t + 1];
    const Eigen::MatrixXd w_next = pm.omega_inv[static_cast<std::size_t>(t + 1)] +
                                   theta_next * eye_n;

    Eigen::MatrixXd bracket = symmetrize(eye_m - gain.transpose() * w_next * gain);
    Eigen::LLT<Eigen::MatrixXd> llt(bracket);
    if (llt.info() != Eigen::Success) {
      throw NotPositiveDefinite("build_proposal_u: noise shaping O_t lost definiteness");
    }
    pm.O[t] = symmetrize(llt.solve(eye_m));
    pm.Upsilon[t] = cholesky_lower(pm.O[t]);
    pm.F[t] = -pm.O[t] * gain.transpose() * w_next * (eye_n - gain * pm.C[t]);
    pm.Delta[t] = (eye_n - gain * pm.C[t]) * a_prev(t);
    pm.Lambda[t] = eye_n - gain * pm.F[t] - gain * pm.C[t];

    pm.omega_inv[static_cast<std::size_t>(t)] = symmetrize(
        a_prev(t).transpose() * pm.F[t].transpose() * pm.O[t] * pm.F[t] * a_prev(t) +
        pm.Delta[t].transpose() *
            (pm.theta[t] * eye_n + pm.omega_inv[static_cast<std::size_t>(t + 1)]) *
            pm.Delta[t]);
  }

  // Forward covariance of the stacked error process. The pre-horizon error
  // and noise are zero, so the recursion starts from a zero matrix and the
  // first measurement covariance reduces to O_0.
  pm.Pi.resize(N + 1);
  pm.Pi_e.resize(N + 1);
  pm.QL.resize(N + 1);
  Eigen::MatrixXd xi_cov = Eigen::MatrixXd::Zero(n + m, n + m);
  xi_cov.topLeftCorner(n, n) = model.process_noise_cov();
  xi_cov.bottomRightCorner(m, m) = eye_m;
  Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  for (int t = 0; t <= N; ++t) {
    const Eigen::MatrixXd& gain = pm.sweep[static_cast<std::size_t>(t)].gain;
    const Eigen::MatrixXd coupled = gain * pm.F[t] * a_prev(t);

    Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(3 * n, 3 * n);
    gamma.block(0, 0, n, n) = pm.Delta[t];
    gamma.block(0, n, n, n) = -coupled;
    gamma.block(0, 2 * n, n, n) = pm.Lambda[t];
    gamma.block(n, n, n, n) = pm.Delta[t] - coupled;
    gamma.block(n, 2 * n, n, n) = pm.Lambda[t];

    Eigen::MatrixXd x_t = Eigen::MatrixXd::Zero(3 * n, n + m);
    x_t.block(0, n, n, m) = -gain * pm.Upsilon[t];
    x_t.block(n, n, n, m) = -gain * pm.Upsilon[t];
    x_t.block(2 * n, 0, n, n) = eye_n;  // keeps the process-noise block alive

    pi = symmetrize(gamma * pi * gamma.transpose() + x_t * xi_cov * x_t.transpose());
    pm.Pi[t] = pi;
    pm.Pi_e[t] = pi.block(n, n, n, n);

    if (t == 0) {
      pm.QL[t] = SpdMatrix(pm.O[t]);
    } else {
      const Eigen::MatrixXd feed = pm.F[t] * a_prev(t);
      pm.QL[t] = SpdMatrix(feed * pm.Pi_e[t - 1] * feed.transpose() +
                           pm.F[t] * model.process_noise_cov() * pm.F[t].transpose() +
                           pm.O[t]);
    }
  }
  return pm;
}

Trajectory sample_proposal(const ProposalModelP& pm, const NonlinearStateSpaceModel& model,
                           Rng& rng, Eigen::MatrixXd* error_path) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  const int N = pm.horizon;
  Trajectory traj;
  traj.horizon = N;
  traj.states.resize(n, N + 2);
  traj.observations.resize(m, N + 1);
  if (error_path) error_path->resize(n, N + 1);

  traj.states.col(0) = rng.gaussian(model.initial_mean, model.initial_cov.chol_lower());
  Eigen::VectorXd err = traj.states.col(0) - model.initial_mean;
  for (int t = 0; t <= N; ++t) {
    if (error_path) error_path->col(t) = err;
    const Eigen::VectorXd x = traj.states.col(t);
    const Eigen::VectorXd eps = rng.normal_vector(n + m);
    const Eigen::VectorXd w = pm.H[t] * err + pm.F[t] * eps;
    traj.observations.col(t) = model.h(x) + model.D * w;
    traj.states.col(t + 1) = model.f(x) + model.B * w;
    const Eigen::MatrixXd noise_gain = model.B - pm.G[t] * model.D;
    err = (pm.A[t] - pm.G[t] * pm.C[t] + noise_gain * pm.H[t]) * err +
          noise_gain * (pm.F[t] * eps);
  }
  return traj;
}

Trajectory sample_proposal(const ProposalModelU& pm, const NonlinearStateSpaceModel& model,
                           Rng& rng) {
  const int n = model.state_dim;
  const int m = model.obs_dim;
  const int N = pm.horizon;
  Trajectory traj;
  traj.horizon = N;
  traj.states.resize(n, N + 2);
  traj.observations.resize(m, N + 1);

  traj.states.col(0) = rng.gaussian(model.initial_mean, model.initial_cov.chol_lower());
  Eigen::VectorXd err = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v_prev = Eigen::VectorXd::Zero(n + m);
  Eigen::MatrixXd a_init, c_unused;
  jacobians(model, model.initial_mean, a_init, c_unused);
  for (int t = 0; t <= N; ++t) {
    const Eigen::MatrixXd& a_prev = t == 0 ? a_init : pm.A[t - 1];
    const Eigen::MatrixXd& gain = pm.sweep[static_cast<std::size_t>(t)].gain;
    const Eigen::VectorXd x = traj.states.col(t);
    const Eigen::VectorXd upsilon_draw = pm.Upsilon[t] * rng.normal_vector(m);
    traj.observations.col(t) =
        model.h(x) + pm.F[t] * (a_prev * err) + pm.F[t] * (model.B * v_prev) + upsilon_draw;
    err = (pm.Delta[t] - gain * pm.F[t] * a_prev) * err + pm.Lambda[t] * (model.B * v_prev) -
          gain * upsilon_draw;
    const Eigen::VectorXd v = rng.normal_vector(n + m);
    traj.states.col(t + 1) = model.f(x) + model.B * v;
    v_prev = v;
  }
  return traj;
}

Trajectory sample_proposal(const ProposalModelP& pm, const NonlinearStateSpaceModel& model,
                           std::uint64_t seed) {
  Rng rng(seed);
  return sample_proposal(pm, model, rng);
}

Trajectory sample_proposal(const ProposalModelU& pm, const NonlinearStateSpaceModel& model,
                           std::uint64_t seed) {
  Rng rng(seed);
  return sample_proposal(pm, model, rng);
}

double eval_proposal_logdensity(const ProposalModelP& pm, const NonlinearStateSpaceModel& model,
                                const Trajectory& traj) {
  if (traj.horizon != pm.horizon || !traj.well_formed()) {
    throw DimensionMismatch("eval_proposal_logdensity: trajectory does not match the model");
  }
  const int n = model.state_dim;
  const int m = model.obs_dim;
  double log_density = 0.0;
  Eigen::VectorXd z(n + m), mu(n + m);
  for (int t = 0; t <= pm.horizon; ++t) {
    const Eigen::VectorXd x = traj.states.col(t);
    z << traj.states.col(t + 1), traj.observations.col(t);
    mu << model.f(x), model.h(x);
    log_density += gaussian_log_pdf(z, mu, pm.RL[t]);
  }
  return log_density;
}

double eval_proposal_logdensity(const ProposalModelU& pm, const NonlinearStateSpaceModel& model,
                                const Trajectory& traj) {
  if (traj.horizon != pm.horizon || !traj.well_formed()) {
    throw DimensionMismatch("eval_proposal_logdensity: trajectory does not match the model");
  }
  double log_density = 0.0;
  for (int t = 0; t <= pm.horizon; ++t) {
    log_density +=
        gaussian_log_pdf(traj.observations.col(t), model.h(traj.states.col(t)), pm.QL[t]);
  }
  return log_density;
}

TargetLogDensity eval_target_logdensity_p(const NonlinearStateSpaceModel& model,
                                          const ResilientConfig& cfg, const Trajectory& traj,
                                          const MHConfig& mh, Rng& rng) {
  if (!traj.well_formed()) throw DimensionMismatch("eval_target_logdensity_p: bad trajectory");
  const FilterTrace trace =
      run_filter(model, FilterKind::PredictionResilient, traj.observations, cfg);
  return eval_target_p_with_sweep(model, cfg, traj, mh, rng, trace);
}

TargetLogDensity eval_target_logdensity_u(const NonlinearStateSpaceModel& model,
                                          const ResilientConfig& cfg, const Trajectory& traj,
                                          const MHConfig& mh, Rng& rng) {
  if (!traj.well_formed()) throw DimensionMismatch("eval_target_logdensity_u: bad trajectory");
  const FilterTrace trace = run_filter(model, FilterKind::UpdateResilient, traj.observations, cfg);
  return eval_target_u_with_sweep(model, cfg, traj, mh, rng, trace);
}

MHResult mh_sample(const NonlinearStateSpaceModel& model, const ResilientConfig& cfg,
                   UncertaintyCase kind, int horizon, const MHConfig& mh,
                   std::size_t sample_count) {
  if (horizon < 1) throw Error("mh_sample: horizon must be >= 1");

  Rng proposal_rng(derive_seed(mh.seed, 1));
  Rng mc_rng(derive_seed(mh.seed, 2));
  Rng accept_rng(derive_seed(mh.seed, 3));

  const bool prediction = kind == UncertaintyCase::Prediction;

  struct ChainState {
    Trajectory traj;
    TargetLogDensity target;
    ProposalModelP pm_p;
    ProposalModelU pm_u;
  };

  auto make_state = [&](Trajectory traj) {
    ChainState st;
    st.traj = std::move(traj);
    if (prediction) {
      st.pm_p = build_proposal_p(model, st.traj.observations, cfg);
      st.target = eval_target_p_with_sweep(model, cfg, st.traj, mh, mc_rng, st.pm_p.sweep);
    } else {
      st.pm_u = build_proposal_u(model, st.traj.observations, cfg);
      st.target = eval_target_u_with_sweep(model, cfg, st.traj, mh, mc_rng, st.pm_u.sweep);
    }
    return st;
  };
  // A candidate whose tilted normalizer diverges (S_t loses definiteness) or
  // whose conditioning denominator collapses has target density zero in the
  // limit; such candidates are rejected instead of aborting the chain.
  auto try_make_state = [&](Trajectory traj, ChainState& out) {
    try {
      out = make_state(std::move(traj));
      return true;
    } catch (const NotPositiveDefinite&) {
      return false;
    } catch (const DegenerateDenominator&) {
      return false;
    }
  };
  auto draw_candidate = [&](const ChainState& st) {
    return prediction ? sample_proposal(st.pm_p, model, proposal_rng)
                      : sample_proposal(st.pm_u, model, proposal_rng);
  };
  auto log_q = [&](const ChainState& st, const Trajectory& traj) {
    return prediction ? eval_proposal_logdensity(st.pm_p, model, traj)
                      : eval_proposal_logdensity(st.pm_u, model, traj);
  };

  MHResult result;
  result.samples.reserve(sample_count);

  ChainState current;
  {
    int attempt = 0;
    while (!try_make_state(simulate_nominal(model, horizon, derive_seed(mh.seed, 0, attempt)),
                           current)) {
      if (++attempt >= 64) {
        throw ChainStalled("mh_sample: no feasible initial state from the nominal model");
      }
    }
  }
  long accepted_total = 0;
  for (long k = 0; result.samples.size() < sample_count; ++k) {
    if (k >= mh.max_proposals) {
      throw ChainStalled(accepted_total == 0
                             ? "mh_sample: no acceptances within the proposal budget"
                             : "mh_sample: proposal budget exhausted before enough samples");
    }
    ChainState candidate;
    if (!try_make_state(draw_candidate(current), candidate)) {
      result.acceptance_log.push_back({k, false, 0.0, 0});
      continue;
    }

    long r_total = 0;
    for (const NormConstEstimate& est : candidate.target.norm_consts) {
      if (est.sample_count > 0) {
        result.r_log.push_back(est.sample_count);
        r_total += est.sample_count;
      }
    }

    const double log_alpha =
        std::min(0.0, candidate.target.log_density - current.target.log_density +
                          log_q(candidate, current.traj) - log_q(current, candidate.traj));
    const bool accept = std::log(accept_rng.uniform()) <= log_alpha;
    result.acceptance_log.push_back({k, accept, std::exp(log_alpha), r_total});

    if (accept) {
      current = std::move(candidate);
      ++accepted_total;
      if (accepted_total > mh.burn_in &&
          (accepted_total - mh.burn_in - 1) % std::max(1, mh.thinning) == 0) {
        result.samples.push_back(current.traj);
      }
    }
  }
  return result;
}

}  // namespace rspkf
