#include "rspkf/lfm.hpp"

#include <cmath>

#include "doctest.h"
#include "rspkf/linear_oracle.hpp"
#include "rspkf/models.hpp"
#include "test_util.hpp"

using namespace rspkf;

namespace {

/// Reference multivariate normal log-pdf via eigendecomposition, independent
/// of the Cholesky-based implementation.
double mvn_logpdf_reference(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd evals = es.eigenvalues();
  const Eigen::VectorXd proj = es.eigenvectors().transpose() * (x - mean);
  double quad = 0.0, log_det = 0.0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    quad += proj[i] * proj[i] / evals[i];
    log_det += std::log(evals[i]);
  }
  const double k = static_cast<double>(x.size());
  return -0.5 * (k * std::log(2.0 * M_PI) + log_det + quad);
}

/// 1-D model with small drift and readout slopes: the tilted normalizing
/// integrals stay finite with margin, so Monte Carlo and quadrature both
/// genuinely converge.
NonlinearStateSpaceModel tame_scalar_model(double obs_noise = 0.3) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = 0.5 * x[0] + 0.5 * x[0] / (x[0] * x[0] + 1.0);
    return out;
  };
  auto h = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out[0] = 0.4 * x[0] + 0.3 * std::sin(x[0]);
    return out;
  };
  Eigen::MatrixXd b(1, 2), d(1, 2);
  b << 0.5, 0.0;
  d << 0.0, obs_noise;
  Eigen::VectorXd x0(1);
  x0 << 0.2;
  Eigen::MatrixXd p0(1, 1);
  p0 << 0.5;
  return {1, 1, f, h, b, d, x0, SpdMatrix(p0)};
}

LinearStateSpaceModel small_linear(Rng& rng) {
  LinearStateSpaceModel lin;
  lin.A = testutil::random_stable(2, rng, 0.9);
  lin.C = testutil::random_matrix(1, 2, rng);
  lin.B = Eigen::MatrixXd::Zero(2, 3);
  lin.B.leftCols(2) = 0.4 * testutil::random_matrix(2, 2, rng) +
                      Eigen::MatrixXd::Identity(2, 2);
  lin.D = Eigen::MatrixXd::Zero(1, 3);
  lin.D(0, 2) = 0.8 + 0.4 * rng.uniform();
  lin.initial_mean = testutil::random_vector(2, rng);
  lin.initial_cov = testutil::random_spd(2, rng, 0.2);
  return lin;
}

}  // namespace

TEST_CASE("jacobians by central differences") {
  Rng rng(71);
  const Eigen::MatrixXd a = testutil::random_matrix(3, 3, rng);
  auto linear_f = [&a](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; };
  auto const_h = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(1); };
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(3, 4);
  b.leftCols(3) = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(1, 4);
  d(0, 3) = 1.0;
  const NonlinearStateSpaceModel model(3, 1, linear_f, const_h, b, d, Eigen::VectorXd::Zero(3),
                                       SpdMatrix(Eigen::MatrixXd::Identity(3, 3)));
  Eigen::MatrixXd ja, jc;
  jacobians(model, testutil::random_vector(3, rng), ja, jc);
  CHECK((ja - a).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(jc.cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  const NonlinearStateSpaceModel ex = example1_model();
  Eigen::MatrixXd ea, ec;
  Eigen::VectorXd at(1);
  at << 2.0;
  jacobians(ex, at, ea, ec);
  CHECK(ec(0, 0) == doctest::Approx(0.2).epsilon(1e-6));  // d/dx x^2/20 at 2
}

TEST_CASE("prediction-case proposal: terminal conditions and zero-tolerance collapse") {
  const NonlinearStateSpaceModel model = example1_model();
  const Trajectory traj = simulate_nominal(model, 12, 314);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::unscented(0.5, 2.0, 2.0), 0.0);
  const ProposalModelP pm = build_proposal_p(model, traj.observations, cfg);

  CHECK(pm.omega_inv.back().norm() == 0.0);
  for (int t = 0; t <= pm.horizon; ++t) {
    // with theta = 0 the backward pass stays at zero, so O = I and H = 0
    CHECK((pm.O[t] - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
    CHECK((pm.F[t] - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
    CHECK(pm.H[t].norm() < 1e-12);
    // transition covariance collapses to blockdiag(BB^T, DD^T)
    CHECK(pm.RL[t].matrix()(0, 0) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(pm.RL[t].matrix()(1, 1) == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(pm.RL[t].matrix()(0, 1) == doctest::Approx(0.0));
  }

  // degenerate proposal (H = 0, F = I) replays the nominal draw stream
  const Trajectory direct = simulate_nominal(model, 12, 99);
  Rng rng(99);
  const Trajectory via_pm = sample_proposal(pm, model, rng);
  CHECK((direct.states - via_pm.states).norm() == 0.0);
  CHECK((direct.observations - via_pm.observations).norm() == 0.0);
}

TEST_CASE("update-case proposal: terminal conditions and zero-tolerance collapse") {
  const NonlinearStateSpaceModel model = example1_model();
  const Trajectory traj = simulate_nominal(model, 10, 2024);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::cubature(), 0.0);
  const ProposalModelU pm = build_proposal_u(model, traj.observations, cfg);

  CHECK(pm.omega_inv.back().norm() == 0.0);
  for (int t = 0; t <= pm.horizon; ++t) {
    CHECK((pm.O[t] - Eigen::MatrixXd::Identity(1, 1)).norm() < 1e-12);
    CHECK(pm.F[t].norm() < 1e-12);
    // measurement covariance = O_t when the error feed vanishes
    CHECK(pm.QL[t].matrix()(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(pm.QL[0].matrix()(0, 0) == doctest::Approx(pm.O[0](0, 0)).epsilon(1e-12));
}

TEST_CASE("proposal sampling is deterministic given the seed") {
  const NonlinearStateSpaceModel model = worstcase_model();
  const Trajectory traj = simulate_nominal(model, 15, 555);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::unscented(0.5, 2.0, 1.0), 1e-3);

  const ProposalModelP pm_p = build_proposal_p(model, traj.observations, cfg);
  const Trajectory a = sample_proposal(pm_p, model, std::uint64_t{42});
  const Trajectory b = sample_proposal(pm_p, model, std::uint64_t{42});
  CHECK((a.states - b.states).norm() == 0.0);
  CHECK(a.states.allFinite());
  CHECK(a.observations.allFinite());
  CHECK(a.states.cols() == 17);
  CHECK(a.observations.cols() == 16);

  const ProposalModelU pm_u = build_proposal_u(model, traj.observations, cfg);
  const Trajectory c = sample_proposal(pm_u, model, std::uint64_t{43});
  const Trajectory d = sample_proposal(pm_u, model, std::uint64_t{43});
  CHECK((c.states - d.states).norm() == 0.0);
  CHECK(c.states.allFinite());
}

TEST_CASE("proposal log-density closed forms") {
  const NonlinearStateSpaceModel model = example1_model();
  const Trajectory data = simulate_nominal(model, 6, 808);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::cubature(), 1e-3);
  const ProposalModelP pm = build_proposal_p(model, data.observations, cfg);

  // place every z_t exactly at its conditional mean
  Trajectory at_mean = data;
  for (int t = 0; t <= pm.horizon; ++t) {
    const Eigen::VectorXd x = at_mean.states.col(t);
    at_mean.states.col(t + 1) = model.f(x);
    at_mean.observations.col(t) = model.h(x);
  }
  double expected = 0.0;
  for (int t = 0; t <= pm.horizon; ++t) {
    expected += -0.5 * (2.0 * std::log(2.0 * M_PI) + pm.RL[t].log_det());
  }
  CHECK(eval_proposal_logdensity(pm, model, at_mean) ==
        doctest::Approx(expected).epsilon(1e-12));

  // doubling one standardized residual quadruples its quadratic cost; use
  // the terminal block so no other transition mean moves
  Trajectory shifted = at_mean;
  const Eigen::VectorXd res = pm.RL[6].chol_lower().col(0);
  shifted.states.col(7) += res.head(1);
  shifted.observations.col(6) += res.tail(1);
  const double base = eval_proposal_logdensity(pm, model, at_mean);
  const double one = eval_proposal_logdensity(pm, model, shifted);
  shifted.states.col(7) += res.head(1);
  shifted.observations.col(6) += res.tail(1);
  const double two = eval_proposal_logdensity(pm, model, shifted);
  CHECK(one - base == doctest::Approx(-0.5).epsilon(1e-9));
  CHECK(two - base == doctest::Approx(4.0 * (one - base)).epsilon(1e-9));

  // cross-check against an independent normal log-pdf at random points
  Rng rng(4242);
  for (int probe = 0; probe < 10; ++probe) {
    Trajectory z = data;
    z.states = data.states + testutil::random_matrix(1, 8, rng);
    z.observations = data.observations + testutil::random_matrix(1, 7, rng);
    double reference = 0.0;
    for (int t = 0; t <= pm.horizon; ++t) {
      Eigen::VectorXd zt(2), mu(2);
      zt << z.states(0, t + 1), z.observations(0, t);
      mu << model.f(z.states.col(t))[0], model.h(z.states.col(t))[0];
      reference += mvn_logpdf_reference(zt, mu, pm.RL[t].matrix());
    }
    CHECK(eval_proposal_logdensity(pm, model, z) ==
          doctest::Approx(reference).epsilon(1e-10));
  }
}

TEST_CASE("streaming moments equal the batch statistics") {
  Rng rng(515);
  std::vector<double> values;
  StreamingMoments mom;
  for (int i = 0; i < 1000; ++i) {
    const double v = std::exp(rng.normal());
    values.push_back(v);
    mom.push(v);
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size() - 1);
  CHECK(mom.mean() == doctest::Approx(mean).epsilon(1e-10));
  CHECK(mom.sample_variance() == doctest::Approx(var).epsilon(1e-10));
}

TEST_CASE("linear proposal model realizes the tilted joint density exactly") {
  // On an affine model the construction is exact: assemble the tilted joint
  // Gaussian over all states and observations by brute force and check that
  // the proposal mechanism reproduces its one-step conditionals.
  Rng rng(661);
  const LinearStateSpaceModel lin = small_linear(rng);
  const NonlinearStateSpaceModel model = to_nonlinear(lin);
  const int n = 2, m = 1, N = 8;
  const double c = 0.05;
  const Trajectory data = simulate_nominal(model, N, 10101);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::cubature(), c);
  const ProposalModelP pm = build_proposal_p(model, data.observations, cfg);

  // estimate coefficient maps: xhat_t = alpha_t xhat_0 + sum_s beta_t[s] y_s
  std::vector<Eigen::MatrixXd> alpha(N + 2), beta((N + 2));
  alpha[0] = Eigen::MatrixXd::Identity(n, n);
  beta[0] = Eigen::MatrixXd::Zero(n, m * (N + 1));
  for (int t = 0; t <= N; ++t) {
    const Eigen::MatrixXd closed = pm.A[t] - pm.G[t] * pm.C[t];
    alpha[t + 1] = closed * alpha[t];
    beta[t + 1] = closed * beta[t];
    beta[t + 1].middleCols(m * t, m) += pm.G[t];
  }

  // joint over V = (x_0..x_{N+1}, y_0..y_N): nominal factors + tilts
  const int nx = n * (N + 2);
  const int nv = nx + m * (N + 1);
  auto xidx = [&](int t) { return n * t; };
  auto yidx = [&](int t) { return nx + m * t; };
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(nv, nv);
  const Eigen::MatrixXd p0_inv = model.initial_cov.inverse();
  prec.block(0, 0, n, n) += p0_inv;
  const Eigen::MatrixXd bb_inv = SpdMatrix(model.process_noise_cov()).inverse();
  const Eigen::MatrixXd dd_inv = SpdMatrix(model.obs_noise_cov()).inverse();
  for (int t = 0; t <= N; ++t) {
    Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(n, nv);  // x_{t+1} - A x_t
    gx.middleCols(xidx(t + 1), n) = Eigen::MatrixXd::Identity(n, n);
    gx.middleCols(xidx(t), n) = -lin.A;
    prec += gx.transpose() * bb_inv * gx;
    Eigen::MatrixXd gy = Eigen::MatrixXd::Zero(m, nv);  // y_t - C x_t
    gy.middleCols(yidx(t), m) = Eigen::MatrixXd::Identity(m, m);
    gy.middleCols(xidx(t), n) = -lin.C;
    prec += gy.transpose() * dd_inv * gy;
    Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(n, nv);  // x_{t+1} - xhat_{t+1}(Y_t)
    gt.middleCols(xidx(t + 1), n) = Eigen::MatrixXd::Identity(n, n);
    gt.middleCols(nx, m * (N + 1)) = -beta[t + 1];
    prec -= pm.theta[t] * gt.transpose() * gt;
  }
  const Eigen::MatrixXd cov_joint = prec.inverse();

  Eigen::MatrixXd stacked(n + m, n + m);
  stacked << model.B, model.D;
  for (int t = 0; t <= N; ++t) {
    // conditional of z_t = (x_{t+1}, y_t) given (x_t, y_0..y_{t-1})
    std::vector<int> keep, given;
    for (int i = 0; i < n; ++i) keep.push_back(xidx(t + 1) + i);
    for (int i = 0; i < m; ++i) keep.push_back(yidx(t) + i);
    for (int i = 0; i < n; ++i) given.push_back(xidx(t) + i);
    for (int s = 0; s < t; ++s) {
      for (int i = 0; i < m; ++i) given.push_back(yidx(s) + i);
    }
    const int nk = static_cast<int>(keep.size());
    const int ng = static_cast<int>(given.size());
    Eigen::MatrixXd s11(nk, nk), s12(nk, ng), s22(ng, ng);
    for (int i = 0; i < nk; ++i) {
      for (int j = 0; j < nk; ++j) s11(i, j) = cov_joint(keep[i], keep[j]);
      for (int j = 0; j < ng; ++j) s12(i, j) = cov_joint(keep[i], given[j]);
    }
    for (int i = 0; i < ng; ++i) {
      for (int j = 0; j < ng; ++j) s22(i, j) = cov_joint(given[i], given[j]);
    }
    const Eigen::MatrixXd cond_map = s12 * s22.inverse();
    const Eigen::MatrixXd cond_cov = s11 - cond_map * s12.transpose();

    const Eigen::MatrixXd mech_cov = stacked * pm.O[t] * stacked.transpose();
    CHECK((cond_cov - mech_cov).cwiseAbs().maxCoeff() < 1e-9);

    // mechanism mean map: [A; C] x_t + stacked H_t (x_t - xhat_t(Y_{t-1}))
    Eigen::MatrixXd mech_map = Eigen::MatrixXd::Zero(nk, ng);
    const Eigen::MatrixXd feed = stacked * pm.H[t];
    mech_map.leftCols(n).topRows(n) = lin.A;
    mech_map.leftCols(n).bottomRows(m) = lin.C;
    mech_map.leftCols(n) += feed;
    for (int s = 0; s < t; ++s) {
      mech_map.middleCols(n + m * s, m) = -feed * beta[t].middleCols(m * s, m);
    }
    CHECK((cond_map - mech_map).cwiseAbs().maxCoeff() < 1e-9);

  }

  // The forward covariance pass describes the sampling mechanism: the
  // marginal covariance of the stacked transition residual over sampled
  // trajectories must reproduce R^L_t.
  Rng mc_rng(777);
  std::vector<Eigen::MatrixXd> resid_cov(
      static_cast<std::size_t>(N + 1), Eigen::MatrixXd::Zero(n + m, n + m));
  const int draws = 20000;
  for (int s = 0; s < draws; ++s) {
    const Trajectory traj = sample_proposal(pm, model, mc_rng);
    for (int t = 0; t <= N; ++t) {
      Eigen::VectorXd resid(n + m);
      resid << traj.states.col(t + 1) - lin.A * traj.states.col(t),
          traj.observations.col(t) - lin.C * traj.states.col(t);
      resid_cov[static_cast<std::size_t>(t)].noalias() += resid * resid.transpose();
    }
  }
  for (int t = 0; t <= N; ++t) {
    const Eigen::MatrixXd empirical = resid_cov[static_cast<std::size_t>(t)] / double(draws);
    const Eigen::MatrixXd expected = pm.RL[t].matrix();
    // 3-sigma-ish band for second-moment estimates at this sample size
    CHECK((empirical - expected).cwiseAbs().maxCoeff() <
          0.05 * expected.cwiseAbs().maxCoeff() + 1e-3);
  }
}

TEST_CASE("target density with zero tolerance reduces to the nominal factors") {
  const NonlinearStateSpaceModel model = example1_model();
  const Trajectory traj = simulate_nominal(model, 5, 17);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::cubature(), 0.0);
  MHConfig mh;
  Rng rng(1);

  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(2, 2);
  r(0, 0) = 0.25;
  r(1, 1) = 0.01;
  const SpdMatrix r_spd(r);
  double nominal = 0.0;
  for (int t = 0; t <= traj.horizon; ++t) {
    Eigen::VectorXd z(2), mu(2);
    z << traj.states(0, t + 1), traj.observations(0, t);
    mu << model.f(traj.states.col(t))[0], model.h(traj.states.col(t))[0];
    nominal += gaussian_log_pdf(z, mu, r_spd);
  }
  const TargetLogDensity p_eval = eval_target_logdensity_p(model, cfg, traj, mh, rng);
  CHECK(p_eval.log_density == doctest::Approx(nominal).epsilon(1e-10));
  for (const NormConstEstimate& est : p_eval.norm_consts) {
    CHECK(est.value == 1.0);
    CHECK(est.sample_count == 0);
  }

  const SpdMatrix ddt{model.obs_noise_cov()};
  double nominal_obs = 0.0;
  for (int t = 0; t <= traj.horizon; ++t) {
    nominal_obs +=
        gaussian_log_pdf(traj.observations.col(t), model.h(traj.states.col(t)), ddt);
  }
  const TargetLogDensity u_eval = eval_target_logdensity_u(model, cfg, traj, mh, rng);
  CHECK(u_eval.log_density == doctest::Approx(nominal_obs).epsilon(1e-10));
}

TEST_CASE("adaptive estimates honor the accuracy contract") {
  const NonlinearStateSpaceModel model = tame_scalar_model();
  const Trajectory traj = simulate_nominal(model, 5, 23);
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::unscented(0.5, 2.0, 2.0), 1e-2);
  MHConfig mh;
  Rng rng(2);
  for (const TargetLogDensity& eval :
       {eval_target_logdensity_p(model, cfg, traj, mh, rng),
        eval_target_logdensity_u(model, cfg, traj, mh, rng)}) {
    CHECK(std::isfinite(eval.log_density));
    for (const NormConstEstimate& est : eval.norm_consts) {
      CHECK(est.sample_count >= mh.r_init);
      CHECK(est.sample_count <= mh.r_cap);
      const bool met = est.rel_error <= mh.tau_star || est.sample_count == mh.r_cap;
      CHECK(met);
      CHECK(est.rel_error ==
            doctest::Approx(1.96 * est.sigma_hat /
                            (std::sqrt(double(est.sample_count)) * est.value))
                .epsilon(1e-9));
      CHECK(est.value > 0.0);
    }
  }
}

namespace {

/// Tensor Gauss-Hermite evaluation of the prediction-case normalizing
/// integral: expectation of the tilt over (x_t, z_t), with the affine
/// predictor blocks taken from the two-stage joint density (an independent
/// code path from the evaluator's completed-square weight).
double quadrature_norm_const_p(const NonlinearStateSpaceModel& model, const SigmaRule& rule,
                               const GaussianBelief& prior, const Eigen::VectorXd& y,
                               double theta, int order) {
  const JointGaussian joint = prop1_density(model, prior, y, rule);
  const double gain = joint.cov_xy(0, 0) / joint.cov_yy(0, 0);
  const double offset = joint.mean_x[0] - gain * joint.mean_y[0];
  const double b_std = std::sqrt(model.process_noise_cov()(0, 0));
  const double d_std = std::sqrt(model.obs_noise_cov()(0, 0));
  const double p_std = std::sqrt(prior.cov.matrix()(0, 0));

  Eigen::VectorXd nodes, weights;
  gauss_hermite_nodes(order, nodes, weights);
  double total = 0.0;
  Eigen::VectorXd probe(1);
  for (int i = 0; i < order; ++i) {
    probe[0] = prior.mean[0] + p_std * nodes[i];
    const double fx = model.f(probe)[0];
    const double hx = model.h(probe)[0];
    double inner = 0.0;
    for (int j = 0; j < order; ++j) {
      const double x_next = fx + b_std * nodes[j];
      for (int k = 0; k < order; ++k) {
        const double y_node = hx + d_std * nodes[k];
        const double dev = x_next - gain * y_node - offset;
        inner += weights[j] * weights[k] * std::exp(0.5 * theta * dev * dev);
      }
    }
    total += weights[i] * inner;
  }
  return total;
}

/// Update-case counterpart: expectation of the tilt over (x_t, y_t).
double quadrature_norm_const_u(const NonlinearStateSpaceModel& model,
                               const GaussianBelief& prior, const Eigen::VectorXd& prior_mean,
                               const Eigen::MatrixXd& gain, const Eigen::VectorXd& innov_mean,
                               double theta, int order) {
  const double d_std = std::sqrt(model.obs_noise_cov()(0, 0));
  const double p_std = std::sqrt(prior.cov.matrix()(0, 0));
  Eigen::VectorXd nodes, weights;
  gauss_hermite_nodes(order, nodes, weights);
  double total = 0.0;
  Eigen::VectorXd probe(1);
  for (int i = 0; i < order; ++i) {
    probe[0] = prior.mean[0] + p_std * nodes[i];
    const double hx = model.h(probe)[0];
    double inner = 0.0;
    for (int j = 0; j < order; ++j) {
      const double y_node = hx + d_std * nodes[j];
      const double updated = prior_mean[0] + gain(0, 0) * (y_node - innov_mean[0]);
      const double dev = probe[0] - updated;
      inner += weights[j] * std::exp(0.5 * theta * dev * dev);
    }
    total += weights[i] * inner;
  }
  return total;
}

}  // namespace

TEST_CASE("normalizing constants match a tensor-quadrature oracle") {
  Rng seed_rng(97);
  const SigmaRule rule = SigmaRule::unscented(0.5, 2.0, 2.0);
  for (int instance = 0; instance < 20; ++instance) {
    const double obs_noise = 0.35 + 0.3 * seed_rng.uniform();
    const double c = instance % 2 == 0 ? 3e-3 : 1e-3;
    const NonlinearStateSpaceModel model = tame_scalar_model(obs_noise);
    const Trajectory traj = simulate_nominal(model, 3, 9000 + instance);
    const ResilientConfig cfg = ResilientConfig::constant(rule, c);
    MHConfig mh;
    Rng rng(500 + instance);

    {
      const TargetLogDensity eval = eval_target_logdensity_p(model, cfg, traj, mh, rng);
      const FilterTrace trace =
          run_filter(model, FilterKind::PredictionResilient, traj.observations, cfg);
      for (int t = 0; t <= 3; ++t) {
        const GaussianBelief prior =
            t == 0 ? model.initial_belief()
                   : GaussianBelief(trace[t - 1].predicted_mean,
                                    SpdMatrix(trace[t - 1].lf_predicted_cov));
        const double oracle = quadrature_norm_const_p(model, rule, prior,
                                                      traj.observations.col(t),
                                                      trace[t].theta, 40);
        const NormConstEstimate& est = eval.norm_consts[static_cast<std::size_t>(t)];
        CHECK(std::abs(est.value - oracle) <= 3.0 * est.rel_error * est.value + 1e-6);
      }
    }
    {
      const TargetLogDensity eval = eval_target_logdensity_u(model, cfg, traj, mh, rng);
      const FilterTrace trace =
          run_filter(model, FilterKind::UpdateResilient, traj.observations, cfg);
      for (int t = 0; t <= 3; ++t) {
        const GaussianBelief prior =
            t == 0 ? model.initial_belief()
                   : GaussianBelief(trace[t - 1].predicted_mean,
                                    SpdMatrix(trace[t - 1].predicted_cov));
        const double oracle =
            quadrature_norm_const_u(model, prior, trace[t].prior_mean, trace[t].gain,
                                    trace[t].innov_mean, trace[t].theta, 40);
        const NormConstEstimate& est = eval.norm_consts[static_cast<std::size_t>(t)];
        CHECK(std::abs(est.value - oracle) <= 3.0 * est.rel_error * est.value + 1e-6);
      }
    }
  }
}

TEST_CASE("mh chain with zero tolerance reproduces the nominal model") {
  // with c = 0 the proposal coincides with the nominal model and every
  // candidate is accepted, so the samples are independent nominal draws
  const NonlinearStateSpaceModel model = tame_scalar_model(1.0);
  const int horizon = 5;
  MHConfig mh;
  mh.burn_in = 20;
  mh.seed = 99;
  for (UncertaintyCase kind : {UncertaintyCase::Prediction, UncertaintyCase::Update}) {
    const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::cubature(), 0.0);
    const MHResult result = mh_sample(model, cfg, kind, horizon, mh, 400);
    REQUIRE(result.samples.size() == 400);
    for (const MHProposalRecord& rec : result.acceptance_log) {
      CHECK(rec.alpha >= 0.0);
      CHECK(rec.alpha <= 1.0);
      CHECK(rec.alpha == doctest::Approx(1.0).epsilon(1e-9));
    }

    StreamingMoments chain_x3;
    for (const Trajectory& traj : result.samples) chain_x3.push(traj.states(0, 3));
    StreamingMoments nominal_x3;
    for (int s = 0; s < 20000; ++s) {
      nominal_x3.push(simulate_nominal(model, horizon, derive_seed(1234, s)).states(0, 3));
    }
    const double se = std::sqrt(chain_x3.sample_variance() / 400.0 +
                                nominal_x3.sample_variance() / 20000.0);
    CHECK(std::abs(chain_x3.mean() - nominal_x3.mean()) < 3.0 * se);
  }
}

TEST_CASE("mh chain agrees with importance-sampling reweighting on a tiny instance") {
  const NonlinearStateSpaceModel model = tame_scalar_model(0.4);
  const int horizon = 2;
  const double c = 0.03;
  const ResilientConfig cfg = ResilientConfig::constant(SigmaRule::cubature(), c);
  MHConfig mh;
  mh.burn_in = 200;
  mh.seed = 31;

  const MHResult result = mh_sample(model, cfg, UncertaintyCase::Prediction, horizon, mh, 1200);

  // full-chain reconstruction: repeat the current state on every rejection
  std::vector<double> chain;
  long accepted = 0;
  std::size_t idx = 0;
  for (const MHProposalRecord& rec : result.acceptance_log) {
    if (rec.accepted) {
      ++accepted;
      if (accepted > mh.burn_in) idx = static_cast<std::size_t>(accepted - mh.burn_in - 1);
    }
    if (accepted > mh.burn_in && idx < result.samples.size()) {
      chain.push_back(result.samples[idx].states(0, 1));
    }
  }
  REQUIRE(chain.size() > 1000);

  // batch-means standard error for the autocorrelated chain
  const int n_batches = 25;
  const std::size_t batch = chain.size() / n_batches;
  StreamingMoments batch_means;
  for (int b = 0; b < n_batches; ++b) {
    double mean = 0.0;
    for (std::size_t i = 0; i < batch; ++i) mean += chain[b * batch + i];
    batch_means.push(mean / static_cast<double>(batch));
  }
  const double chain_mean = batch_means.mean();
  const double chain_se = std::sqrt(batch_means.sample_variance() / n_batches);

  // importance sampling from the nominal model with the tilt/normalizer weights
  Eigen::MatrixXd joint_cov = Eigen::MatrixXd::Zero(2, 2);
  joint_cov(0, 0) = model.process_noise_cov()(0, 0);
  joint_cov(1, 1) = model.obs_noise_cov()(0, 0);
  const SpdMatrix joint_spd(joint_cov);
  Rng is_rng(77);
  MHConfig is_mh;
  StreamingMoments is_num, is_den;
  std::vector<double> weights, values;
  for (int s = 0; s < 5000; ++s) {
    const Trajectory traj = simulate_nominal(model, horizon, derive_seed(555, s));
    const TargetLogDensity target = eval_target_logdensity_p(model, cfg, traj, is_mh, is_rng);
    double log_nominal = 0.0;
    for (int t = 0; t <= horizon; ++t) {
      Eigen::VectorXd z(2), mu(2);
      z << traj.states(0, t + 1), traj.observations(0, t);
      mu << model.f(traj.states.col(t))[0], model.h(traj.states.col(t))[0];
      log_nominal += gaussian_log_pdf(z, mu, joint_spd);
    }
    weights.push_back(target.log_density - log_nominal);
    values.push_back(traj.states(0, 1));
  }
  const double max_lw = *std::max_element(weights.begin(), weights.end());
  double wsum = 0.0, wxsum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = std::exp(weights[i] - max_lw);
    wsum += w;
    wxsum += w * values[i];
  }
  const double is_mean = wxsum / wsum;
  double se_num = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = std::exp(weights[i] - max_lw);
    se_num += w * w * (values[i] - is_mean) * (values[i] - is_mean);
  }
  const double is_se = std::sqrt(se_num) / wsum;

  CHECK(std::abs(chain_mean - is_mean) < 3.0 * std::sqrt(chain_se * chain_se + is_se * is_se));
}
