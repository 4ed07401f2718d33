#include "rspkf/model.hpp"

#include "rspkf/random.hpp"

namespace rspkf {

NonlinearStateSpaceModel::NonlinearStateSpaceModel(int n, int m, VectorFn f_fn, VectorFn h_fn,
                                                   Eigen::MatrixXd b, Eigen::MatrixXd d,
                                                   Eigen::VectorXd x0, SpdMatrix p0)
    : state_dim(n),
      obs_dim(m),
      f(std::move(f_fn)),
      h(std::move(h_fn)),
      B(std::move(b)),
      D(std::move(d)),
      initial_mean(std::move(x0)),
      initial_cov(std::move(p0)) {
  if (B.rows() != n || B.cols() != n + m) {
    throw DimensionMismatch("model: B must be n x (n+m)");
  }
  if (D.rows() != m || D.cols() != n + m) {
    throw DimensionMismatch("model: D must be m x (n+m)");
  }
  if (initial_mean.size() != n || initial_cov.dim() != n) {
    throw DimensionMismatch("model: initial belief must have state dimension");
  }
  if ((B * D.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error("model: B D^T must vanish (independent noise channels)");
  }
  bbt_ = symmetrize(B * B.transpose());
  ddt_ = symmetrize(D * D.transpose());
}

Trajectory simulate_nominal(const NonlinearStateSpaceModel& model, int horizon,
                            std::uint64_t seed) {
  if (horizon < 0) throw Error("simulate_nominal: horizon must be >= 0");
  const int n = model.state_dim;
  const int m = model.obs_dim;

  Rng rng(seed);
  Trajectory traj;
  traj.horizon = horizon;
  traj.states.resize(n, horizon + 2);
  traj.observations.resize(m, horizon + 1);

  traj.states.col(0) = rng.gaussian(model.initial_mean, model.initial_cov.chol_lower());
  for (int t = 0; t <= horizon; ++t) {
    const Eigen::VectorXd x = traj.states.col(t);
    const Eigen::VectorXd v = rng.normal_vector(n + m);
    traj.observations.col(t) = model.h(x) + model.D * v;
    traj.states.col(t + 1) = model.f(x) + model.B * v;
  }
  return traj;
}

}  // namespace rspkf
