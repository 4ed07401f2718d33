#pragma once

#include <cstdint>
#include <vector>

#include "rspkf/filters.hpp"
#include "rspkf/random.hpp"

namespace rspkf {

/// Jacobians of f and h at x, by central differences with per-coordinate step
/// 1e-6 * max(1, |x_i|).
void jacobians(const NonlinearStateSpaceModel& model, const Eigen::VectorXd& x,
               Eigen::MatrixXd& A, Eigen::MatrixXd& C);

/// Which equations carry the model uncertainty; selects filter sweep, proposal
/// construction and target density of the simulator.
enum class UncertaintyCase { Prediction, Update };

/// Time-varying proposal state space for the prediction-uncertainty case.
/// Built from one observation record by a forward resilient sweep, a backward
/// information recursion and a forward covariance recursion.
struct ProposalModelP {
  int horizon = -1;
  FilterTrace sweep;                       // prediction-resilient sweep on Y
  std::vector<Eigen::MatrixXd> A;          // drift Jacobian at updated means
  std::vector<Eigen::MatrixXd> C;          // observation Jacobian at prior means
  std::vector<Eigen::MatrixXd> G;          // prediction gains A_t L_t
  std::vector<Eigen::MatrixXd> H;          // (n+m) x n error feed
  std::vector<Eigen::MatrixXd> F;          // Cholesky factor of O_t
  std::vector<Eigen::MatrixXd> O;          // noise shaping, (n+m) x (n+m)
  std::vector<Eigen::MatrixXd> omega_inv;  // t in [0, N+1], terminal block zero
  std::vector<Eigen::MatrixXd> Pi;         // joint state/error covariance, 2n x 2n
  std::vector<Eigen::MatrixXd> Pi_e;       // error covariance block, n x n
  std::vector<SpdMatrix> RL;               // proposal transition covariance
  std::vector<double> theta;
};

/// Time-varying proposal state space for the update-uncertainty case. The
/// state equation stays nominal; only the measurement noise is reshaped.
struct ProposalModelU {
  int horizon = -1;
  FilterTrace sweep;                       // update-resilient sweep on Y
  std::vector<Eigen::MatrixXd> A;          // drift Jacobian at updated means
  std::vector<Eigen::MatrixXd> C;          // observation Jacobian at prior means
  std::vector<Eigen::MatrixXd> Delta;      // (I - L_t C_t) A_{t-1}
  std::vector<Eigen::MatrixXd> Lambda;     // I - L_t F_t - L_t C_t
  std::vector<Eigen::MatrixXd> O;          // m x m
  std::vector<Eigen::MatrixXd> F;          // m x n measurement error feed
  std::vector<Eigen::MatrixXd> Upsilon;    // Cholesky factor of O_t
  std::vector<Eigen::MatrixXd> omega_inv;  // t in [0, N+1], terminal block zero
  std::vector<Eigen::MatrixXd> Pi;         // stacked error covariance, 3n x 3n
  std::vector<Eigen::MatrixXd> Pi_e;       // middle n x n block
  std::vector<SpdMatrix> QL;               // proposal measurement covariance
  std::vector<double> theta;
};

ProposalModelP build_proposal_p(const NonlinearStateSpaceModel& model,
                                const Eigen::MatrixXd& observations,
                                const ResilientConfig& cfg);

ProposalModelU build_proposal_u(const NonlinearStateSpaceModel& model,
                                const Eigen::MatrixXd& observations,
                                const ResilientConfig& cfg);

/// Draws one trajectory from the proposal model, simulating the internal
/// error recursion. Deterministic given the stream state. The optional
/// error_path (n x (N+1)) records the internal error before each step.
Trajectory sample_proposal(const ProposalModelP& pm, const NonlinearStateSpaceModel& model,
                           Rng& rng, Eigen::MatrixXd* error_path = nullptr);
Trajectory sample_proposal(const ProposalModelU& pm, const NonlinearStateSpaceModel& model,
                           Rng& rng);
Trajectory sample_proposal(const ProposalModelP& pm, const NonlinearStateSpaceModel& model,
                           std::uint64_t seed);
Trajectory sample_proposal(const ProposalModelU& pm, const NonlinearStateSpaceModel& model,
                           std::uint64_t seed);

/// Log proposal density of a trajectory, without the initial-state factor and
/// (update case) without the exactly cancelling state transitions.
double eval_proposal_logdensity(const ProposalModelP& pm, const NonlinearStateSpaceModel& model,
                                const Trajectory& traj);
double eval_proposal_logdensity(const ProposalModelU& pm, const NonlinearStateSpaceModel& model,
                                const Trajectory& traj);

/// Monte Carlo normalizing-constant estimate with 95%-confidence relative
/// error; rel_error = 1.96 sigma_hat / (sqrt(r) value).
struct NormConstEstimate {
  double value = 1.0;
  double log_value = 0.0;
  int sample_count = 0;
  double sigma_hat = 0.0;
  double rel_error = 0.0;
};

struct MHConfig {
  int r_init = 100;
  int r_cap = 4000;
  double tau_star = 2e-3;
  int burn_in = 200;          // accepted states discarded
  int thinning = 1;           // keep every k-th accepted state
  long max_proposals = 1000000;
  std::uint64_t seed = 0;
};

struct TargetLogDensity {
  double log_density = 0.0;
  std::vector<NormConstEstimate> norm_consts;  // one per time step
};

/// Log target density of a trajectory under the exponentially tilted model,
/// prediction-uncertainty case. Runs the resilient filter on the trajectory's
/// own observations and estimates each normalizing constant adaptively.
TargetLogDensity eval_target_logdensity_p(const NonlinearStateSpaceModel& model,
                                          const ResilientConfig& cfg, const Trajectory& traj,
                                          const MHConfig& mh, Rng& rng);

/// Update-uncertainty counterpart; only the measurement factors are tilted.
TargetLogDensity eval_target_logdensity_u(const NonlinearStateSpaceModel& model,
                                          const ResilientConfig& cfg, const Trajectory& traj,
                                          const MHConfig& mh, Rng& rng);

struct MHProposalRecord {
  long proposal_index = 0;
  bool accepted = false;
  double alpha = 0.0;
  long r_total = 0;  // summed Monte Carlo sample counts of the candidate
};

struct MHResult {
  std::vector<Trajectory> samples;            // accepted states, post burn-in, thinned
  std::vector<MHProposalRecord> acceptance_log;
  std::vector<int> r_log;                     // one entry per (candidate, t)
};

/// Metropolis-Hastings sampler for the least-favorable model. Starts from a
/// nominal draw, rebuilds the proposal from the current state's observations,
/// and collects `sample_count` accepted trajectories after burn-in.
MHResult mh_sample(const NonlinearStateSpaceModel& model, const ResilientConfig& cfg,
                   UncertaintyCase kind, int horizon, const MHConfig& mh,
                   std::size_t sample_count);

}  // namespace rspkf
