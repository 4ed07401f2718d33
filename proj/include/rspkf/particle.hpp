#pragma once

#include <cstdint>

#include "rspkf/model.hpp"
#include "rspkf/random.hpp"

namespace rspkf {

/// Weighted particle set; weights nonnegative and normalized.
struct ParticleCloud {
  Eigen::MatrixXd particles;  // n x N_p
  Eigen::VectorXd weights;    // N_p
  bool weight_collapse = false;  // set when all weights underflowed
};

/// Draws an initial cloud from the model's initial belief, uniform weights.
ParticleCloud pf_init(const NonlinearStateSpaceModel& model, int n_particles, Rng& rng);

/// Systematic resampling with a single uniform draw; preserves the particle
/// count and resets the weights to uniform.
void systematic_resample(ParticleCloud& cloud, Rng& rng);

struct PfStepResult {
  ParticleCloud cloud;            // resampled posterior particles
  Eigen::VectorXd predicted;      // propagated mean before weighting
  Eigen::VectorXd filtered;       // weighted mean before resampling
};

/// Bootstrap step: propagate through the nominal transition, weight by the
/// measurement likelihood, estimate, resample. A full weight underflow resets
/// to uniform weights and flags the cloud.
PfStepResult pf_step(const NonlinearStateSpaceModel& model, const ParticleCloud& cloud,
                     const Eigen::VectorXd& y, Rng& rng);
PfStepResult pf_step(const NonlinearStateSpaceModel& model, const ParticleCloud& cloud,
                     const Eigen::VectorXd& y, std::uint64_t seed);

/// Runs the bootstrap filter over an observation record; returns per-step
/// predicted and filtered means (columns t = 0..N). At t = 0 the initial
/// cloud is weighted without propagation.
void run_pf(const NonlinearStateSpaceModel& model, const Eigen::MatrixXd& observations,
            int n_particles, std::uint64_t seed, Eigen::MatrixXd& predicted,
            Eigen::MatrixXd& filtered);

}  // namespace rspkf
