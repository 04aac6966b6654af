#pragma once
// Synthetic grid environments with analytic Bernoulli ground truth.
//
// shape_grasp: random rectangles and disks on a flat table. Actions near an
// object's boundary succeed with p_hi when the orientation bin matches the
// local boundary normal, interior/object cells give p_lo, off-object fails.
// A fresh scene is generated on every reset.
//
// drawer_toy: a single 2x2 handle whose position and working orientation
// are fixed for the whole run (derived from cfg.seed, not from the reset
// stream), succeeding with probability drawer_p at exactly that
// orientation. Everything else always fails: a hard-exploration task.

#include <cstdint>

#include "afford/core.hpp"

namespace afford::envs {

enum class EnvKind { shape_grasp, drawer_toy };

struct EnvConfig {
  EnvKind kind = EnvKind::shape_grasp;
  int height = 32;
  int width = 32;
  int orientations = 8;
  double p_hi = 0.9;
  double p_lo = 0.05;
  // Distance-to-boundary range (in cells) of the graspable edge band.
  int band_lo = 1;
  int band_hi = 2;
  int n_objects = 1;
  // Width of the invalid frame around the grid.
  int border = 2;
  std::uint64_t seed = 0;
  // Success probability at the drawer handle's working orientation.
  double drawer_p = 0.95;
  void validate() const;
};

struct EnvState {
  core::Scene scene;
  core::ProbMap truth;
  std::int64_t interactions = 0;
};

// Pixels outside the border frame are valid.
core::Mask border_mask(const EnvConfig& cfg);

// Ground truth for an arbitrary silhouette under the shape_grasp rule;
// exposed so tests can probe hand-built shapes directly.
core::ProbMap shape_ground_truth(const core::Mask& silhouette,
                                 const EnvConfig& cfg);

EnvState reset(const EnvConfig& cfg, core::RngStream& rng);

// Draws b ~ Bernoulli(truth(a)); the ground truth never changes.
core::Outcome step(EnvState& state, const core::ActionSpec& a,
                   core::RngStream& rng);

const core::ProbMap& ground_truth(const EnvState& state);

}  // namespace afford::envs
