#pragma once
// Action selection. Exploration scores add an information bonus to a
// Thompson-sampled reward map (upper confidence bound); evaluation scores
// subtract it from the ensemble mean (pessimistic lower bound). Baselines:
// masked uniform random, Boltzmann sampling over reward, and a schedule
// that switches from random to Boltzmann partway through the budget.

#include "afford/core.hpp"

namespace afford::policy {

struct PolicyConfig {
  double c_expl = 0.3;
  double c_eval = 0.1;
  // When false, exploration scores use the ensemble mean instead of a
  // sampled head.
  bool thompson = true;
  double boltzmann_temperature = 1.0;
  // Fraction of the budget the scheduled baseline spends acting randomly.
  double random_fraction = 0.5;
  void validate() const;
};

// Q×H×W action scores; finite at valid pixels (checked on selection).
struct ScoreMap {
  core::Grid3 values;
};

// Uniform head index in [0, n_heads).
int sample_head(core::RngStream& rng, int n_heads);

// rhat + c_expl * info. Requires a normalized information map.
ScoreMap explore_score(const core::ProbMap& rhat, const core::InfoMap& info,
                       double c_expl);

// mean - c_eval * info. Requires a normalized information map.
ScoreMap eval_score(const core::ProbMap& mean, const core::InfoMap& info,
                    double c_eval);

// Highest-scoring action over valid pixels; ties break to the lowest flat
// index in orientation-major (q, row, col) order.
core::ActionSpec select_argmax(const ScoreMap& score, const core::Mask& valid);

// Uniform over valid (pixel, orientation) pairs.
core::ActionSpec sample_random(core::RngStream& rng, const core::Mask& valid,
                               int orientations);

// Samples a with probability proportional to exp(rhat(a) / temperature)
// over valid actions, computed with max subtraction.
core::ActionSpec sample_boltzmann(core::RngStream& rng,
                                  const core::ProbMap& rhat,
                                  const core::Mask& valid, double temperature);

// Random while step < random_fraction * budget, Boltzmann afterwards.
core::ActionSpec where2act_policy(std::int64_t step, std::int64_t budget,
                                  core::RngStream& rng,
                                  const core::ProbMap& rhat,
                                  const core::Mask& valid,
                                  const PolicyConfig& cfg);

}  // namespace afford::policy
