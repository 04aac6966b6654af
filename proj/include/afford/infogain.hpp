#pragma once
// Ensemble disagreement in nats: Bernoulli entropy, the information radius
// of a set of heads, per-pixel disagreement maps, and the explicit Bayesian
// information gain it coincides with under a uniform prior.

#include <span>

#include "afford/core.hpp"

namespace afford::infogain {

// H(p) in nats; 0 at p in {0, 1}. p must lie in [0, 1].
double bernoulli_entropy(double p);

// Information radius of equally weighted Bernoulli heads:
// H(mean of p_i) - mean of H(p_i). Lies in [0, ln 2]; 0 iff all heads agree.
double jsd(std::span<const double> head_probs);

// Expected KL divergence from the posterior over head identity to the prior
// after observing one Bernoulli outcome. `prior` must be non-negative and
// sum to 1. With a uniform prior this equals jsd(head_probs).
double bayes_info_gain(std::span<const double> head_probs,
                       std::span<const double> prior);

// Per-cell jsd across equally shaped probability maps; `normalized` false.
core::InfoMap info_map(std::span<const core::ProbMap> heads);

// Min-max scaling over the valid entries of the whole Q×H×W map. The H×W
// mask applies to every orientation plane. Invalid cells are zeroed, a
// degenerate range maps to all zeros, and an all-invalid mask is an error.
core::InfoMap normalize(const core::InfoMap& m, const core::Mask& valid);

}  // namespace afford::infogain
