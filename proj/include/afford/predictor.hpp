#pragma once
// Ensemble of per-pixel Bernoulli affordance predictors. Two architectures:
// a tabular one (one logit per head, orientation and pixel) and a conv one
// with a shared encoder and per-head decoders that mirror the encoder,
// replacing stride with bilinear upsampling and adding skip connections.
// Heads differ only by initialization; every head trains on the same batch.
//
// The scalar type is a template parameter: float is the production
// precision, double exists so gradient checks against finite differences
// are not limited by roundoff. Instantiations for both are provided.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afford/core.hpp"

namespace afford::predictor {

enum class Arch { conv, tabular };

struct ModelConfig {
  Arch arch = Arch::conv;
  int height = 32;
  int width = 32;
  int orientations = 8;
  int n_heads = 5;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int updates_per_interaction = 5;
  // Conv channel widths per encoder block. Small values keep gradient-check
  // configurations under 1k parameters.
  int conv_c1 = 8;
  int conv_c2 = 16;
  int conv_c3 = 16;
  // Multiplies the default init std; larger values spread the heads.
  double init_scale = 1.0;
  void validate() const;  // conv requires height/width divisible by 4, >= 8
};

// Trainable state: all parameters live in one flat vector (layout fixed by
// the config; see layout notes in predictor.cpp), plus Adam moments.
template <class Real>
struct EnsembleParams {
  ModelConfig cfg;
  std::vector<Real> theta;
  std::vector<Real> adam_m, adam_v;
  std::int64_t adam_t = 0;

  std::span<Real> flat() { return theta; }
  std::span<const Real> flat() const { return theta; }
};

using Ensemble = EnsembleParams<float>;

template <class Real>
EnsembleParams<Real> init(const ModelConfig& cfg, std::uint64_t seed);

// Q×H×W success probabilities of one head for a scene.
template <class Real>
core::ProbMap predict_head(const EnsembleParams<Real>& p, int head,
                           const core::Scene& scene);

// All heads; the conv encoder runs once and is shared across heads.
template <class Real>
std::vector<core::ProbMap> predict_all(const EnsembleParams<Real>& p,
                                       const core::Scene& scene);

core::ProbMap mean_map(std::span<const core::ProbMap> heads);

// -b ln p - (1-b) ln(1-p) with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int b);

// Mean clamped BCE over heads and batch draws, evaluated at each draw's
// acted pixel and orientation only.
template <class Real>
double batch_loss(const EnsembleParams<Real>& p,
                  std::span<const core::Transition> batch);

// Gradient of batch_loss with respect to flat(), same layout.
template <class Real>
std::vector<Real> batch_gradient(const EnsembleParams<Real>& p,
                                 std::span<const core::Transition> batch);

// One Adam update of all heads and the shared encoder on the mean batch
// loss; returns the updated parameters and the pre-update loss.
template <class Real>
std::pair<EnsembleParams<Real>, double> train_step(
    EnsembleParams<Real> p, std::span<const core::Transition> batch);

// Plain-text header (arch, grid, orientations, heads, widths, count)
// followed by the flat parameter array as little-endian 32-bit floats.
// Optimizer state is not persisted.
template <class Real>
void save_checkpoint(const EnsembleParams<Real>& p, const std::string& path);

EnsembleParams<float> load_checkpoint(const std::string& path);

}  // namespace afford::predictor
