#include "afford/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace afford::policy {

namespace {

void check_mask(const core::Mask& valid, int h, int w) {
  if (valid.h() != h || valid.w() != w)
    throw std::invalid_argument("policy: mask dims differ from map");
}

std::vector<std::pair<int, int>> valid_pixels(const core::Mask& m) {
  std::vector<std::pair<int, int>> px;
  for (int y = 0; y < m.h(); ++y)
    for (int x = 0; x < m.w(); ++x)
      if (m.at(y, x)) px.emplace_back(y, x);
  return px;
}

}  // namespace

void PolicyConfig::validate() const {
  if (c_expl < 0.0 || c_eval < 0.0)
    throw std::invalid_argument("PolicyConfig: coefficients must be >= 0");
  if (!(boltzmann_temperature > 0.0))
    throw std::invalid_argument("PolicyConfig: temperature must be > 0");
  if (random_fraction < 0.0 || random_fraction > 1.0)
    throw std::invalid_argument("PolicyConfig: random_fraction outside [0,1]");
}

int sample_head(core::RngStream& rng, int n_heads) {
  if (n_heads < 1)
    throw std::invalid_argument("sample_head: n_heads must be >= 1");
  return static_cast<int>(
      core::uniform_index(rng, static_cast<std::size_t>(n_heads)));
}

ScoreMap explore_score(const core::ProbMap& rhat, const core::InfoMap& info,
                       double c_expl) {
  if (!(c_expl >= 0.0))
    throw std::invalid_argument("explore_score: coefficient must be >= 0");
  if (!info.normalized)
    throw std::invalid_argument("explore_score: info map not normalized");
  if (!rhat.values().same_shape(info.values))
    throw std::invalid_argument("explore_score: shape mismatch");
  ScoreMap s;
  s.values = rhat.values();
  for (std::size_t i = 0; i < s.values.size(); ++i)
    s.values.flat(i) += c_expl * info.values.flat(i);
  return s;
}

ScoreMap eval_score(const core::ProbMap& mean, const core::InfoMap& info,
                    double c_eval) {
  if (!(c_eval >= 0.0))
    throw std::invalid_argument("eval_score: coefficient must be >= 0");
  if (!info.normalized)
    throw std::invalid_argument("eval_score: info map not normalized");
  if (!mean.values().same_shape(info.values))
    throw std::invalid_argument("eval_score: shape mismatch");
  ScoreMap s;
  s.values = mean.values();
  for (std::size_t i = 0; i < s.values.size(); ++i)
    s.values.flat(i) -= c_eval * info.values.flat(i);
  return s;
}

core::ActionSpec select_argmax(const ScoreMap& score,
                               const core::Mask& valid) {
  const auto& v = score.values;
  check_mask(valid, v.h(), v.w());
  bool found = false;
  double best = 0.0;
  core::ActionSpec a;
  for (int q = 0; q < v.c(); ++q)
    for (int y = 0; y < v.h(); ++y)
      for (int x = 0; x < v.w(); ++x) {
        if (!valid.at(y, x)) continue;
        const double s = v.at(q, y, x);
        if (!std::isfinite(s))
          throw std::invalid_argument(
              "select_argmax: non-finite score at a valid pixel");
        if (!found || s > best) {
          found = true;
          best = s;
          a = {y, x, q};
        }
      }
  if (!found) throw std::invalid_argument("select_argmax: no valid pixels");
  return a;
}

core::ActionSpec sample_random(core::RngStream& rng, const core::Mask& valid,
                               int orientations) {
  if (orientations < 1)
    throw std::invalid_argument("sample_random: orientations must be >= 1");
  const auto px = valid_pixels(valid);
  if (px.empty())
    throw std::invalid_argument("sample_random: no valid pixels");
  const std::size_t idx = core::uniform_index(
      rng, px.size() * static_cast<std::size_t>(orientations));
  const auto [y, x] = px[idx / orientations];
  return {y, x, static_cast<int>(idx % orientations)};
}

core::ActionSpec sample_boltzmann(core::RngStream& rng,
                                  const core::ProbMap& rhat,
                                  const core::Mask& valid,
                                  double temperature) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("sample_boltzmann: temperature must be > 0");
  const auto& v = rhat.values();
  check_mask(valid, v.h(), v.w());
  bool found = false;
  double vmax = 0.0;
  for (int q = 0; q < v.c(); ++q)
    for (int y = 0; y < v.h(); ++y)
      for (int x = 0; x < v.w(); ++x) {
        if (!valid.at(y, x)) continue;
        const double s = v.at(q, y, x);
        if (!found || s > vmax) {
          found = true;
          vmax = s;
        }
      }
  if (!found)
    throw std::invalid_argument("sample_boltzmann: no valid pixels");
  double total = 0.0;
  for (int q = 0; q < v.c(); ++q)
    for (int y = 0; y < v.h(); ++y)
      for (int x = 0; x < v.w(); ++x)
        if (valid.at(y, x))
          total += std::exp((v.at(q, y, x) - vmax) / temperature);
  const double u = core::uniform_double(rng) * total;
  double cum = 0.0;
  core::ActionSpec last{};
  for (int q = 0; q < v.c(); ++q)
    for (int y = 0; y < v.h(); ++y)
      for (int x = 0; x < v.w(); ++x) {
        if (!valid.at(y, x)) continue;
        cum += std::exp((v.at(q, y, x) - vmax) / temperature);
        last = {y, x, q};
        if (u < cum) return last;
      }
  return last;  // roundoff at the top of the CDF
}

core::ActionSpec where2act_policy(std::int64_t step, std::int64_t budget,
                                  core::RngStream& rng,
                                  const core::ProbMap& rhat,
                                  const core::Mask& valid,
                                  const PolicyConfig& cfg) {
  cfg.validate();
  if (step < 0 || budget < 1 || step >= budget)
    throw std::invalid_argument("where2act_policy: step outside budget");
  if (static_cast<double>(step) < cfg.random_fraction * budget)
    return sample_random(rng, valid, rhat.q());
  return sample_boltzmann(rng, rhat, valid, cfg.boltzmann_temperature);
}

}  // namespace afford::policy
