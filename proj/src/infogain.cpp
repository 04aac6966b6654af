#include "afford/infogain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace afford::infogain {

double bernoulli_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("bernoulli_entropy: p must lie in [0, 1]");
  if (p == 0.0 || p == 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

double jsd(std::span<const double> head_probs) {
  if (head_probs.empty())
    throw std::invalid_argument("jsd: need at least one head");
  double mean = 0.0, mean_h = 0.0;
  for (double p : head_probs) {
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("jsd: probabilities must lie in [0, 1]");
    mean += p;
    mean_h += bernoulli_entropy(p);
  }
  const double n = static_cast<double>(head_probs.size());
  const double raw = bernoulli_entropy(mean / n) - mean_h / n;
  return raw < 0.0 ? 0.0 : raw;  // guards roundoff; true value is >= 0
}

double bayes_info_gain(std::span<const double> head_probs,
                       std::span<const double> prior) {
  const std::size_t n = head_probs.size();
  if (n == 0) throw std::invalid_argument("bayes_info_gain: empty ensemble");
  if (prior.size() != n)
    throw std::invalid_argument("bayes_info_gain: prior size mismatch");
  double wsum = 0.0;
  for (double w : prior) {
    if (!(w >= 0.0))
      throw std::invalid_argument("bayes_info_gain: negative prior weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("bayes_info_gain: prior must sum to 1");
  for (double p : head_probs)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("bayes_info_gain: probs must lie in [0, 1]");

  // Marginal outcome probability, then the expected KL(posterior || prior)
  // over both outcomes, each term computed literally.
  double info = 0.0;
  for (int b = 0; b < 2; ++b) {
    double pb = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      pb += prior[i] * (b == 1 ? head_probs[i] : 1.0 - head_probs[i]);
    if (pb <= 0.0) continue;
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double like = b == 1 ? head_probs[i] : 1.0 - head_probs[i];
      const double post = prior[i] * like / pb;
      if (post > 0.0) kl += post * std::log(post / prior[i]);
    }
    info += pb * kl;
  }
  return info;
}

core::InfoMap info_map(std::span<const core::ProbMap> heads) {
  if (heads.empty()) throw std::invalid_argument("info_map: empty ensemble");
  const auto& first = heads.front().values();
  for (const auto& h : heads)
    if (!h.values().same_shape(first))
      throw std::invalid_argument("info_map: head shapes differ");
  core::InfoMap out;
  out.values = core::Grid3(first.c(), first.h(), first.w());
  out.normalized = false;
  std::vector<double> probs(heads.size());
  const std::size_t cells = first.size();
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t k = 0; k < heads.size(); ++k)
      probs[k] = heads[k].values().flat(i);
    out.values.flat(i) = jsd(probs);
  }
  return out;
}

core::InfoMap normalize(const core::InfoMap& m, const core::Mask& valid) {
  const auto& g = m.values;
  if (g.h() != valid.h() || g.w() != valid.w())
    throw std::invalid_argument("normalize: mask dims differ from map");
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (int q = 0; q < g.c(); ++q)
    for (int y = 0; y < g.h(); ++y)
      for (int x = 0; x < g.w(); ++x) {
        if (!valid.at(y, x)) continue;
        const double v = g.at(q, y, x);
        if (!any) {
          lo = hi = v;
          any = true;
        } else {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
  if (!any) throw std::invalid_argument("normalize: no valid pixels");
  core::InfoMap out;
  out.values = core::Grid3(g.c(), g.h(), g.w(), 0.0);
  out.normalized = true;
  const double range = hi - lo;
  if (range <= 0.0) return out;  // degenerate range maps to all zeros
  for (int q = 0; q < g.c(); ++q)
    for (int y = 0; y < g.h(); ++y)
      for (int x = 0; x < g.w(); ++x)
        if (valid.at(y, x))
          out.values.at(q, y, x) = (g.at(q, y, x) - lo) / range;
  return out;
}

}  // namespace afford::infogain
