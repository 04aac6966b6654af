#include "afford/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace afford::core {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the scene payload; heights hashed bitwise, so the fingerprint
// is exact content equality, not an approximate one.
std::uint64_t scene_fingerprint(const Grid2& heights, const Mask& valid) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(heights.h()));
  mix(static_cast<std::uint64_t>(heights.w()));
  for (double v : heights.data()) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    mix(bits);
  }
  for (int y = 0; y < valid.h(); ++y)
    for (int x = 0; x < valid.w(); ++x)
      mix(valid.at(y, x) ? 1u : 0u);
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream_tag) {
  return splitmix64(splitmix64(root) + stream_tag);
}

double uniform_double(RngStream& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_index(RngStream& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be >= 1");
  const std::uint64_t m = static_cast<std::uint64_t>(n);
  const std::uint64_t threshold = (0 - m) % m;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return static_cast<std::size_t>(r % m);
  }
}

double gaussian(RngStream& rng) {
  const double u1 = uniform_double(rng);
  const double u2 = uniform_double(rng);
  return std::sqrt(-2.0 * std::log1p(-u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

Grid2::Grid2(int h, int w, double fill) : h_(h), w_(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("Grid2: dims must be >= 1");
  v_.assign(static_cast<std::size_t>(h) * w, fill);
}

Grid3::Grid3(int c, int h, int w, double fill) : c_(c), h_(h), w_(w) {
  if (c < 1 || h < 1 || w < 1)
    throw std::invalid_argument("Grid3: dims must be >= 1");
  v_.assign(static_cast<std::size_t>(c) * h * w, fill);
}

Grid2 max_over_orientations(const Grid3& v) {
  Grid2 out(v.h(), v.w());
  for (int y = 0; y < v.h(); ++y)
    for (int x = 0; x < v.w(); ++x) {
      double m = v.at(0, y, x);
      for (int c = 1; c < v.c(); ++c) m = std::max(m, v.at(c, y, x));
      out.at(y, x) = m;
    }
  return out;
}

Mask::Mask(int h, int w, bool fill) : h_(h), w_(w) {
  if (h < 1 || w < 1) throw std::invalid_argument("Mask: dims must be >= 1");
  v_.assign(static_cast<std::size_t>(h) * w, fill ? 1 : 0);
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto b : v_) n += b;
  return n;
}

Scene::Scene(Grid2 heights, Mask valid) {
  if (heights.h() != valid.h() || heights.w() != valid.w())
    throw std::invalid_argument("Scene: heights and mask dims differ");
  for (double v : heights.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("Scene: heights must lie in [0, 1]");
  const std::uint64_t fp = scene_fingerprint(heights, valid);
  d_ = std::make_shared<const Data>(
      Data{std::move(heights), std::move(valid), fp});
}

ProbMap::ProbMap(Grid3 values) : v_(std::move(values)) {
  if (v_.size() == 0) throw std::invalid_argument("ProbMap: empty grid");
  for (double p : v_.data())
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("ProbMap: entries must lie in [0, 1]");
}

void ReplayBuffer::push(Transition t) {
  if (t.scene.empty()) throw std::invalid_argument("push: empty scene");
  const auto& a = t.action;
  if (a.row < 0 || a.row >= t.scene.h() || a.col < 0 || a.col >= t.scene.w())
    throw std::invalid_argument("push: action pixel out of bounds");
  if (a.q < 0) throw std::invalid_argument("push: negative orientation");
  if (!t.scene.valid().at(a.row, a.col))
    throw std::invalid_argument("push: action targets an invalid pixel");
  if (t.outcome.b != 0 && t.outcome.b != 1)
    throw std::invalid_argument("push: outcome must be binary");
  items_.push_back(std::move(t));
}

std::vector<Transition> ReplayBuffer::sample_batch(RngStream& rng,
                                                   std::size_t k) const {
  if (items_.empty())
    throw std::invalid_argument("sample_batch: buffer is empty");
  std::vector<Transition> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(items_[uniform_index(rng, items_.size())]);
  return out;
}

}  // namespace afford::core
