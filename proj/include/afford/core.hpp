#pragma once
// Core value types shared across the library: grids, scenes, actions,
// transitions, the replay buffer, and deterministic randomness helpers.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

namespace afford::core {

// All stochastic code draws from this engine type. Its output sequence is
// fixed by the standard, so runs are reproducible across toolchains.
using RngStream = std::mt19937_64;

// Mixes a root seed with a stream tag into an independent sub-seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream_tag);

// Uniform on [0, 1), 53-bit resolution.
double uniform_double(RngStream& rng);

// Uniform on {0, ..., n-1}, unbiased. n must be >= 1.
std::size_t uniform_index(RngStream& rng, std::size_t n);

// Standard normal via Box-Muller; two engine draws per call, no cache.
double gaussian(RngStream& rng);

// H×W doubles, row-major.
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int h, int w, double fill = 0.0);
  int h() const { return h_; }
  int w() const { return w_; }
  double& at(int y, int x) { return v_[static_cast<std::size_t>(y) * w_ + x]; }
  double at(int y, int x) const { return v_[static_cast<std::size_t>(y) * w_ + x]; }
  const std::vector<double>& data() const { return v_; }
  std::vector<double>& data() { return v_; }

 private:
  int h_ = 0, w_ = 0;
  std::vector<double> v_;
};

// C×H×W doubles, plane-major. Backs probability, information and score maps.
class Grid3 {
 public:
  Grid3() = default;
  Grid3(int c, int h, int w, double fill = 0.0);
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return v_.size(); }
  double& at(int c, int y, int x) {
    return v_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  double at(int c, int y, int x) const {
    return v_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  double& flat(std::size_t i) { return v_[i]; }
  double flat(std::size_t i) const { return v_[i]; }
  const std::vector<double>& data() const { return v_; }
  std::vector<double>& data() { return v_; }
  bool same_shape(const Grid3& o) const {
    return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> v_;
};

// Per-pixel maximum across the leading (orientation) dimension; the H×W
// reduction used for image dumps.
Grid2 max_over_orientations(const Grid3& v);

// H×W validity mask; a set pixel may be targeted by an action.
class Mask {
 public:
  Mask() = default;
  Mask(int h, int w, bool fill = false);
  int h() const { return h_; }
  int w() const { return w_; }
  bool at(int y, int x) const {
    return v_[static_cast<std::size_t>(y) * w_ + x] != 0;
  }
  void set(int y, int x, bool b) {
    v_[static_cast<std::size_t>(y) * w_ + x] = b ? 1 : 0;
  }
  std::size_t count() const;

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::uint8_t> v_;
};

// Immutable observation of one episode's scene. Copies share storage, so
// transitions and batches stay cheap. Heights are in [0, 1]. id() is a
// content fingerprint: scenes with equal heights and masks share it, which
// lets training group batch entries that need the same forward pass.
class Scene {
 public:
  Scene() = default;
  Scene(Grid2 heights, Mask valid);
  const Grid2& heights() const { return d_->heights; }
  const Mask& valid() const { return d_->valid; }
  std::uint64_t id() const { return d_->id; }
  int h() const { return d_->heights.h(); }
  int w() const { return d_->heights.w(); }
  bool empty() const { return d_ == nullptr; }

 private:
  struct Data {
    Grid2 heights;
    Mask valid;
    std::uint64_t id;
  };
  std::shared_ptr<const Data> d_;
};

// One action: target pixel (row, col) and orientation bin q.
struct ActionSpec {
  int row = 0;
  int col = 0;
  int q = 0;
};

// Binary interaction result.
struct Outcome {
  int b = 0;
};

struct Transition {
  Scene scene;
  ActionSpec action;
  Outcome outcome;
  std::int64_t step = 0;
};

// Q×H×W map of Bernoulli success probabilities; entries validated to [0, 1].
class ProbMap {
 public:
  ProbMap() = default;
  explicit ProbMap(Grid3 values);
  const Grid3& values() const { return v_; }
  Grid3& values() { return v_; }
  double at(int q, int y, int x) const { return v_.at(q, y, x); }
  int q() const { return v_.c(); }
  int h() const { return v_.h(); }
  int w() const { return v_.w(); }

 private:
  Grid3 v_;
};

// Q×H×W per-pixel disagreement; `normalized` marks min-max scaling applied.
struct InfoMap {
  Grid3 values;
  bool normalized = false;
};

// Append-only store of past interactions; sampling is uniform with
// replacement. Unbounded: desk-scale budgets stay small.
class ReplayBuffer {
 public:
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  std::vector<Transition> sample_batch(RngStream& rng, std::size_t k) const;

 private:
  std::vector<Transition> items_;
};

}  // namespace afford::core
