#include "afford/envs.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace afford::envs {

namespace {

constexpr std::uint64_t kDrawerLayoutTag = 7001;
constexpr int kPlacementAttempts = 100;

int sil_at(const core::Mask& s, int y, int x) {
  if (y < 0 || y >= s.h() || x < 0 || x >= s.w()) return 0;
  return s.at(y, x) ? 1 : 0;
}

// 4-neighbor distance from each on-object cell to the nearest off-object
// cell (off-grid counts as off-object). Off-object cells get 0.
std::vector<int> boundary_distance(const core::Mask& s) {
  const int h = s.h(), w = s.w();
  std::vector<int> d(static_cast<std::size_t>(h) * w,
                     std::numeric_limits<int>::max());
  std::deque<std::pair<int, int>> q;
  auto idx = [&](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!s.at(y, x)) {
        d[idx(y, x)] = 0;
        q.emplace_back(y, x);
      } else if (y == 0 || y == h - 1 || x == 0 || x == w - 1) {
        // On-object at the grid edge: off-grid neighbor is off-object.
        d[idx(y, x)] = 1;
        q.emplace_back(y, x);
      }
  constexpr int dy[] = {-1, 1, 0, 0};
  constexpr int dx[] = {0, 0, -1, 1};
  while (!q.empty()) {
    auto [y, x] = q.front();
    q.pop_front();
    for (int k = 0; k < 4; ++k) {
      const int ny = y + dy[k], nx = x + dx[k];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      if (d[idx(ny, nx)] > d[idx(y, x)] + 1) {
        d[idx(ny, nx)] = d[idx(y, x)] + 1;
        q.emplace_back(ny, nx);
      }
    }
  }
  return d;
}

// Boundary-normal angle in [0, pi) from a 3x3 Sobel stencil over the
// silhouette indicator. Returns false when the gradient vanishes.
bool normal_angle(const core::Mask& s, int y, int x, double& angle) {
  int gx = 0, gy = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int v = sil_at(s, y + dy, x + dx);
      const int wy = (dy == 0) ? 2 : 1;
      const int wx = (dx == 0) ? 2 : 1;
      gx += dx * wy * v;
      gy += dy * wx * v;
    }
  if (gx == 0 && gy == 0) return false;
  double a = std::atan2(static_cast<double>(gy), static_cast<double>(gx));
  if (a < 0.0) a += std::numbers::pi;
  if (a >= std::numbers::pi) a -= std::numbers::pi;
  angle = a;
  return true;
}

// Index of the orientation bin q*pi/Q nearest to `angle` modulo pi; ties
// break to the lower index.
int nearest_bin(double angle, int orientations) {
  const double step = std::numbers::pi / orientations;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int q = 0; q < orientations; ++q) {
    double d = std::fabs(angle - q * step);
    d = std::min(d, std::numbers::pi - d);
    if (d < best_d - 1e-12) {
      best_d = d;
      best = q;
    }
  }
  return best;
}

struct Placement {
  bool disk = false;
  int y0 = 0, x0 = 0, oh = 0, ow = 0;
};

bool cell_on(const Placement& p, int y, int x) {
  if (y < p.y0 || y >= p.y0 + p.oh || x < p.x0 || x >= p.x0 + p.ow)
    return false;
  if (!p.disk) return true;
  const double cy = p.y0 + (p.oh - 1) * 0.5;
  const double cx = p.x0 + (p.ow - 1) * 0.5;
  const double r = p.oh * 0.5;
  const double ddy = y - cy, ddx = x - cx;
  return ddy * ddy + ddx * ddx <= r * r;
}

core::Mask place_objects(const EnvConfig& cfg, core::RngStream& rng) {
  const int h = cfg.height, w = cfg.width, b = cfg.border;
  core::Mask sil(h, w, false);
  const int max_side = std::max(4, std::min(h, w) / 3);
  for (int obj = 0; obj < cfg.n_objects; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed;
         ++attempt) {
      Placement p;
      p.disk = core::uniform_index(rng, 2) == 1;
      p.oh = 4 + static_cast<int>(core::uniform_index(
                     rng, static_cast<std::size_t>(max_side - 4 + 1)));
      p.ow = p.disk ? p.oh
                    : 4 + static_cast<int>(core::uniform_index(
                              rng,
                              static_cast<std::size_t>(max_side - 4 + 1)));
      const int y_span = h - 2 * b - p.oh + 1;
      const int x_span = w - 2 * b - p.ow + 1;
      if (y_span < 1 || x_span < 1) continue;
      p.y0 = b + static_cast<int>(
                     core::uniform_index(rng, static_cast<std::size_t>(y_span)));
      p.x0 = b + static_cast<int>(
                     core::uniform_index(rng, static_cast<std::size_t>(x_span)));
      bool overlap = false;
      for (int y = p.y0; y < p.y0 + p.oh && !overlap; ++y)
        for (int x = p.x0; x < p.x0 + p.ow && !overlap; ++x)
          if (cell_on(p, y, x) && sil.at(y, x)) overlap = true;
      if (overlap) continue;
      for (int y = p.y0; y < p.y0 + p.oh; ++y)
        for (int x = p.x0; x < p.x0 + p.ow; ++x)
          if (cell_on(p, y, x)) sil.set(y, x, true);
      placed = true;
    }
    if (!placed)
      throw std::runtime_error(
          "reset: could not place an object after 100 attempts");
  }
  return sil;
}

core::Scene scene_from_silhouette(const EnvConfig& cfg,
                                  const core::Mask& sil) {
  core::Grid2 heights(cfg.height, cfg.width, 0.5);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      if (sil.at(y, x)) heights.at(y, x) = 1.0;
  return core::Scene(std::move(heights), border_mask(cfg));
}

}  // namespace

void EnvConfig::validate() const {
  if (height < 8 || width < 8)
    throw std::invalid_argument("EnvConfig: grid dims must be >= 8");
  if (orientations < 1)
    throw std::invalid_argument("EnvConfig: orientations must be >= 1");
  if (!(p_lo >= 0.0 && p_lo < p_hi && p_hi <= 1.0))
    throw std::invalid_argument("EnvConfig: need 0 <= p_lo < p_hi <= 1");
  if (band_lo < 1 || band_hi < band_lo)
    throw std::invalid_argument("EnvConfig: need 1 <= band_lo <= band_hi");
  if (n_objects < 1)
    throw std::invalid_argument("EnvConfig: n_objects must be >= 1");
  if (border < 0 || 2 * border >= std::min(height, width))
    throw std::invalid_argument("EnvConfig: border leaves no valid pixels");
  if (!(drawer_p >= 0.0 && drawer_p <= 1.0))
    throw std::invalid_argument("EnvConfig: drawer_p outside [0, 1]");
}

core::Mask border_mask(const EnvConfig& cfg) {
  core::Mask m(cfg.height, cfg.width, false);
  for (int y = cfg.border; y < cfg.height - cfg.border; ++y)
    for (int x = cfg.border; x < cfg.width - cfg.border; ++x)
      m.set(y, x, true);
  return m;
}

core::ProbMap shape_ground_truth(const core::Mask& sil,
                                 const EnvConfig& cfg) {
  cfg.validate();
  if (sil.h() != cfg.height || sil.w() != cfg.width)
    throw std::invalid_argument(
        "shape_ground_truth: silhouette dims differ from config");
  const int h = cfg.height, w = cfg.width, Q = cfg.orientations;
  const core::Mask valid = border_mask(cfg);
  const std::vector<int> dist = boundary_distance(sil);

  // Angles where the stencil has signal; cells in the band whose stencil
  // vanishes (fully interior 3x3 patches at band_hi, symmetric necks)
  // inherit the angle of the nearest cell that has one.
  core::Grid2 angle(h, w, -1.0);
  std::vector<std::pair<int, int>> sources;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!sil.at(y, x)) continue;
      double a;
      if (normal_angle(sil, y, x, a)) {
        angle.at(y, x) = a;
        sources.emplace_back(y, x);
      }
    }

  core::Grid3 gt(Q, h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!valid.at(y, x) || !sil.at(y, x)) continue;
      const int d = dist[static_cast<std::size_t>(y) * w + x];
      for (int q = 0; q < Q; ++q) gt.at(q, y, x) = cfg.p_lo;
      if (d < cfg.band_lo || d > cfg.band_hi) continue;
      double a = angle.at(y, x);
      if (a < 0.0) {
        long best = std::numeric_limits<long>::max();
        for (const auto& [sy, sx] : sources) {
          const long dy = sy - y, dx = sx - x;
          const long dd = dy * dy + dx * dx;
          if (dd < best) {
            best = dd;
            a = angle.at(sy, sx);
          }
        }
        if (a < 0.0) a = 0.0;  // no oriented cell anywhere
      }
      gt.at(nearest_bin(a, Q), y, x) = cfg.p_hi;
    }
  return core::ProbMap(std::move(gt));
}

EnvState reset(const EnvConfig& cfg, core::RngStream& rng) {
  cfg.validate();
  EnvState st;
  if (cfg.kind == EnvKind::shape_grasp) {
    const core::Mask sil = place_objects(cfg, rng);
    st.scene = scene_from_silhouette(cfg, sil);
    st.truth = shape_ground_truth(sil, cfg);
    return st;
  }
  // drawer_toy: layout depends only on cfg.seed, so every reset within a
  // run reproduces the same scene and the same hidden orientation.
  core::RngStream layout(core::derive_seed(cfg.seed, kDrawerLayoutTag));
  const int h = cfg.height, w = cfg.width, b = cfg.border;
  const int y0 = b + static_cast<int>(core::uniform_index(
                         layout, static_cast<std::size_t>(h - 2 * b - 1)));
  const int x0 = b + static_cast<int>(core::uniform_index(
                         layout, static_cast<std::size_t>(w - 2 * b - 1)));
  const int q0 = static_cast<int>(core::uniform_index(
      layout, static_cast<std::size_t>(cfg.orientations)));
  core::Grid2 heights(h, w, 0.5);
  core::Grid3 gt(cfg.orientations, h, w, 0.0);
  for (int y = y0; y < y0 + 2; ++y)
    for (int x = x0; x < x0 + 2; ++x) {
      heights.at(y, x) = 1.0;
      gt.at(q0, y, x) = cfg.drawer_p;
    }
  st.scene = core::Scene(std::move(heights), border_mask(cfg));
  st.truth = core::ProbMap(std::move(gt));
  return st;
}

core::Outcome step(EnvState& state, const core::ActionSpec& a,
                   core::RngStream& rng) {
  if (state.scene.empty()) throw std::invalid_argument("step: empty state");
  const auto& sc = state.scene;
  if (a.row < 0 || a.row >= sc.h() || a.col < 0 || a.col >= sc.w() ||
      a.q < 0 || a.q >= state.truth.q())
    throw std::invalid_argument("step: action out of bounds");
  if (!sc.valid().at(a.row, a.col))
    throw std::invalid_argument("step: action targets an invalid pixel");
  state.interactions += 1;
  const double p = state.truth.at(a.q, a.row, a.col);
  return core::Outcome{core::uniform_double(rng) < p ? 1 : 0};
}

const core::ProbMap& ground_truth(const EnvState& state) {
  return state.truth;
}

}  // namespace afford::envs
