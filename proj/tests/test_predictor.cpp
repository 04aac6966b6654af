#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "afford/core.hpp"
#include "afford/predictor.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

using namespace afford::core;
using namespace afford::predictor;

namespace {

// Reference values computed with an independent high-precision
// implementation and rounded to the nearest double.
constexpr double kBce09b1 = 0.10536051565782630;
constexpr double kBce09b0 = 2.3025850929940457;
constexpr double kBce03b1 = 1.203972804325936;
constexpr double kBceClamped = 1.0000000500000033e-7;

ModelConfig small_cfg(Arch arch) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.height = 8;
  cfg.width = 8;
  cfg.orientations = 2;
  cfg.n_heads = 2;
  cfg.conv_c1 = 1;
  cfg.conv_c2 = 2;
  cfg.conv_c3 = 2;
  cfg.batch_size = 8;
  return cfg;
}

// Heights follow the environment convention (0.5 table, raised objects):
// constant-zero patches would park pre-activations exactly on the relu
// kink, where finite differences and subgradients legitimately disagree.
Scene random_scene(RngStream& rng, int h, int w) {
  Grid2 heights(h, w, 0.5);
  Mask valid(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool border = y < 2 || x < 2 || y >= h - 2 || x >= w - 2;
      valid.set(y, x, !border);
      if (!border) heights.at(y, x) = 0.5 + 0.5 * uniform_double(rng);
    }
  return Scene(heights, valid);
}

std::vector<Transition> random_batch(RngStream& rng, const ModelConfig& cfg,
                                     int n, int n_scenes) {
  std::vector<Scene> scenes;
  for (int i = 0; i < n_scenes; ++i)
    scenes.push_back(random_scene(rng, cfg.height, cfg.width));
  std::vector<Transition> batch;
  for (int i = 0; i < n; ++i) {
    const Scene& s = scenes[uniform_index(rng, scenes.size())];
    int row = 2 + static_cast<int>(uniform_index(rng, cfg.height - 4));
    int col = 2 + static_cast<int>(uniform_index(rng, cfg.width - 4));
    int q = static_cast<int>(uniform_index(rng, cfg.orientations));
    batch.push_back(Transition{s, ActionSpec{row, col, q},
                               Outcome{uniform_double(rng) < 0.5}, i});
  }
  return batch;
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("bce_loss matches reference values and clamps") {
  CHECK(bce_loss(0.9, 1) == doctest::Approx(kBce09b1).epsilon(1e-14));
  CHECK(bce_loss(0.9, 0) == doctest::Approx(kBce09b0).epsilon(1e-14));
  CHECK(bce_loss(0.3, 1) == doctest::Approx(kBce03b1).epsilon(1e-14));
  CHECK(bce_loss(1.0, 1) == doctest::Approx(kBceClamped).epsilon(1e-9));
  CHECK(bce_loss(0.0, 0) == doctest::Approx(kBceClamped).epsilon(1e-9));
  CHECK(std::isfinite(bce_loss(0.0, 1)));
  CHECK(std::isfinite(bce_loss(1.0, 0)));
  CHECK_THROWS_AS(bce_loss(0.5, 2), std::invalid_argument);
  CHECK_THROWS_AS(bce_loss(-0.1, 0), std::invalid_argument);
}

TEST_CASE("init is deterministic and heads differ") {
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto a = init<double>(cfg, 99);
    auto b = init<double>(cfg, 99);
    CHECK(a.theta == b.theta);
    auto c = init<double>(cfg, 100);
    CHECK(a.theta != c.theta);
    CHECK(a.adam_t == 0);
    CHECK(a.adam_m.size() == a.theta.size());
    CHECK(a.adam_v.size() == a.theta.size());

    RngStream rng(derive_seed(31, 1));
    Scene s = random_scene(rng, cfg.height, cfg.width);
    ProbMap h0 = predict_head(a, 0, s);
    ProbMap h1 = predict_head(a, 1, s);
    CHECK(h0.values().data() != h1.values().data());
  }
}

TEST_CASE("predictions are valid probabilities of the right shape") {
  RngStream rng(derive_seed(31, 2));
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto p = init<double>(cfg, 7);
    Scene s = random_scene(rng, cfg.height, cfg.width);
    auto maps = predict_all(p, s);
    REQUIRE(maps.size() == static_cast<std::size_t>(cfg.n_heads));
    for (const auto& m : maps) {
      CHECK(m.q() == cfg.orientations);
      CHECK(m.h() == cfg.height);
      CHECK(m.w() == cfg.width);
      for (double v : m.values().data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("predict_all equals per-head predict_head") {
  RngStream rng(derive_seed(31, 3));
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto p = init<double>(cfg, 17);
    Scene s = random_scene(rng, cfg.height, cfg.width);
    auto all = predict_all(p, s);
    for (int i = 0; i < cfg.n_heads; ++i) {
      ProbMap one = predict_head(p, i, s);
      const auto& av = all[i].values().data();
      const auto& ov = one.values().data();
      REQUIRE(av.size() == ov.size());
      for (std::size_t j = 0; j < av.size(); ++j)
        CHECK(av[j] == doctest::Approx(ov[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero parameters give 0.5 everywhere") {
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto p = init<double>(cfg, 5);
    for (auto& t : p.theta) t = 0.0;
    RngStream rng(derive_seed(31, 4));
    Scene s = random_scene(rng, cfg.height, cfg.width);
    for (const auto& m : predict_all(p, s))
      for (double v : m.values().data()) CHECK(v == doctest::Approx(0.5));
  }
}

TEST_CASE("mean_map averages heads pointwise") {
  Grid3 g1(1, 2, 2);
  Grid3 g2(1, 2, 2);
  for (double& v : g1.data()) v = 0.2;
  for (double& v : g2.data()) v = 0.8;
  std::vector<ProbMap> heads{ProbMap(g1), ProbMap(g2)};
  ProbMap m = mean_map(heads);
  for (double v : m.values().data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("batch_gradient matches finite differences") {
  RngStream rng(derive_seed(31, 5));
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto p = init<double>(cfg, 99);
    // Evaluate at a generic point: zero-initialized biases leave some
    // pre-activations exactly on the relu kink, where central differences
    // and the relu'(0) = 0 convention legitimately disagree.
    RngStream jitter(derive_seed(1234, 8));
    for (auto& t : p.theta) t += 0.01 * gaussian(jitter);
    auto batch = random_batch(rng, cfg, 6, 3);

    auto g = batch_gradient(p, batch);
    REQUIRE(g.size() == p.theta.size());

    // Step small enough that probing one parameter cannot push a jittered
    // pre-activation across the relu kink; double precision keeps the
    // central-difference roundoff near 1e-11 at this step.
    const double h = 1e-5;
    std::vector<double> gfd(g.size(), 0.0);
    for (std::size_t i = 0; i < p.theta.size(); ++i) {
      const double keep = p.theta[i];
      p.theta[i] = keep + h;
      double lp = batch_loss(p, batch);
      p.theta[i] = keep - h;
      double lm = batch_loss(p, batch);
      p.theta[i] = keep;
      gfd[i] = (lp - lm) / (2 * h);
    }
    std::vector<double> diff(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) diff[i] = g[i] - gfd[i];
    double rel = l2(diff) / std::max(l2(g), l2(gfd));
    INFO("arch=", arch == Arch::conv ? "conv" : "tabular", " rel=", rel);
    CHECK(rel <= 1e-4);
  }
}

TEST_CASE("duplicate transitions act as multiplicity") {
  RngStream rng(derive_seed(31, 6));
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto p = init<double>(cfg, 42);
    auto base = random_batch(rng, cfg, 4, 2);

    // Repeat the whole batch 3x: mean loss and gradient are unchanged.
    std::vector<Transition> tripled;
    for (int r = 0; r < 3; ++r)
      for (const auto& t : base) tripled.push_back(t);

    CHECK(batch_loss(p, base) ==
          doctest::Approx(batch_loss(p, tripled)).epsilon(1e-12));
    auto g1 = batch_gradient(p, base);
    auto g2 = batch_gradient(p, tripled);
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i)
      CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("train_step reduces loss on a fixed batch") {
  RngStream rng(derive_seed(31, 7));
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    cfg.learning_rate = 1e-2;
    auto p = init<double>(cfg, 3);
    auto batch = random_batch(rng, cfg, 8, 2);

    double first = batch_loss(p, batch);
    double reported_first = -1.0;
    for (int step = 0; step < 50; ++step) {
      auto [next, loss] = train_step(std::move(p), batch);
      if (step == 0) reported_first = loss;
      p = std::move(next);
    }
    CHECK(reported_first == doctest::Approx(first).epsilon(1e-12));
    double last = batch_loss(p, batch);
    CHECK(last < first);
    CHECK(p.adam_t == 50);
  }
}

TEST_CASE("batch API rejects malformed transitions") {
  ModelConfig cfg = small_cfg(Arch::tabular);
  auto p = init<double>(cfg, 1);
  RngStream rng(derive_seed(31, 8));
  Scene s = random_scene(rng, cfg.height, cfg.width);
  std::vector<Transition> bad{
      Transition{s, ActionSpec{2, 2, cfg.orientations}, Outcome{true}, 0}};
  CHECK_THROWS_AS((void)batch_loss(p, bad), std::invalid_argument);
  CHECK_THROWS_AS((void)batch_gradient(p, bad), std::invalid_argument);
  std::vector<Transition> empty;
  CHECK_THROWS_AS((void)batch_loss(p, empty), std::invalid_argument);

  Scene wrong = random_scene(rng, cfg.height + 4, cfg.width);
  std::vector<Transition> mis{
      Transition{wrong, ActionSpec{2, 2, 0}, Outcome{true}, 0}};
  CHECK_THROWS_AS((void)batch_loss(p, mis), std::invalid_argument);
}

TEST_CASE("checkpoint round-trips parameters") {
  namespace fs = std::filesystem;
  RngStream rng(derive_seed(31, 9));
  for (Arch arch : {Arch::conv, Arch::tabular}) {
    ModelConfig cfg = small_cfg(arch);
    auto p = init<float>(cfg, 12345);
    fs::path path = fs::temp_directory_path() /
                    (arch == Arch::conv ? "afford_test_conv.ckpt"
                                        : "afford_test_tab.ckpt");
    save_checkpoint(p, path.string());
    auto q = load_checkpoint(path.string());
    CHECK(q.cfg.arch == cfg.arch);
    CHECK(q.cfg.height == cfg.height);
    CHECK(q.cfg.width == cfg.width);
    CHECK(q.cfg.orientations == cfg.orientations);
    CHECK(q.cfg.n_heads == cfg.n_heads);
    REQUIRE(q.theta.size() == p.theta.size());
    CHECK(q.theta == p.theta);  // float to float: exact
    CHECK(q.adam_t == 0);

    // Same predictions after reload.
    Scene s = random_scene(rng, cfg.height, cfg.width);
    auto m1 = predict_all(p, s);
    auto m2 = predict_all(q, s);
    for (std::size_t i = 0; i < m1.size(); ++i)
      CHECK(m1[i].values().data() == m2[i].values().data());
    fs::remove(path);
  }
}

TEST_CASE("load_checkpoint rejects corrupt files") {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "afford_test_bad.ckpt";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    REQUIRE(f);
    const char* junk = "not a checkpoint\n";
    std::fwrite(junk, 1, 17, f);
    std::fclose(f);
  }
  CHECK_THROWS((void)load_checkpoint(path.string()));
  CHECK_THROWS((void)load_checkpoint("/nonexistent/nowhere.ckpt"));

  // Truncated payload: write a valid header then too few floats.
  ModelConfig cfg = small_cfg(Arch::tabular);
  auto p = init<float>(cfg, 5);
  save_checkpoint(p, path.string());
  {
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 8);
  }
  CHECK_THROWS((void)load_checkpoint(path.string()));
  fs::remove(path);
}

TEST_CASE("config validation rejects bad shapes") {
  ModelConfig cfg = small_cfg(Arch::conv);
  CHECK_NOTHROW(cfg.validate());
  cfg.height = 10;  // not divisible by 4
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg(Arch::conv);
  cfg.n_heads = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg(Arch::conv);
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg(Arch::tabular);
  cfg.height = 10;  // tabular has no divisibility requirement
  CHECK_NOTHROW(cfg.validate());
}
