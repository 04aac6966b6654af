#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "afford/core.hpp"
#include "afford/infogain.hpp"

#include <cmath>
#include <vector>

using namespace afford;
using namespace afford::core;
using namespace afford::infogain;

// Reference values below were computed with an independent high-precision
// implementation and rounded to the nearest double.
namespace {
constexpr double kLn2 = 0.6931471805599453;
constexpr double kH02 = 0.5004024235381879;
constexpr double kH09 = 0.3250829733914482;
constexpr double kJsd0208 = 0.19274475702175743;
constexpr double kJsd010509 = 0.24537613811233138;
constexpr double kBayes0208NonUniform = 0.16366170302592013;
constexpr double kBayes255075 = 0.08027585332963396;
}  // namespace

TEST_CASE("bernoulli_entropy matches reference values") {
  CHECK(bernoulli_entropy(0.5) == doctest::Approx(kLn2).epsilon(1e-14));
  CHECK(bernoulli_entropy(0.2) == doctest::Approx(kH02).epsilon(1e-14));
  CHECK(bernoulli_entropy(0.8) == doctest::Approx(kH02).epsilon(1e-14));
  CHECK(bernoulli_entropy(0.9) == doctest::Approx(kH09).epsilon(1e-14));
  CHECK(bernoulli_entropy(0.0) == 0.0);
  CHECK(bernoulli_entropy(1.0) == 0.0);
  CHECK_THROWS_AS(bernoulli_entropy(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(bernoulli_entropy(1.1), std::invalid_argument);
}

TEST_CASE("jsd matches reference values and bounds") {
  std::vector<double> two{0.2, 0.8};
  CHECK(jsd(two) == doctest::Approx(kJsd0208).epsilon(1e-14));
  std::vector<double> three{0.1, 0.5, 0.9};
  CHECK(jsd(three) == doctest::Approx(kJsd010509).epsilon(1e-14));

  std::vector<double> agree{0.3, 0.3, 0.3};
  CHECK(jsd(agree) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));

  std::vector<double> extremes{0.0, 1.0};
  CHECK(jsd(extremes) == doctest::Approx(kLn2).epsilon(1e-14));

  RngStream rng(derive_seed(5, 1));
  for (int trial = 0; trial < 2000; ++trial) {
    std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<double> ps(n);
    for (auto& p : ps) p = uniform_double(rng);
    double v = jsd(ps);
    CHECK(v >= -1e-15);
    CHECK(v <= kLn2 + 1e-12);
  }
  CHECK_THROWS_AS(jsd(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("jsd is zero iff all members agree") {
  std::vector<double> same{0.42, 0.42, 0.42, 0.42};
  CHECK(jsd(same) < 1e-15);
  std::vector<double> differ{0.42, 0.42, 0.43};
  CHECK(jsd(differ) > 0.0);
}

TEST_CASE("bayes_info_gain matches reference values") {
  std::vector<double> ps{0.2, 0.8};
  std::vector<double> uniform{0.5, 0.5};
  CHECK(bayes_info_gain(ps, uniform) == doctest::Approx(kJsd0208).epsilon(1e-14));

  std::vector<double> skew{0.3, 0.7};
  CHECK(bayes_info_gain(ps, skew) ==
        doctest::Approx(kBayes0208NonUniform).epsilon(1e-13));

  std::vector<double> ps3{0.25, 0.5, 0.75};
  std::vector<double> w3{0.2, 0.3, 0.5};
  CHECK(bayes_info_gain(ps3, w3) == doctest::Approx(kBayes255075).epsilon(1e-13));

  CHECK_THROWS_AS(bayes_info_gain(ps, std::vector<double>{0.5}),
                  std::invalid_argument);
}

TEST_CASE("bayes_info_gain with uniform prior equals jsd everywhere") {
  RngStream rng(derive_seed(6, 2));
  for (int trial = 0; trial < 5000; ++trial) {
    std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<double> ps(n);
    for (auto& p : ps) p = uniform_double(rng);
    std::vector<double> prior(n, 1.0 / static_cast<double>(n));
    CHECK(std::abs(bayes_info_gain(ps, prior) - jsd(ps)) <= 1e-10);
  }
}

namespace {
ProbMap const_map(int q, int h, int w, double p) {
  Grid3 g(q, h, w);
  for (double& v : g.data()) v = p;
  return ProbMap(g);
}
}  // namespace

TEST_CASE("info_map computes per-cell disagreement") {
  std::vector<ProbMap> heads;
  heads.push_back(const_map(2, 3, 3, 0.2));
  heads.push_back(const_map(2, 3, 3, 0.8));
  InfoMap im = info_map(heads);
  CHECK_FALSE(im.normalized);
  for (double v : im.values.data()) {
    CHECK(v == doctest::Approx(kJsd0208).epsilon(1e-14));
  }

  std::vector<ProbMap> agree;
  agree.push_back(const_map(1, 2, 2, 0.4));
  agree.push_back(const_map(1, 2, 2, 0.4));
  InfoMap zero = info_map(agree);
  for (double v : zero.values.data()) CHECK(v < 1e-15);

  std::vector<ProbMap> mismatch;
  mismatch.push_back(const_map(1, 2, 2, 0.4));
  mismatch.push_back(const_map(2, 2, 2, 0.4));
  CHECK_THROWS_AS(info_map(mismatch), std::invalid_argument);
  CHECK_THROWS_AS(info_map(std::vector<ProbMap>{}), std::invalid_argument);
}

TEST_CASE("normalize rescales over valid cells only") {
  Grid3 v(2, 2, 2);
  v.at(0, 0, 0) = 0.1;
  v.at(0, 0, 1) = 0.3;
  v.at(0, 1, 0) = 0.5;
  v.at(0, 1, 1) = 9.0;  // invalid cell: must not drive the max
  v.at(1, 0, 0) = 0.2;
  v.at(1, 0, 1) = 0.1;
  v.at(1, 1, 0) = 0.4;
  v.at(1, 1, 1) = -9.0;  // invalid cell: must not drive the min

  Mask valid(2, 2);
  valid.set(0, 0, true);
  valid.set(0, 1, true);
  valid.set(1, 0, true);
  // (1,1) stays invalid in every orientation plane.

  InfoMap im{v, false};
  InfoMap norm = normalize(im, valid);
  CHECK(norm.normalized);
  // Valid range is [0.1, 0.5] -> affine map (x - 0.1) / 0.4.
  CHECK(norm.values.at(0, 0, 0) == doctest::Approx(0.0).scale(1.0));
  CHECK(norm.values.at(0, 0, 1) == doctest::Approx(0.5));
  CHECK(norm.values.at(0, 1, 0) == doctest::Approx(1.0));
  CHECK(norm.values.at(1, 0, 0) == doctest::Approx(0.25));
  CHECK(norm.values.at(1, 0, 1) == doctest::Approx(0.0).scale(1.0));
  CHECK(norm.values.at(1, 1, 0) == doctest::Approx(0.75));
  // Invalid cells are forced to zero.
  CHECK(norm.values.at(0, 1, 1) == 0.0);
  CHECK(norm.values.at(1, 1, 1) == 0.0);
}

TEST_CASE("normalize handles degenerate and empty masks") {
  Grid3 flat_vals(1, 2, 2);
  for (double& v : flat_vals.data()) v = 0.7;
  Mask valid(2, 2);
  valid.set(0, 0, true);
  valid.set(1, 1, true);
  InfoMap im{flat_vals, false};
  InfoMap norm = normalize(im, valid);
  for (double v : norm.values.data()) CHECK(v == 0.0);

  Mask none(2, 2);
  CHECK_THROWS_AS(normalize(im, none), std::invalid_argument);

  Mask wrong(3, 2);
  wrong.set(0, 0, true);
  CHECK_THROWS_AS(normalize(im, wrong), std::invalid_argument);
}
