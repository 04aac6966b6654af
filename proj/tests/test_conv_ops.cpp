#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "afford/conv_ops.hpp"
#include "afford/core.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

using namespace afford::convops;
using afford::core::RngStream;
using afford::core::derive_seed;
using afford::core::gaussian;

namespace {

// Straightforward dense convolution used as an independent reference.
// Input is [y][x][c] with `ic_data` real channels; weights are
// [oc][ky][kx][ic]. Channel `onehot` (if >= ic_data) reads as an implicit
// all-ones plane; other implicit channels read as zero.
std::vector<double> naive_conv(const std::vector<double>& in, int in_h,
                               int in_w, int ic_data,
                               const std::vector<double>& w,
                               const std::vector<double>& b, int oc, int ic,
                               int k, int stride, int pad, int onehot,
                               int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * oc, 0.0);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      for (int o = 0; o < oc; ++o) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in_w) continue;
            const double* wp =
                w.data() +
                ((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic;
            for (int c = 0; c < ic_data; ++c) {
              acc += wp[c] * in[(static_cast<std::size_t>(iy) * in_w + ix) *
                                    ic_data +
                                c];
            }
            if (onehot >= 0) acc += wp[onehot];
          }
        }
        out[(static_cast<std::size_t>(oy) * out_w + ox) * oc + o] = acc;
      }
    }
  }
  return out;
}

Win<double> full_window(const std::vector<double>& data, int h, int w, int c) {
  Win<double> win;
  win.reset(Rect::full(h, w), c);
  win.v = data;
  return win;
}

std::vector<double> random_vec(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = gaussian(rng);
  return v;
}

// Copies the sub-window `r` out of a full-map window.
Win<double> crop(const Win<double>& fullw, const Rect& r) {
  Win<double> out;
  out.reset(r, fullw.c);
  for (int y = r.y0; y < r.y0 + r.h; ++y)
    for (int x = r.x0; x < r.x0 + r.w; ++x)
      for (int c = 0; c < fullw.c; ++c) out.px(y, x)[c] = fullw.px(y, x)[c];
  return out;
}

}  // namespace

TEST_CASE("conv_forward matches a naive dense reference") {
  RngStream rng(derive_seed(21, 1));
  struct Case {
    int in_h, in_w, ic, oc, k, stride, pad;
  };
  for (Case cs : {Case{6, 6, 2, 3, 3, 1, 1}, Case{8, 8, 3, 2, 5, 2, 2},
                  Case{8, 12, 1, 4, 3, 1, 1}, Case{8, 8, 2, 2, 5, 1, 2}}) {
    const int out_h = (cs.in_h + 2 * cs.pad - cs.k) / cs.stride + 1;
    const int out_w = (cs.in_w + 2 * cs.pad - cs.k) / cs.stride + 1;
    auto in = random_vec(static_cast<std::size_t>(cs.in_h) * cs.in_w * cs.ic,
                         rng);
    auto w = random_vec(
        static_cast<std::size_t>(cs.oc) * cs.k * cs.k * cs.ic, rng);
    auto b = random_vec(cs.oc, rng);

    ConvSpec<double> spec;
    spec.w = w.data();
    spec.b = b.data();
    spec.oc = cs.oc;
    spec.ic = cs.ic;
    spec.k = cs.k;
    spec.stride = cs.stride;
    spec.pad = cs.pad;
    spec.in_h = cs.in_h;
    spec.in_w = cs.in_w;

    Win<double> inw = full_window(in, cs.in_h, cs.in_w, cs.ic);
    Win<double> outw;
    conv_forward(spec, inw, outw, Rect::full(out_h, out_w));

    auto ref = naive_conv(in, cs.in_h, cs.in_w, cs.ic, w, b, cs.oc, cs.ic,
                          cs.k, cs.stride, cs.pad, -1, out_h, out_w);
    REQUIRE(outw.v.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(outw.v[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("windowed conv equals the same pixels of a full pass") {
  RngStream rng(derive_seed(21, 2));
  const int in_h = 12, in_w = 12, ic = 3, oc = 2, k = 5, stride = 2, pad = 2;
  const int out_h = in_h / stride, out_w = in_w / stride;
  auto in = random_vec(static_cast<std::size_t>(in_h) * in_w * ic, rng);
  auto w = random_vec(static_cast<std::size_t>(oc) * k * k * ic, rng);
  auto b = random_vec(oc, rng);

  ConvSpec<double> spec;
  spec.w = w.data();
  spec.b = b.data();
  spec.oc = oc;
  spec.ic = ic;
  spec.k = k;
  spec.stride = stride;
  spec.pad = pad;
  spec.in_h = in_h;
  spec.in_w = in_w;

  Win<double> inw = full_window(in, in_h, in_w, ic);
  Win<double> full_out;
  conv_forward(spec, inw, full_out, Rect::full(out_h, out_w));

  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      Rect out_rect{y, x, 1, 1};
      Rect in_rect = conv_in_rect(out_rect, k, stride, pad, in_h, in_w);
      Win<double> small_in = crop(inw, in_rect);
      Win<double> small_out;
      conv_forward(spec, small_in, small_out, out_rect);
      // Identical tap order means identical floating-point results.
      for (int c = 0; c < oc; ++c)
        CHECK(small_out.px(y, x)[c] == full_out.px(y, x)[c]);
    }
  }
}

TEST_CASE("implicit one-hot channel equals a materialized plane") {
  RngStream rng(derive_seed(21, 3));
  const int in_h = 6, in_w = 6, ic_data = 2, q_planes = 4;
  const int ic = ic_data + q_planes;
  const int oc = 3, k = 3, stride = 1, pad = 1;
  auto in = random_vec(static_cast<std::size_t>(in_h) * in_w * ic_data, rng);
  auto w = random_vec(static_cast<std::size_t>(oc) * k * k * ic, rng);
  auto b = random_vec(oc, rng);

  for (int q = 0; q < q_planes; ++q) {
    const int onehot = ic_data + q;

    ConvSpec<double> spec;
    spec.w = w.data();
    spec.b = b.data();
    spec.oc = oc;
    spec.ic = ic;
    spec.k = k;
    spec.stride = stride;
    spec.pad = pad;
    spec.in_h = in_h;
    spec.in_w = in_w;
    spec.onehot = onehot;

    Win<double> thin = full_window(in, in_h, in_w, ic_data);
    Win<double> out_implicit;
    conv_forward(spec, thin, out_implicit, Rect::full(in_h, in_w));

    // Materialize: data channels, then a one-hot block of q_planes.
    std::vector<double> fat(static_cast<std::size_t>(in_h) * in_w * ic, 0.0);
    for (int y = 0; y < in_h; ++y)
      for (int x = 0; x < in_w; ++x) {
        for (int c = 0; c < ic_data; ++c)
          fat[(static_cast<std::size_t>(y) * in_w + x) * ic + c] =
              in[(static_cast<std::size_t>(y) * in_w + x) * ic_data + c];
        fat[(static_cast<std::size_t>(y) * in_w + x) * ic + onehot] = 1.0;
      }
    ConvSpec<double> spec_fat = spec;
    spec_fat.onehot = -1;
    Win<double> fatw = full_window(fat, in_h, in_w, ic);
    Win<double> out_fat;
    conv_forward(spec_fat, fatw, out_fat, Rect::full(in_h, in_w));

    REQUIRE(out_implicit.v.size() == out_fat.v.size());
    for (std::size_t i = 0; i < out_fat.v.size(); ++i)
      CHECK(out_implicit.v[i] ==
            doctest::Approx(out_fat.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv_backward matches central finite differences") {
  RngStream rng(derive_seed(21, 4));
  for (int stride : {1, 2}) {
    const int in_h = 8, in_w = 8, ic = 2, oc = 2;
    const int k = stride == 1 ? 3 : 5, pad = k / 2;
    const int out_h = (in_h + 2 * pad - k) / stride + 1;
    const int out_w = (in_w + 2 * pad - k) / stride + 1;
    auto in = random_vec(static_cast<std::size_t>(in_h) * in_w * ic, rng);
    auto w = random_vec(static_cast<std::size_t>(oc) * k * k * ic, rng);
    auto b = random_vec(oc, rng);
    auto r = random_vec(static_cast<std::size_t>(out_h) * out_w * oc, rng);

    ConvSpec<double> spec;
    spec.w = w.data();
    spec.b = b.data();
    spec.oc = oc;
    spec.ic = ic;
    spec.k = k;
    spec.stride = stride;
    spec.pad = pad;
    spec.in_h = in_h;
    spec.in_w = in_w;

    auto loss = [&](const std::vector<double>& win,
                    const std::vector<double>& bin,
                    const std::vector<double>& xin) {
      ConvSpec<double> s2 = spec;
      s2.w = win.data();
      s2.b = bin.data();
      Win<double> iw = full_window(xin, in_h, in_w, ic);
      Win<double> ow;
      conv_forward(s2, iw, ow, Rect::full(out_h, out_w));
      double l = 0.0;
      for (std::size_t i = 0; i < ow.v.size(); ++i) l += ow.v[i] * r[i];
      return l;
    };

    Win<double> inw = full_window(in, in_h, in_w, ic);
    Win<double> d_out = full_window(r, out_h, out_w, oc);
    Win<double> d_in;
    d_in.reset(Rect::full(in_h, in_w), ic);
    std::vector<double> d_w(w.size(), 0.0);
    std::vector<double> d_b(b.size(), 0.0);
    conv_backward(spec, inw, d_out, &d_in, d_w.data(), d_b.data());

    const double h = 1e-6;
    auto check_fd = [&](std::vector<double>& target, const double* analytic,
                        std::size_t n, auto&& eval) {
      for (std::size_t i = 0; i < n; ++i) {
        const double keep = target[i];
        target[i] = keep + h;
        double lp = eval();
        target[i] = keep - h;
        double lm = eval();
        target[i] = keep;
        CHECK(analytic[i] ==
              doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
      }
    };
    check_fd(w, d_w.data(), w.size(), [&] { return loss(w, b, in); });
    check_fd(b, d_b.data(), b.size(), [&] { return loss(w, b, in); });
    check_fd(in, d_in.v.data(), in.size(), [&] { return loss(w, b, in); });
  }
}

TEST_CASE("one-hot weight gradient matches finite differences") {
  RngStream rng(derive_seed(21, 5));
  const int in_h = 6, in_w = 6, ic_data = 1, ic = 3, onehot = 2;
  const int oc = 2, k = 3, stride = 1, pad = 1;
  auto in = random_vec(static_cast<std::size_t>(in_h) * in_w * ic_data, rng);
  auto w = random_vec(static_cast<std::size_t>(oc) * k * k * ic, rng);
  auto r = random_vec(static_cast<std::size_t>(in_h) * in_w * oc, rng);

  ConvSpec<double> spec;
  spec.w = w.data();
  spec.oc = oc;
  spec.ic = ic;
  spec.k = k;
  spec.stride = stride;
  spec.pad = pad;
  spec.in_h = in_h;
  spec.in_w = in_w;
  spec.onehot = onehot;

  auto loss = [&](const std::vector<double>& win) {
    ConvSpec<double> s2 = spec;
    s2.w = win.data();
    Win<double> iw = full_window(in, in_h, in_w, ic_data);
    Win<double> ow;
    conv_forward(s2, iw, ow, Rect::full(in_h, in_w));
    double l = 0.0;
    for (std::size_t i = 0; i < ow.v.size(); ++i) l += ow.v[i] * r[i];
    return l;
  };

  Win<double> inw = full_window(in, in_h, in_w, ic_data);
  Win<double> d_out = full_window(r, in_h, in_w, oc);
  std::vector<double> d_w(w.size(), 0.0);
  conv_backward<double>(spec, inw, d_out, nullptr, d_w.data(), nullptr);

  const double h = 1e-6;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    double lp = loss(w);
    w[i] = keep - h;
    double lm = loss(w);
    w[i] = keep;
    double fd = (lp - lm) / (2 * h);
    if (std::abs(fd) < 1e-9) {
      CHECK(std::abs(d_w[i]) < 1e-9);  // untouched implicit-zero channels
    } else {
      CHECK(d_w[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("up2 matches the half-pixel bilinear reference") {
  // Reference values computed with an independent implementation.
  const double row_ref[8] = {1.0, 1.25, 1.75, 2.25, 2.75, 3.25, 3.75, 4.0};
  std::vector<double> in(4 * 4, 0.0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) in[static_cast<std::size_t>(y) * 4 + x] = x + 1.0;
  Win<double> inw = full_window(in, 4, 4, 1);
  Win<double> outw;
  up2_forward(inw, 4, 4, outw, Rect::full(8, 8));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(outw.px(y, x)[0] == doctest::Approx(row_ref[x]).epsilon(1e-14));

  const double grid_ref[4][4] = {{1.0, 1.25, 1.75, 2.0},
                                 {1.5, 1.75, 2.25, 2.5},
                                 {2.5, 2.75, 3.25, 3.5},
                                 {3.0, 3.25, 3.75, 4.0}};
  std::vector<double> in2{1.0, 2.0, 3.0, 4.0};
  Win<double> inw2 = full_window(in2, 2, 2, 1);
  Win<double> outw2;
  up2_forward(inw2, 2, 2, outw2, Rect::full(4, 4));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(outw2.px(y, x)[0] ==
            doctest::Approx(grid_ref[y][x]).epsilon(1e-14));
}

TEST_CASE("windowed up2 equals the same pixels of a full pass") {
  RngStream rng(derive_seed(21, 6));
  const int in_h = 5, in_w = 7, c = 3;
  auto in = random_vec(static_cast<std::size_t>(in_h) * in_w * c, rng);
  Win<double> inw = full_window(in, in_h, in_w, c);
  Win<double> full_out;
  up2_forward(inw, in_h, in_w, full_out, Rect::full(2 * in_h, 2 * in_w));

  for (int y = 0; y < 2 * in_h; ++y) {
    for (int x = 0; x < 2 * in_w; ++x) {
      Rect out_rect{y, x, 1, 1};
      Rect in_rect = up2_in_rect(out_rect, in_h, in_w);
      Win<double> small_in = crop(inw, in_rect);
      Win<double> small_out;
      up2_forward(small_in, in_h, in_w, small_out, out_rect);
      for (int ch = 0; ch < c; ++ch)
        CHECK(small_out.px(y, x)[ch] == full_out.px(y, x)[ch]);
    }
  }
}

TEST_CASE("up2_backward matches central finite differences") {
  RngStream rng(derive_seed(21, 7));
  const int in_h = 4, in_w = 5, c = 2;
  auto in = random_vec(static_cast<std::size_t>(in_h) * in_w * c, rng);
  auto r = random_vec(static_cast<std::size_t>(4 * in_h * in_w) * c, rng);

  auto loss = [&](const std::vector<double>& xin) {
    Win<double> iw = full_window(xin, in_h, in_w, c);
    Win<double> ow;
    up2_forward(iw, in_h, in_w, ow, Rect::full(2 * in_h, 2 * in_w));
    double l = 0.0;
    for (std::size_t i = 0; i < ow.v.size(); ++i) l += ow.v[i] * r[i];
    return l;
  };

  Win<double> d_out = full_window(r, 2 * in_h, 2 * in_w, c);
  Win<double> d_in;
  d_in.reset(Rect::full(in_h, in_w), c);
  up2_backward(d_out, in_h, in_w, d_in);

  const double h = 1e-6;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double keep = in[i];
    in[i] = keep + h;
    double lp = loss(in);
    in[i] = keep - h;
    double lm = loss(in);
    in[i] = keep;
    CHECK(d_in.v[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("relu forward and backward") {
  Win<double> act;
  act.reset(Rect::full(1, 4), 1);
  act.v = {-1.0, 0.0, 2.0, 3.5};
  relu_inplace(act);
  CHECK(act.v == std::vector<double>{0.0, 0.0, 2.0, 3.5});

  Win<double> grad;
  grad.reset(Rect::full(1, 4), 1);
  grad.v = {5.0, 6.0, 7.0, 8.0};
  relu_backward_inplace(act, grad);
  CHECK(grad.v == std::vector<double>{0.0, 0.0, 7.0, 8.0});
}

TEST_CASE("dotn and axpy agree with simple loops") {
  RngStream rng(derive_seed(21, 8));
  for (int n : {1, 3, 4, 7, 16, 33}) {
    auto a = random_vec(n, rng);
    auto b = random_vec(n, rng);
    double ref = 0.0;
    for (int i = 0; i < n; ++i) ref += a[i] * b[i];
    CHECK(dotn(a.data(), b.data(), n) == doctest::Approx(ref).epsilon(1e-12));

    auto y = random_vec(n, rng);
    auto y2 = y;
    axpy(2.5, a.data(), y.data(), n);
    for (int i = 0; i < n; ++i)
      CHECK(y[i] == doctest::Approx(y2[i] + 2.5 * a[i]).epsilon(1e-12));
  }
}
