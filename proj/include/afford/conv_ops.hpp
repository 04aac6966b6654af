#pragma once
// Windowed 2-D convolution and bilinear-resize primitives in H×W×C layout.
// Every op takes an explicit output window, so training can restrict work to
// the receptive cone of a single pixel; a full-map pass is the same call
// with a full-size window. Out-of-bounds taps read as zero (zero padding);
// bilinear sampling clamps at the borders.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace afford::convops {

// Half-open window: rows [y0, y0+h), cols [x0, x0+w).
struct Rect {
  int y0 = 0, x0 = 0, h = 0, w = 0;
  bool contains(int y, int x) const {
    return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w;
  }
  static Rect full(int hh, int ww) { return Rect{0, 0, hh, ww}; }
};

// Dense H×W×C buffer over a window of a logical map.
template <class Real>
struct Win {
  Rect r;
  int c = 0;
  std::vector<Real> v;

  void reset(const Rect& rr, int cc) {
    r = rr;
    c = cc;
    v.assign(static_cast<std::size_t>(rr.h) * rr.w * cc, Real(0));
  }
  Real* px(int y, int x) {
    return v.data() +
           (static_cast<std::size_t>(y - r.y0) * r.w + (x - r.x0)) * c;
  }
  const Real* px(int y, int x) const {
    return v.data() +
           (static_cast<std::size_t>(y - r.y0) * r.w + (x - r.x0)) * c;
  }
};

// Input rectangle a k-tap, stride-s, pad-p conv needs for `out`, clipped to
// the logical input bounds (clipped taps are zero padding).
inline Rect conv_in_rect(const Rect& out, int k, int stride, int pad,
                         int in_h, int in_w) {
  int y_min = out.y0 * stride - pad;
  int y_max = (out.y0 + out.h - 1) * stride - pad + k - 1;
  int x_min = out.x0 * stride - pad;
  int x_max = (out.x0 + out.w - 1) * stride - pad + k - 1;
  y_min = y_min < 0 ? 0 : y_min;
  x_min = x_min < 0 ? 0 : x_min;
  y_max = y_max >= in_h ? in_h - 1 : y_max;
  x_max = x_max >= in_w ? in_w - 1 : x_max;
  return Rect{y_min, x_min, y_max - y_min + 1, x_max - x_min + 1};
}

// Source coordinate for 2x bilinear resize without corner alignment.
inline void up2_coord(int y, int in_dim, int& i0, int& i1, double& w1) {
  const double f = (y + 0.5) * 0.5 - 0.5;
  const double fl = std::floor(f);
  w1 = f - fl;
  int a = static_cast<int>(fl);
  int b = a + 1;
  i0 = a < 0 ? 0 : (a >= in_dim ? in_dim - 1 : a);
  i1 = b < 0 ? 0 : (b >= in_dim ? in_dim - 1 : b);
}

// Input rectangle 2x bilinear upsampling reads to produce `out`.
inline Rect up2_in_rect(const Rect& out, int in_h, int in_w) {
  int y0, y1, x0, x1, t;
  double dummy;
  up2_coord(out.y0, in_h, y0, t, dummy);
  up2_coord(out.y0 + out.h - 1, in_h, t, y1, dummy);
  up2_coord(out.x0, in_w, x0, t, dummy);
  up2_coord(out.x0 + out.w - 1, in_w, t, x1, dummy);
  return Rect{y0, x0, y1 - y0 + 1, x1 - x0 + 1};
}

template <class Real>
inline Real dotn(const Real* a, const Real* b, int n) {
  Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <class Real>
inline void axpy(Real alpha, const Real* x, Real* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Conv weights live in [oc][ky][kx][ic] order. `ic` counts weight channels;
// the input window may carry fewer, in which case `onehot` (an absolute
// channel index in [in.c, ic)) names one implicit all-ones plane and the
// remaining implicit channels read as zero. That realizes a broadcast
// one-hot without materializing it.
template <class Real>
struct ConvSpec {
  const Real* w = nullptr;
  const Real* b = nullptr;  // may be null
  int oc = 0, ic = 0, k = 0, stride = 1, pad = 0;
  int in_h = 0, in_w = 0;  // logical input dims
  int onehot = -1;
};

template <class Real>
void conv_forward(const ConvSpec<Real>& s, const Win<Real>& in,
                  Win<Real>& out, const Rect& out_rect) {
  assert(in.c <= s.ic);
  out.reset(out_rect, s.oc);
  const std::size_t oc_stride = static_cast<std::size_t>(s.k) * s.k * s.ic;
  for (int y = out_rect.y0; y < out_rect.y0 + out_rect.h; ++y) {
    for (int x = out_rect.x0; x < out_rect.x0 + out_rect.w; ++x) {
      Real* op = out.px(y, x);
      if (s.b)
        for (int oc = 0; oc < s.oc; ++oc) op[oc] = s.b[oc];
      for (int ky = 0; ky < s.k; ++ky) {
        const int iy = y * s.stride - s.pad + ky;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int kx = 0; kx < s.k; ++kx) {
          const int ix = x * s.stride - s.pad + kx;
          if (ix < 0 || ix >= s.in_w) continue;
          assert(in.r.contains(iy, ix));
          const Real* ip = in.px(iy, ix);
          const Real* wp =
              s.w + (static_cast<std::size_t>(ky) * s.k + kx) * s.ic;
          for (int oc = 0; oc < s.oc; ++oc) {
            Real acc = dotn(wp + oc * oc_stride, ip, in.c);
            if (s.onehot >= 0) acc += wp[oc * oc_stride + s.onehot];
            op[oc] += acc;
          }
        }
      }
    }
  }
}

// Accumulates into d_in (window must equal the activation window), d_w and
// d_b; any of them may be null to skip that gradient.
template <class Real>
void conv_backward(const ConvSpec<Real>& s, const Win<Real>& in,
                   const Win<Real>& d_out, Win<Real>* d_in, Real* d_w,
                   Real* d_b) {
  assert(!d_in || (d_in->r.y0 == in.r.y0 && d_in->r.x0 == in.r.x0 &&
                   d_in->r.h == in.r.h && d_in->r.w == in.r.w));
  const std::size_t oc_stride = static_cast<std::size_t>(s.k) * s.k * s.ic;
  for (int y = d_out.r.y0; y < d_out.r.y0 + d_out.r.h; ++y) {
    for (int x = d_out.r.x0; x < d_out.r.x0 + d_out.r.w; ++x) {
      const Real* g = d_out.px(y, x);
      if (d_b)
        for (int oc = 0; oc < s.oc; ++oc) d_b[oc] += g[oc];
      for (int ky = 0; ky < s.k; ++ky) {
        const int iy = y * s.stride - s.pad + ky;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int kx = 0; kx < s.k; ++kx) {
          const int ix = x * s.stride - s.pad + kx;
          if (ix < 0 || ix >= s.in_w) continue;
          const Real* ip = in.px(iy, ix);
          Real* dip = d_in ? d_in->px(iy, ix) : nullptr;
          const std::size_t tap =
              (static_cast<std::size_t>(ky) * s.k + kx) * s.ic;
          for (int oc = 0; oc < s.oc; ++oc) {
            const Real go = g[oc];
            if (d_w) {
              Real* dwp = d_w + oc * oc_stride + tap;
              axpy(go, ip, dwp, in.c);
              if (s.onehot >= 0) dwp[s.onehot] += go;
            }
            if (dip) axpy(go, s.w + oc * oc_stride + tap, dip, in.c);
          }
        }
      }
    }
  }
}

template <class Real>
void relu_inplace(Win<Real>& w) {
  for (auto& v : w.v)
    if (v < Real(0)) v = Real(0);
}

// grad *= (act > 0); act holds post-activation values.
template <class Real>
void relu_backward_inplace(const Win<Real>& act, Win<Real>& grad) {
  assert(act.v.size() == grad.v.size());
  for (std::size_t i = 0; i < grad.v.size(); ++i)
    if (!(act.v[i] > Real(0))) grad.v[i] = Real(0);
}

template <class Real>
void up2_forward(const Win<Real>& in, int in_h, int in_w, Win<Real>& out,
                 const Rect& out_rect) {
  out.reset(out_rect, in.c);
  for (int y = out_rect.y0; y < out_rect.y0 + out_rect.h; ++y) {
    int y0, y1;
    double wy;
    up2_coord(y, in_h, y0, y1, wy);
    for (int x = out_rect.x0; x < out_rect.x0 + out_rect.w; ++x) {
      int x0, x1;
      double wx;
      up2_coord(x, in_w, x0, x1, wx);
      assert(in.r.contains(y0, x0) && in.r.contains(y1, x1));
      const Real* p00 = in.px(y0, x0);
      const Real* p01 = in.px(y0, x1);
      const Real* p10 = in.px(y1, x0);
      const Real* p11 = in.px(y1, x1);
      Real* op = out.px(y, x);
      const Real a = Real((1.0 - wy) * (1.0 - wx));
      const Real b = Real((1.0 - wy) * wx);
      const Real c = Real(wy * (1.0 - wx));
      const Real d = Real(wy * wx);
      for (int ch = 0; ch < in.c; ++ch)
        op[ch] = a * p00[ch] + b * p01[ch] + c * p10[ch] + d * p11[ch];
    }
  }
}

// Scatters d_out into d_in with the forward weights; d_in must already
// cover up2_in_rect(d_out.r).
template <class Real>
void up2_backward(const Win<Real>& d_out, int in_h, int in_w,
                  Win<Real>& d_in) {
  for (int y = d_out.r.y0; y < d_out.r.y0 + d_out.r.h; ++y) {
    int y0, y1;
    double wy;
    up2_coord(y, in_h, y0, y1, wy);
    for (int x = d_out.r.x0; x < d_out.r.x0 + d_out.r.w; ++x) {
      int x0, x1;
      double wx;
      up2_coord(x, in_w, x0, x1, wx);
      assert(d_in.r.contains(y0, x0) && d_in.r.contains(y1, x1));
      const Real* g = d_out.px(y, x);
      Real* p00 = d_in.px(y0, x0);
      Real* p01 = d_in.px(y0, x1);
      Real* p10 = d_in.px(y1, x0);
      Real* p11 = d_in.px(y1, x1);
      const Real a = Real((1.0 - wy) * (1.0 - wx));
      const Real b = Real((1.0 - wy) * wx);
      const Real c = Real(wy * (1.0 - wx));
      const Real d = Real(wy * wx);
      for (int ch = 0; ch < d_out.c; ++ch) {
        p00[ch] += a * g[ch];
        p01[ch] += b * g[ch];
        p10[ch] += c * g[ch];
        p11[ch] += d * g[ch];
      }
    }
  }
}

}  // namespace afford::convops
