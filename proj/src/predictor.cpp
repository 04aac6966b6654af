#include "afford/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

#include "afford/conv_ops.hpp"

// Flat parameter layout.
//
// conv:    enc.w1 [c1][3][3][1]   enc.b1 [c1]
//          enc.w2 [c2][5][5][c1]  enc.b2 [c2]
//          enc.w3 [c3][5][5][c2]  enc.b3 [c3]
//          then per head:
//          deep.w [c2][5][5][c3+Q]  deep.b [c2]   (one-hot channels at c3..)
//          mid.w  [c1][5][5][2*c2]  mid.b  [c1]   (input: up(deep) | enc a2)
//          out.w  [1][3][3][2*c1]   out.b  [1]    (input: up(mid)  | enc a1)
// tabular: per head, logits [Q][H][W].
//
// Conv weights use [oc][ky][kx][ic] order; activations are H×W×C windows.

namespace afford::predictor {

namespace {

using convops::ConvSpec;
using convops::Rect;
using convops::Win;

constexpr double kClampEps = 1e-7;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct TensorDesc {
  std::size_t off = 0;
  std::size_t count = 0;
  int oc = 0, k = 0, ic = 0;  // conv tensors only
};

struct HeadDesc {
  TensorDesc wd, bd, wm, bm, wo, bo;  // conv
  TensorDesc table;                   // tabular
};

struct Layout {
  TensorDesc w1, b1, w2, b2, w3, b3;
  std::vector<HeadDesc> heads;
  std::size_t count = 0;
};

TensorDesc conv_desc(std::size_t& off, int oc, int k, int ic) {
  TensorDesc d;
  d.off = off;
  d.oc = oc;
  d.k = k;
  d.ic = ic;
  d.count = static_cast<std::size_t>(oc) * k * k * ic;
  off += d.count;
  return d;
}

TensorDesc bias_desc(std::size_t& off, int n) {
  TensorDesc d;
  d.off = off;
  d.count = static_cast<std::size_t>(n);
  off += d.count;
  return d;
}

Layout make_layout(const ModelConfig& c) {
  Layout l;
  std::size_t off = 0;
  if (c.arch == Arch::conv) {
    l.w1 = conv_desc(off, c.conv_c1, 3, 1);
    l.b1 = bias_desc(off, c.conv_c1);
    l.w2 = conv_desc(off, c.conv_c2, 5, c.conv_c1);
    l.b2 = bias_desc(off, c.conv_c2);
    l.w3 = conv_desc(off, c.conv_c3, 5, c.conv_c2);
    l.b3 = bias_desc(off, c.conv_c3);
    for (int i = 0; i < c.n_heads; ++i) {
      HeadDesc h;
      h.wd = conv_desc(off, c.conv_c2, 5, c.conv_c3 + c.orientations);
      h.bd = bias_desc(off, c.conv_c2);
      h.wm = conv_desc(off, c.conv_c1, 5, 2 * c.conv_c2);
      h.bm = bias_desc(off, c.conv_c1);
      h.wo = conv_desc(off, 1, 3, 2 * c.conv_c1);
      h.bo = bias_desc(off, 1);
      l.heads.push_back(h);
    }
  } else {
    for (int i = 0; i < c.n_heads; ++i) {
      HeadDesc h;
      h.table.off = off;
      h.table.count =
          static_cast<std::size_t>(c.orientations) * c.height * c.width;
      off += h.table.count;
      l.heads.push_back(h);
    }
  }
  l.count = off;
  return l;
}

// Decode window chain for one output window, bottom-up from the target.
struct DecodeRects {
  Rect out1;      // final logits, at H×W
  Rect cat1;      // [up(mid) | a1] window, at H×W
  Rect mid_out;   // mid conv output, at H/2
  Rect cat_mid;   // [up(deep) | a2] window, at H/2
  Rect deep_out;  // deep conv output, at H/4
  Rect deep_in;   // bottleneck window, at H/4
};

DecodeRects decode_rects(const Rect& out1, int h, int w) {
  DecodeRects r;
  r.out1 = out1;
  r.cat1 = convops::conv_in_rect(out1, 3, 1, 1, h, w);
  r.mid_out = convops::up2_in_rect(r.cat1, h / 2, w / 2);
  r.cat_mid = convops::conv_in_rect(r.mid_out, 5, 1, 2, h / 2, w / 2);
  r.deep_out = convops::up2_in_rect(r.cat_mid, h / 4, w / 4);
  r.deep_in = convops::conv_in_rect(r.deep_out, 5, 1, 2, h / 4, w / 4);
  return r;
}

template <class Real>
struct EncoderCache {
  Win<Real> in, a1, a2, a3;
};

template <class Real>
struct ConvRefs {
  const Real *w1, *b1, *w2, *b2, *w3, *b3;
  struct Head {
    const Real *wd, *bd, *wm, *bm, *wo, *bo;
  };
  std::vector<Head> heads;
};

template <class Real, class Vec>
auto make_refs(const ModelConfig& cfg, const Layout& l, Vec& v) {
  ConvRefs<Real> r;
  auto p = [&](const TensorDesc& d) { return v.data() + d.off; };
  r.w1 = p(l.w1);
  r.b1 = p(l.b1);
  r.w2 = p(l.w2);
  r.b2 = p(l.b2);
  r.w3 = p(l.w3);
  r.b3 = p(l.b3);
  for (int i = 0; i < cfg.n_heads; ++i) {
    const auto& h = l.heads[i];
    r.heads.push_back({p(h.wd), p(h.bd), p(h.wm), p(h.bm), p(h.wo), p(h.bo)});
  }
  return r;
}

template <class Real>
ConvSpec<Real> enc1_spec(const ModelConfig& c, const ConvRefs<Real>& r) {
  return ConvSpec<Real>{r.w1, r.b1, c.conv_c1, 1, 3, 1, 1, c.height, c.width};
}
template <class Real>
ConvSpec<Real> enc2_spec(const ModelConfig& c, const ConvRefs<Real>& r) {
  return ConvSpec<Real>{r.w2,      r.b2, c.conv_c2, c.conv_c1, 5, 2, 2,
                        c.height, c.width};
}
template <class Real>
ConvSpec<Real> enc3_spec(const ModelConfig& c, const ConvRefs<Real>& r) {
  return ConvSpec<Real>{r.w3,          r.b3, c.conv_c3, c.conv_c2, 5, 2, 2,
                        c.height / 2, c.width / 2};
}
template <class Real>
ConvSpec<Real> deep_spec(const ModelConfig& c,
                         const typename ConvRefs<Real>::Head& h, int q) {
  ConvSpec<Real> s{h.wd,          h.bd,
                   c.conv_c2,     c.conv_c3 + c.orientations,
                   5,             1,
                   2,             c.height / 4,
                   c.width / 4};
  s.onehot = c.conv_c3 + q;
  return s;
}
template <class Real>
ConvSpec<Real> mid_spec(const ModelConfig& c,
                        const typename ConvRefs<Real>::Head& h) {
  return ConvSpec<Real>{h.wm,          h.bm, c.conv_c1, 2 * c.conv_c2, 5, 1, 2,
                        c.height / 2, c.width / 2};
}
template <class Real>
ConvSpec<Real> out_spec(const ModelConfig& c,
                        const typename ConvRefs<Real>::Head& h) {
  return ConvSpec<Real>{h.wo,      h.bo, 1, 2 * c.conv_c1, 3, 1, 1,
                        c.height, c.width};
}

// Heights are centered on the flat-table level so the implicit zero padding
// outside the grid is indistinguishable from empty table: without this the
// receptive fields near the frame look anomalous and soak up ensemble
// disagreement that belongs to the objects.
inline constexpr double kInputCenter = 0.5;

template <class Real>
void encoder_forward(const ModelConfig& c, const ConvRefs<Real>& r,
                     const core::Scene& scene, EncoderCache<Real>& e) {
  const int h = c.height, w = c.width;
  e.in.reset(Rect::full(h, w), 1);
  const auto& hm = scene.heights();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      e.in.px(y, x)[0] = Real(hm.at(y, x) - kInputCenter);
  conv_forward(enc1_spec(c, r), e.in, e.a1, Rect::full(h, w));
  convops::relu_inplace(e.a1);
  conv_forward(enc2_spec(c, r), e.a1, e.a2, Rect::full(h / 2, w / 2));
  convops::relu_inplace(e.a2);
  conv_forward(enc3_spec(c, r), e.a2, e.a3, Rect::full(h / 4, w / 4));
  convops::relu_inplace(e.a3);
}

// Copies src channels [0, src.c) of window `rect` out of a full-map window.
template <class Real>
void crop_window(const Win<Real>& full, const Rect& rect, Win<Real>& out) {
  out.reset(rect, full.c);
  for (int y = rect.y0; y < rect.y0 + rect.h; ++y) {
    const Real* s = full.px(y, rect.x0);
    Real* d = out.px(y, rect.x0);
    std::memcpy(d, s, sizeof(Real) * static_cast<std::size_t>(rect.w) *
                          full.c);
  }
}

// dst(full map window) += src over src's window.
template <class Real>
void add_window_into(const Win<Real>& src, Win<Real>& dst) {
  for (int y = src.r.y0; y < src.r.y0 + src.r.h; ++y) {
    const Real* s = src.px(y, src.r.x0);
    Real* d = dst.px(y, src.r.x0);
    for (int i = 0; i < src.r.w * src.c; ++i) d[i] += s[i];
  }
}

// Per-pixel channel concatenation of two equally windowed inputs.
template <class Real>
void concat_windows(const Win<Real>& a, const Win<Real>& b_full,
                    const Rect& rect, Win<Real>& out) {
  out.reset(rect, a.c + b_full.c);
  for (int y = rect.y0; y < rect.y0 + rect.h; ++y)
    for (int x = rect.x0; x < rect.x0 + rect.w; ++x) {
      Real* d = out.px(y, x);
      std::memcpy(d, a.px(y, x), sizeof(Real) * a.c);
      std::memcpy(d + a.c, b_full.px(y, x), sizeof(Real) * b_full.c);
    }
}

// Reusable buffers for one decode pass (forward activations kept for the
// backward pass).
template <class Real>
struct DecodeWs {
  Win<Real> deep_in, deep, deep_up, cat_mid, mid, mid_up, cat1, logit;
  // backward scratch
  Win<Real> d_out1, d_cat1, d_mid_up, d_mid, d_cat_mid, d_deep_up, d_deep,
      d_deep_in;
};

template <class Real>
void decode_forward(const ModelConfig& c, const ConvRefs<Real>& r, int head,
                    int q, const EncoderCache<Real>& e, const Rect& out1,
                    DecodeWs<Real>& ws) {
  const int h = c.height, w = c.width;
  const DecodeRects R = decode_rects(out1, h, w);
  const auto& hd = r.heads[head];
  crop_window(e.a3, R.deep_in, ws.deep_in);
  conv_forward(deep_spec<Real>(c, hd, q), ws.deep_in, ws.deep, R.deep_out);
  convops::relu_inplace(ws.deep);
  convops::up2_forward(ws.deep, h / 4, w / 4, ws.deep_up, R.cat_mid);
  concat_windows(ws.deep_up, e.a2, R.cat_mid, ws.cat_mid);
  conv_forward(mid_spec<Real>(c, hd), ws.cat_mid, ws.mid, R.mid_out);
  convops::relu_inplace(ws.mid);
  convops::up2_forward(ws.mid, h / 2, w / 2, ws.mid_up, R.cat1);
  concat_windows(ws.mid_up, e.a1, R.cat1, ws.cat1);
  conv_forward(out_spec<Real>(c, hd), ws.cat1, ws.logit, R.out1);
}

template <class Real>
struct GradRefs {
  Real *w1, *b1, *w2, *b2, *w3, *b3;
  struct Head {
    Real *wd, *bd, *wm, *bm, *wo, *bo;
  };
  std::vector<Head> heads;
};

template <class Real>
GradRefs<Real> make_grad_refs(const ModelConfig& cfg, const Layout& l,
                              std::vector<Real>& g) {
  GradRefs<Real> r;
  auto p = [&](const TensorDesc& d) { return g.data() + d.off; };
  r.w1 = p(l.w1);
  r.b1 = p(l.b1);
  r.w2 = p(l.w2);
  r.b2 = p(l.b2);
  r.w3 = p(l.w3);
  r.b3 = p(l.b3);
  for (int i = 0; i < cfg.n_heads; ++i) {
    const auto& h = l.heads[i];
    r.heads.push_back({p(h.wd), p(h.bd), p(h.wm), p(h.bm), p(h.wo), p(h.bo)});
  }
  return r;
}

// Backward through one decoded pixel cone. d_logit is the scalar gradient
// at the acted pixel. Head parameter gradients accumulate into `g`; skip
// and bottleneck gradients accumulate into the scene's full-map buffers.
template <class Real>
void decode_backward(const ModelConfig& c, const ConvRefs<Real>& r, int head,
                     int q, const Rect& out1, Real d_logit, DecodeWs<Real>& ws,
                     typename GradRefs<Real>::Head& g, Win<Real>& d_a1,
                     Win<Real>& d_a2, Win<Real>& d_a3) {
  const int h = c.height, w = c.width;
  const DecodeRects R = decode_rects(out1, h, w);
  const auto& hd = r.heads[head];

  ws.d_out1.reset(R.out1, 1);
  ws.d_out1.px(R.out1.y0, R.out1.x0)[0] = d_logit;

  ws.d_cat1.reset(R.cat1, 2 * c.conv_c1);
  conv_backward(out_spec<Real>(c, hd), ws.cat1, ws.d_out1, &ws.d_cat1, g.wo,
                g.bo);

  // Split cat1 into the upsampled mid part and the a1 skip.
  ws.d_mid.reset(R.mid_out, c.conv_c1);
  ws.d_mid_up.reset(R.cat1, c.conv_c1);
  for (int y = R.cat1.y0; y < R.cat1.y0 + R.cat1.h; ++y)
    for (int x = R.cat1.x0; x < R.cat1.x0 + R.cat1.w; ++x) {
      const Real* s = ws.d_cat1.px(y, x);
      std::memcpy(ws.d_mid_up.px(y, x), s, sizeof(Real) * c.conv_c1);
      Real* da1 = d_a1.px(y, x);
      for (int ch = 0; ch < c.conv_c1; ++ch) da1[ch] += s[c.conv_c1 + ch];
    }
  convops::up2_backward(ws.d_mid_up, h / 2, w / 2, ws.d_mid);
  convops::relu_backward_inplace(ws.mid, ws.d_mid);

  ws.d_cat_mid.reset(R.cat_mid, 2 * c.conv_c2);
  conv_backward(mid_spec<Real>(c, hd), ws.cat_mid, ws.d_mid, &ws.d_cat_mid,
                g.wm, g.bm);

  ws.d_deep.reset(R.deep_out, c.conv_c2);
  ws.d_deep_up.reset(R.cat_mid, c.conv_c2);
  for (int y = R.cat_mid.y0; y < R.cat_mid.y0 + R.cat_mid.h; ++y)
    for (int x = R.cat_mid.x0; x < R.cat_mid.x0 + R.cat_mid.w; ++x) {
      const Real* s = ws.d_cat_mid.px(y, x);
      std::memcpy(ws.d_deep_up.px(y, x), s, sizeof(Real) * c.conv_c2);
      Real* da2 = d_a2.px(y, x);
      for (int ch = 0; ch < c.conv_c2; ++ch) da2[ch] += s[c.conv_c2 + ch];
    }
  convops::up2_backward(ws.d_deep_up, h / 4, w / 4, ws.d_deep);
  convops::relu_backward_inplace(ws.deep, ws.d_deep);

  ws.d_deep_in.reset(R.deep_in, c.conv_c3);
  conv_backward(deep_spec<Real>(c, hd, q), ws.deep_in, ws.d_deep,
                &ws.d_deep_in, g.wd, g.bd);
  add_window_into(ws.d_deep_in, d_a3);
}

template <class Real>
void encoder_backward(const ModelConfig& c, const ConvRefs<Real>& r,
                      const EncoderCache<Real>& e, Win<Real>& d_a1,
                      Win<Real>& d_a2, Win<Real>& d_a3, GradRefs<Real>& g) {
  convops::relu_backward_inplace(e.a3, d_a3);
  conv_backward(enc3_spec(c, r), e.a2, d_a3, &d_a2, g.w3, g.b3);
  convops::relu_backward_inplace(e.a2, d_a2);
  conv_backward(enc2_spec(c, r), e.a1, d_a2, &d_a1, g.w2, g.b2);
  convops::relu_backward_inplace(e.a1, d_a1);
  conv_backward(enc1_spec(c, r), e.in, d_a1, static_cast<Win<Real>*>(nullptr),
                g.w1, g.b1);
}

// Batch draws grouped by identical (scene, action, outcome); with-replacement
// repeats are exact multiplicity weights on one shared term.
struct BatchGroup {
  const core::Transition* t;
  double mult;
};

struct BatchIndex {
  std::vector<BatchGroup> groups;                  // first-occurrence order
  std::vector<const core::Scene*> scenes;          // distinct scenes, ditto
  std::vector<std::size_t> group_scene;            // group -> scene slot
};

BatchIndex index_batch(const ModelConfig& cfg,
                       std::span<const core::Transition> batch) {
  if (batch.empty())
    throw std::invalid_argument("train_step: batch must be non-empty");
  BatchIndex ix;
  struct KeyHash {
    std::size_t operator()(const std::tuple<std::uint64_t, int, int, int,
                                            int>& k) const {
      auto [s, q, r, c, b] = k;
      std::uint64_t h = s;
      h ^= (static_cast<std::uint64_t>(q) << 48) ^
           (static_cast<std::uint64_t>(r) << 32) ^
           (static_cast<std::uint64_t>(c) << 16) ^
           static_cast<std::uint64_t>(b);
      h *= 0x9e3779b97f4a7c15ULL;
      return static_cast<std::size_t>(h ^ (h >> 32));
    }
  };
  std::unordered_map<std::tuple<std::uint64_t, int, int, int, int>,
                     std::size_t, KeyHash>
      seen;
  std::unordered_map<std::uint64_t, std::size_t> scene_slot;
  for (const auto& t : batch) {
    if (t.scene.empty())
      throw std::invalid_argument("train_step: empty scene in batch");
    if (t.scene.h() != cfg.height || t.scene.w() != cfg.width)
      throw std::invalid_argument("train_step: scene dims differ from model");
    const auto& a = t.action;
    if (a.q < 0 || a.q >= cfg.orientations || a.row < 0 ||
        a.row >= cfg.height || a.col < 0 || a.col >= cfg.width)
      throw std::invalid_argument("train_step: action out of range");
    if (t.outcome.b != 0 && t.outcome.b != 1)
      throw std::invalid_argument("train_step: outcome must be binary");
    const auto key =
        std::make_tuple(t.scene.id(), a.q, a.row, a.col, t.outcome.b);
    auto it = seen.find(key);
    if (it != seen.end()) {
      ix.groups[it->second].mult += 1.0;
      continue;
    }
    seen.emplace(key, ix.groups.size());
    std::size_t slot;
    auto sit = scene_slot.find(t.scene.id());
    if (sit == scene_slot.end()) {
      slot = ix.scenes.size();
      scene_slot.emplace(t.scene.id(), slot);
      ix.scenes.push_back(&t.scene);
    } else {
      slot = sit->second;
    }
    ix.groups.push_back({&t, 1.0});
    ix.group_scene.push_back(slot);
  }
  return ix;
}

// Shared forward/backward over a batch. When `grads` is null only the loss
// is computed.
template <class Real>
double batch_pass(const EnsembleParams<Real>& p,
                  std::span<const core::Transition> batch,
                  std::vector<Real>* grads) {
  const ModelConfig& cfg = p.cfg;
  const Layout lay = make_layout(cfg);
  const BatchIndex ix = index_batch(cfg, batch);
  const double denom =
      static_cast<double>(cfg.n_heads) * static_cast<double>(batch.size());
  double loss_sum = 0.0;

  if (cfg.arch == Arch::tabular) {
    for (std::size_t gi = 0; gi < ix.groups.size(); ++gi) {
      const auto& grp = ix.groups[gi];
      const auto& a = grp.t->action;
      const int b = grp.t->outcome.b;
      const std::size_t cell =
          (static_cast<std::size_t>(a.q) * cfg.height + a.row) * cfg.width +
          a.col;
      for (int hd = 0; hd < cfg.n_heads; ++hd) {
        const std::size_t idx = lay.heads[hd].table.off + cell;
        const double z = static_cast<double>(p.theta[idx]);
        const double prob = sigmoid(z);
        loss_sum += grp.mult * bce_loss(prob, b);
        if (grads) {
          const double g = (prob > kClampEps && prob < 1.0 - kClampEps)
                               ? prob - b
                               : 0.0;
          (*grads)[idx] += Real(grp.mult * g / denom);
        }
      }
    }
    return loss_sum / denom;
  }

  const auto refs = make_refs<Real>(cfg, lay, p.theta);
  GradRefs<Real> grefs;
  if (grads) grefs = make_grad_refs<Real>(cfg, lay, *grads);

  // Per-scene encoder caches and (when training) skip/bottleneck gradient
  // accumulators, full-map sized.
  std::vector<EncoderCache<Real>> caches(ix.scenes.size());
  std::vector<Win<Real>> d_a1, d_a2, d_a3;
  for (std::size_t si = 0; si < ix.scenes.size(); ++si)
    encoder_forward(cfg, refs, *ix.scenes[si], caches[si]);
  if (grads) {
    d_a1.resize(ix.scenes.size());
    d_a2.resize(ix.scenes.size());
    d_a3.resize(ix.scenes.size());
    for (std::size_t si = 0; si < ix.scenes.size(); ++si) {
      d_a1[si].reset(Rect::full(cfg.height, cfg.width), cfg.conv_c1);
      d_a2[si].reset(Rect::full(cfg.height / 2, cfg.width / 2), cfg.conv_c2);
      d_a3[si].reset(Rect::full(cfg.height / 4, cfg.width / 4), cfg.conv_c3);
    }
  }

  DecodeWs<Real> ws;
  for (std::size_t gi = 0; gi < ix.groups.size(); ++gi) {
    const auto& grp = ix.groups[gi];
    const std::size_t si = ix.group_scene[gi];
    const auto& a = grp.t->action;
    const int b = grp.t->outcome.b;
    const Rect out1{a.row, a.col, 1, 1};
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      decode_forward(cfg, refs, hd, a.q, caches[si], out1, ws);
      const double z =
          static_cast<double>(ws.logit.px(a.row, a.col)[0]);
      const double prob = sigmoid(z);
      loss_sum += grp.mult * bce_loss(prob, b);
      if (grads) {
        const double g = (prob > kClampEps && prob < 1.0 - kClampEps)
                             ? prob - b
                             : 0.0;
        const Real dz = Real(grp.mult * g / denom);
        decode_backward(cfg, refs, hd, a.q, out1, dz, ws, grefs.heads[hd],
                        d_a1[si], d_a2[si], d_a3[si]);
      }
    }
  }

  if (grads)
    for (std::size_t si = 0; si < ix.scenes.size(); ++si)
      encoder_backward(cfg, refs, caches[si], d_a1[si], d_a2[si], d_a3[si],
                       grefs);
  return loss_sum / denom;
}

template <class Real>
void adam_update(EnsembleParams<Real>& p, const std::vector<Real>& g) {
  p.adam_t += 1;
  const double b1 = p.cfg.adam_beta1, b2 = p.cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(p.adam_t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(p.adam_t));
  const double lr = p.cfg.learning_rate, eps = p.cfg.adam_eps;
  for (std::size_t i = 0; i < p.theta.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double m = b1 * p.adam_m[i] + (1.0 - b1) * gi;
    const double v = b2 * p.adam_v[i] + (1.0 - b2) * gi * gi;
    p.adam_m[i] = Real(m);
    p.adam_v[i] = Real(v);
    p.theta[i] -= Real(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
  }
}

template <class Real>
void he_fill(std::span<Real> w, int fan_in, double scale,
             core::RngStream& rng) {
  const double std = scale * std::sqrt(2.0 / fan_in);
  for (auto& v : w) v = Real(std * core::gaussian(rng));
}

}  // namespace

void ModelConfig::validate() const {
  if (height < 1 || width < 1)
    throw std::invalid_argument("ModelConfig: grid dims must be >= 1");
  if (orientations < 1)
    throw std::invalid_argument("ModelConfig: orientations must be >= 1");
  if (n_heads < 1)
    throw std::invalid_argument("ModelConfig: n_heads must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("ModelConfig: learning_rate must be > 0");
  if (batch_size < 1)
    throw std::invalid_argument("ModelConfig: batch_size must be >= 1");
  if (updates_per_interaction < 0)
    throw std::invalid_argument("ModelConfig: negative update count");
  if (!(init_scale > 0.0))
    throw std::invalid_argument("ModelConfig: init_scale must be > 0");
  if (arch == Arch::conv) {
    if (height % 4 != 0 || width % 4 != 0 || height < 8 || width < 8)
      throw std::invalid_argument(
          "ModelConfig: conv arch needs grid dims divisible by 4 and >= 8");
    if (conv_c1 < 1 || conv_c2 < 1 || conv_c3 < 1 || conv_c1 > 64 ||
        conv_c2 > 64 || conv_c3 > 64)
      throw std::invalid_argument(
          "ModelConfig: conv channel widths must lie in [1, 64]");
  }
}

template <class Real>
EnsembleParams<Real> init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Layout lay = make_layout(cfg);
  EnsembleParams<Real> p;
  p.cfg = cfg;
  p.theta.assign(lay.count, Real(0));
  p.adam_m.assign(lay.count, Real(0));
  p.adam_v.assign(lay.count, Real(0));
  auto span_of = [&](const TensorDesc& d) {
    return std::span<Real>(p.theta.data() + d.off, d.count);
  };
  if (cfg.arch == Arch::conv) {
    core::RngStream enc_rng(core::derive_seed(seed, 101));
    he_fill(span_of(lay.w1), 3 * 3 * 1, cfg.init_scale, enc_rng);
    he_fill(span_of(lay.w2), 5 * 5 * cfg.conv_c1, cfg.init_scale, enc_rng);
    he_fill(span_of(lay.w3), 5 * 5 * cfg.conv_c2, cfg.init_scale, enc_rng);
    for (int i = 0; i < cfg.n_heads; ++i) {
      core::RngStream rng(core::derive_seed(seed, 2000 + i));
      const auto& h = lay.heads[i];
      he_fill(span_of(h.wd), 5 * 5 * (cfg.conv_c3 + cfg.orientations),
              cfg.init_scale, rng);
      he_fill(span_of(h.wm), 5 * 5 * 2 * cfg.conv_c2, cfg.init_scale, rng);
      he_fill(span_of(h.wo), 3 * 3 * 2 * cfg.conv_c1, cfg.init_scale, rng);
    }
  } else {
    for (int i = 0; i < cfg.n_heads; ++i) {
      core::RngStream rng(core::derive_seed(seed, 2000 + i));
      for (auto& v : span_of(lay.heads[i].table))
        v = Real(0.5 * cfg.init_scale * core::gaussian(rng));
    }
  }
  return p;
}

template <class Real>
core::ProbMap predict_head(const EnsembleParams<Real>& p, int head,
                           const core::Scene& scene) {
  const ModelConfig& cfg = p.cfg;
  if (head < 0 || head >= cfg.n_heads)
    throw std::invalid_argument("predict_head: head out of range");
  if (scene.h() != cfg.height || scene.w() != cfg.width)
    throw std::invalid_argument("predict_head: scene dims differ from model");
  core::Grid3 out(cfg.orientations, cfg.height, cfg.width);
  const Layout lay = make_layout(cfg);
  if (cfg.arch == Arch::tabular) {
    const Real* t = p.theta.data() + lay.heads[head].table.off;
    for (std::size_t i = 0; i < lay.heads[head].table.count; ++i)
      out.flat(i) = sigmoid(static_cast<double>(t[i]));
    return core::ProbMap(std::move(out));
  }
  const auto refs = make_refs<Real>(cfg, lay, p.theta);
  EncoderCache<Real> cache;
  encoder_forward(cfg, refs, scene, cache);
  DecodeWs<Real> ws;
  const Rect full = Rect::full(cfg.height, cfg.width);
  for (int q = 0; q < cfg.orientations; ++q) {
    decode_forward(cfg, refs, head, q, cache, full, ws);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x)
        out.at(q, y, x) = sigmoid(static_cast<double>(ws.logit.px(y, x)[0]));
  }
  return core::ProbMap(std::move(out));
}

template <class Real>
std::vector<core::ProbMap> predict_all(const EnsembleParams<Real>& p,
                                       const core::Scene& scene) {
  const ModelConfig& cfg = p.cfg;
  if (scene.h() != cfg.height || scene.w() != cfg.width)
    throw std::invalid_argument("predict_all: scene dims differ from model");
  std::vector<core::ProbMap> maps;
  maps.reserve(cfg.n_heads);
  if (cfg.arch == Arch::tabular) {
    for (int i = 0; i < cfg.n_heads; ++i)
      maps.push_back(predict_head(p, i, scene));
    return maps;
  }
  const Layout lay = make_layout(cfg);
  const auto refs = make_refs<Real>(cfg, lay, p.theta);
  EncoderCache<Real> cache;
  encoder_forward(cfg, refs, scene, cache);
  DecodeWs<Real> ws;
  const Rect full = Rect::full(cfg.height, cfg.width);
  for (int i = 0; i < cfg.n_heads; ++i) {
    core::Grid3 out(cfg.orientations, cfg.height, cfg.width);
    for (int q = 0; q < cfg.orientations; ++q) {
      decode_forward(cfg, refs, i, q, cache, full, ws);
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
          out.at(q, y, x) =
              sigmoid(static_cast<double>(ws.logit.px(y, x)[0]));
    }
    maps.push_back(core::ProbMap(std::move(out)));
  }
  return maps;
}

core::ProbMap mean_map(std::span<const core::ProbMap> heads) {
  if (heads.empty()) throw std::invalid_argument("mean_map: empty ensemble");
  const auto& first = heads.front().values();
  for (const auto& h : heads)
    if (!h.values().same_shape(first))
      throw std::invalid_argument("mean_map: head shapes differ");
  core::Grid3 out(first.c(), first.h(), first.w());
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (const auto& h : heads) s += h.values().flat(i);
    out.flat(i) = s * inv;
  }
  return core::ProbMap(std::move(out));
}

double bce_loss(double p, int b) {
  if (b != 0 && b != 1)
    throw std::invalid_argument("bce_loss: outcome must be binary");
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("bce_loss: p must lie in [0, 1]");
  const double pc = std::min(1.0 - kClampEps, std::max(kClampEps, p));
  return b == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

template <class Real>
double batch_loss(const EnsembleParams<Real>& p,
                  std::span<const core::Transition> batch) {
  return batch_pass<Real>(p, batch, nullptr);
}

template <class Real>
std::vector<Real> batch_gradient(const EnsembleParams<Real>& p,
                                 std::span<const core::Transition> batch) {
  std::vector<Real> g(p.theta.size(), Real(0));
  batch_pass<Real>(p, batch, &g);
  return g;
}

template <class Real>
std::pair<EnsembleParams<Real>, double> train_step(
    EnsembleParams<Real> p, std::span<const core::Transition> batch) {
  std::vector<Real> g(p.theta.size(), Real(0));
  const double loss = batch_pass<Real>(p, batch, &g);
  adam_update(p, g);
  return {std::move(p), loss};
}

template <class Real>
void save_checkpoint(const EnsembleParams<Real>& p, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const ModelConfig& c = p.cfg;
  char header[160];
  std::snprintf(header, sizeof(header),
                "affordnet v1 arch=%s h=%d w=%d q=%d n=%d c1=%d c2=%d c3=%d "
                "count=%zu\n",
                c.arch == Arch::conv ? "conv" : "tabular", c.height, c.width,
                c.orientations, c.n_heads, c.conv_c1, c.conv_c2, c.conv_c3,
                p.theta.size());
  f << header;
  std::vector<float> buf(p.theta.size());
  for (std::size_t i = 0; i < p.theta.size(); ++i)
    buf[i] = static_cast<float>(p.theta[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed");
}

EnsembleParams<float> load_checkpoint(const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint reader assumes a little-endian host");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("load_checkpoint: missing header");
  std::istringstream hs(line);
  std::string magic, version;
  hs >> magic >> version;
  if (magic != "affordnet" || version != "v1")
    throw std::runtime_error("load_checkpoint: bad header");
  ModelConfig cfg;
  std::size_t count = 0;
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("load_checkpoint: malformed header field");
    const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
    if (k == "arch") {
      if (v == "conv")
        cfg.arch = Arch::conv;
      else if (v == "tabular")
        cfg.arch = Arch::tabular;
      else
        throw std::runtime_error("load_checkpoint: unknown arch " + v);
    } else if (k == "h")
      cfg.height = std::stoi(v);
    else if (k == "w")
      cfg.width = std::stoi(v);
    else if (k == "q")
      cfg.orientations = std::stoi(v);
    else if (k == "n")
      cfg.n_heads = std::stoi(v);
    else if (k == "c1")
      cfg.conv_c1 = std::stoi(v);
    else if (k == "c2")
      cfg.conv_c2 = std::stoi(v);
    else if (k == "c3")
      cfg.conv_c3 = std::stoi(v);
    else if (k == "count")
      count = static_cast<std::size_t>(std::stoull(v));
    else
      throw std::runtime_error("load_checkpoint: unknown header key " + k);
  }
  cfg.validate();
  const Layout lay = make_layout(cfg);
  if (lay.count != count)
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  EnsembleParams<float> p;
  p.cfg = cfg;
  p.theta.assign(count, 0.0f);
  p.adam_m.assign(count, 0.0f);
  p.adam_v.assign(count, 0.0f);
  f.read(reinterpret_cast<char*>(p.theta.data()),
         static_cast<std::streamsize>(count * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
    throw std::runtime_error("load_checkpoint: truncated parameter array");
  return p;
}

template EnsembleParams<float> init<float>(const ModelConfig&, std::uint64_t);
template EnsembleParams<double> init<double>(const ModelConfig&,
                                             std::uint64_t);
template core::ProbMap predict_head<float>(const EnsembleParams<float>&, int,
                                           const core::Scene&);
template core::ProbMap predict_head<double>(const EnsembleParams<double>&,
                                            int, const core::Scene&);
template std::vector<core::ProbMap> predict_all<float>(
    const EnsembleParams<float>&, const core::Scene&);
template std::vector<core::ProbMap> predict_all<double>(
    const EnsembleParams<double>&, const core::Scene&);
template double batch_loss<float>(const EnsembleParams<float>&,
                                  std::span<const core::Transition>);
template double batch_loss<double>(const EnsembleParams<double>&,
                                   std::span<const core::Transition>);
template std::vector<float> batch_gradient<float>(
    const EnsembleParams<float>&, std::span<const core::Transition>);
template std::vector<double> batch_gradient<double>(
    const EnsembleParams<double>&, std::span<const core::Transition>);
template std::pair<EnsembleParams<float>, double> train_step<float>(
    EnsembleParams<float>, std::span<const core::Transition>);
template std::pair<EnsembleParams<double>, double> train_step<double>(
    EnsembleParams<double>, std::span<const core::Transition>);
template void save_checkpoint<float>(const EnsembleParams<float>&,
                                     const std::string&);
template void save_checkpoint<double>(const EnsembleParams<double>&,
                                      const std::string&);

}  // namespace afford::predictor
