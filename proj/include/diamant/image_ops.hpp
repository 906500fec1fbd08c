#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "diamant/ops.hpp"
#include "diamant/tape.hpp"
#include "diamant/tensor.hpp"

// Convolution-family ops on NCHW tensors. conv2d computes cross-correlation
// (no kernel flip); conv_transpose2d is its exact adjoint, so for the same
// square-kernel weight viewed as [Cin, Cout, k, k] the identity
// <conv2d(u, w), v> == <u, conv_transpose2d(v, w)> holds.

namespace diamant {
namespace detail {

// Lowered patch matrix: col[(c*k+ki)*k+kj, oy*Wo+ox] = img[c, oy*s+ki-p, ox*s+kj-p],
// zero where the tap falls outside the image.
template <typename T>
void im2col(const T* img, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t s, std::int64_t p, std::int64_t Ho, std::int64_t Wo, T* col) {
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t y = oy * s + ki - p;
          if (y < 0 || y >= H) {
            std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* row = img + (c * H + y) * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t x = ox * s + kj - p;
            dst[oy * Wo + ox] = (x >= 0 && x < W) ? row[x] : T(0);
          }
        }
      }
}

// Adjoint of im2col: scatters the patch matrix back, accumulating into img.
template <typename T>
void col2im(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t s, std::int64_t p, std::int64_t Ho, std::int64_t Wo, T* img) {
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t y = oy * s + ki - p;
          if (y < 0 || y >= H) continue;
          T* row = img + (c * H + y) * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t x = ox * s + kj - p;
            if (x >= 0 && x < W) row[x] += src[oy * Wo + ox];
          }
        }
      }
}

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p,
                                 const char* name) {
  const std::int64_t span = in + 2 * p - k;
  if (span < 0 || span % s != 0)
    throw ShapeError(std::string(name) + ": size " + std::to_string(in) +
                     " incompatible with kernel " + std::to_string(k) + " stride " +
                     std::to_string(s) + " pad " + std::to_string(p));
  return span / s + 1;
}

}  // namespace detail

// x [B, Cin, H, W], w [Cout, Cin, k, k], bias [Cout] -> [B, Cout, Ho, Wo]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::int64_t stride = 1, std::int64_t pad = 0, Tape<T>* tape = nullptr) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d: expects NCHW input and OIKK weight");
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square");
  if (w.dim(1) != x.dim(1))
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(x.dim(1)));
  const std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), k = w.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != Co) throw ShapeError("conv2d: bias must be [Cout]");
  const std::int64_t Ho = detail::conv_out_dim(H, k, stride, pad, "conv2d");
  const std::int64_t Wo = detail::conv_out_dim(W, k, stride, pad, "conv2d");
  const std::int64_t ckk = Ci * k * k, hw = Ho * Wo;

  auto out = Tensor<T>::zeros({B, Co, Ho, Wo});
  std::vector<T> col(static_cast<std::size_t>(ckk * hw));
  ConstMatMap<T> Wm(w.data(), Co, ckk);
  for (std::int64_t b = 0; b < B; ++b) {
    detail::im2col(x.data() + b * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, col.data());
    ConstMatMap<T> Cm(col.data(), ckk, hw);
    MatMap<T> Om(out.data() + b * Co * hw, Co, hw);
    Om.noalias() = Wm * Cm;
  }
  {
    T* o = out.data();
    const T* bp = bias.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Co; ++co) {
        const T bv = bp[co];
        T* plane = o + (b * Co + co) * hw;
        for (std::int64_t i = 0; i < hw; ++i) plane[i] += bv;
      }
  }

  if (tape && (tape->needs_grad(x) || tape->needs_grad(w) || tape->needs_grad(bias))) {
    const bool nx = tape->needs_grad(x), nw = tape->needs_grad(w), nb = tape->needs_grad(bias);
    const auto ix = nx ? tape->ensure_id(x) : -1;
    const auto iw = nw ? tape->ensure_id(w) : -1;
    const auto ib = nb ? tape->ensure_id(bias) : -1;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      std::vector<T> colbuf(static_cast<std::size_t>(ckk * hw));
      Tensor<T> gx, gw;
      if (nx) gx = Tensor<T>::zeros(x.shape());
      if (nw) gw = Tensor<T>::zeros(w.shape());
      ConstMatMap<T> Wm2(w.data(), Co, ckk);
      for (std::int64_t b = 0; b < B; ++b) {
        ConstMatMap<T> Gm(g.data() + b * Co * hw, Co, hw);
        if (nw) {
          detail::im2col(x.data() + b * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo,
                         colbuf.data());
          ConstMatMap<T> Cm(colbuf.data(), ckk, hw);
          MatMap<T> GW(gw.data(), Co, ckk);
          GW.noalias() += Gm * Cm.transpose();
        }
        if (nx) {
          MatMap<T> Cm(colbuf.data(), ckk, hw);
          Cm.noalias() = Wm2.transpose() * Gm;
          detail::col2im(colbuf.data(), Ci, H, W, k, stride, pad, Ho, Wo,
                         gx.data() + b * Ci * H * W);
        }
      }
      if (nx) tp.accumulate(ix, gx);
      if (nw) tp.accumulate(iw, gw);
      if (nb) {
        auto gb = Tensor<T>::zeros({Co});
        T* d = gb.data();
        const T* s = g.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Co; ++co) {
            const T* plane = s + (b * Co + co) * hw;
            T acc = T(0);
            for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
            d[co] += acc;
          }
        tp.accumulate(ib, gb);
      }
    });
  }
  return out;
}

// x [B, Cin, H, W], w [Cin, Cout, k, k], bias [Cout] -> [B, Cout, Ho, Wo]
// with Ho = (H - 1) * stride + k - 2 * pad.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::int64_t stride = 1, std::int64_t pad = 0,
                           Tape<T>* tape = nullptr) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv_transpose2d: expects NCHW input and IOKK weight");
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv_transpose2d: kernel must be square");
  if (w.dim(0) != x.dim(1))
    throw ShapeError("conv_transpose2d: weight expects " + std::to_string(w.dim(0)) +
                     " input channels, got " + std::to_string(x.dim(1)));
  const std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(1), k = w.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != Co) throw ShapeError("conv_transpose2d: bias must be [Cout]");
  const std::int64_t Ho = (H - 1) * stride + k - 2 * pad;
  const std::int64_t Wo = (W - 1) * stride + k - 2 * pad;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv_transpose2d: output would be empty");
  const std::int64_t ckk = Co * k * k, hw = H * W;

  auto out = Tensor<T>::zeros({B, Co, Ho, Wo});
  std::vector<T> col(static_cast<std::size_t>(ckk * hw));
  ConstMatMap<T> Wm(w.data(), Ci, ckk);
  for (std::int64_t b = 0; b < B; ++b) {
    ConstMatMap<T> Xm(x.data() + b * Ci * hw, Ci, hw);
    MatMap<T> Cm(col.data(), ckk, hw);
    Cm.noalias() = Wm.transpose() * Xm;
    detail::col2im(col.data(), Co, Ho, Wo, k, stride, pad, H, W, out.data() + b * Co * Ho * Wo);
  }
  {
    T* o = out.data();
    const T* bp = bias.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Co; ++co) {
        const T bv = bp[co];
        T* plane = o + (b * Co + co) * Ho * Wo;
        for (std::int64_t i = 0; i < Ho * Wo; ++i) plane[i] += bv;
      }
  }

  if (tape && (tape->needs_grad(x) || tape->needs_grad(w) || tape->needs_grad(bias))) {
    const bool nx = tape->needs_grad(x), nw = tape->needs_grad(w), nb = tape->needs_grad(bias);
    const auto ix = nx ? tape->ensure_id(x) : -1;
    const auto iw = nw ? tape->ensure_id(w) : -1;
    const auto ib = nb ? tape->ensure_id(bias) : -1;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      std::vector<T> colbuf(static_cast<std::size_t>(ckk * hw));
      Tensor<T> gx, gw;
      if (nx) gx = Tensor<T>::zeros(x.shape());
      if (nw) gw = Tensor<T>::zeros(w.shape());
      ConstMatMap<T> Wm2(w.data(), Ci, ckk);
      for (std::int64_t b = 0; b < B; ++b) {
        detail::im2col(g.data() + b * Co * Ho * Wo, Co, Ho, Wo, k, stride, pad, H, W,
                       colbuf.data());
        ConstMatMap<T> Gcol(colbuf.data(), ckk, hw);
        if (nx) {
          MatMap<T> GX(gx.data() + b * Ci * hw, Ci, hw);
          GX.noalias() = Wm2 * Gcol;
        }
        if (nw) {
          ConstMatMap<T> Xm(x.data() + b * Ci * hw, Ci, hw);
          MatMap<T> GW(gw.data(), Ci, ckk);
          GW.noalias() += Xm * Gcol.transpose();
        }
      }
      if (nx) tp.accumulate(ix, gx);
      if (nw) tp.accumulate(iw, gw);
      if (nb) {
        auto gb = Tensor<T>::zeros({Co});
        T* d = gb.data();
        const T* s = g.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t co = 0; co < Co; ++co) {
            const T* plane = s + (b * Co + co) * Ho * Wo;
            T acc = T(0);
            for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += plane[i];
            d[co] += acc;
          }
        tp.accumulate(ib, gb);
      }
    });
  }
  return out;
}

// Max pooling; ties resolve to the lowest flat index inside the window.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::int64_t k = 2, std::int64_t s = 2,
                    Tape<T>* tape = nullptr) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: expects NCHW input");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = detail::conv_out_dim(H, k, s, 0, "maxpool2d");
  const std::int64_t Wo = detail::conv_out_dim(W, k, s, 0, "maxpool2d");
  auto out = Tensor<T>::zeros({B, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(B * C * Ho * Wo));
  T* o = out.data();
  const T* p = x.data();
  std::int64_t oi = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t plane = (b * C + c) * H * W;
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox, ++oi) {
          std::int64_t best = plane + (oy * s) * W + ox * s;
          T bv = p[best];
          for (std::int64_t ki = 0; ki < k; ++ki)
            for (std::int64_t kj = 0; kj < k; ++kj) {
              const std::int64_t idx = plane + (oy * s + ki) * W + (ox * s + kj);
              if (p[idx] > bv) {
                bv = p[idx];
                best = idx;
              }
            }
          o[oi] = bv;
          (*argmax)[static_cast<std::size_t>(oi)] = best;
        }
    }
  if (tape && tape->needs_grad(x)) {
    const auto ix = tape->ensure_id(x);
    const Shape xs = x.shape();
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      auto gx = Tensor<T>::zeros(xs);
      T* d = gx.data();
      const T* s2 = g.data();
      for (std::int64_t i = 0; i < g.numel(); ++i)
        d[(*argmax)[static_cast<std::size_t>(i)]] += s2[i];
      tp.accumulate(ix, gx);
    });
  }
  return out;
}

namespace detail {

struct LerpTap {
  std::int64_t lo, hi;
  double frac;
};

// Half-pixel-center source coordinates (align_corners=false), indices clamped.
inline std::vector<LerpTap> lerp_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double sc = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * sc - 0.5;
    const double fl = std::floor(src);
    std::int64_t lo = static_cast<std::int64_t>(fl);
    const double frac = src - fl;
    std::int64_t hi = lo + 1;
    lo = std::clamp<std::int64_t>(lo, 0, in - 1);
    hi = std::clamp<std::int64_t>(hi, 0, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, frac};
  }
  return taps;
}

}  // namespace detail

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w,
                          Tape<T>* tape = nullptr) {
  if (x.rank() != 4) throw ShapeError("resize_bilinear: expects NCHW input");
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: target size must be positive");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ty = detail::lerp_taps(H, out_h);
  const auto tx = detail::lerp_taps(W, out_w);
  auto out = Tensor<T>::zeros({B, C, out_h, out_w});
  T* o = out.data();
  const T* p = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* plane = p + bc * H * W;
    T* oplane = o + bc * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& yt = ty[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& xt = tx[static_cast<std::size_t>(ox)];
        const double v00 = static_cast<double>(plane[yt.lo * W + xt.lo]);
        const double v01 = static_cast<double>(plane[yt.lo * W + xt.hi]);
        const double v10 = static_cast<double>(plane[yt.hi * W + xt.lo]);
        const double v11 = static_cast<double>(plane[yt.hi * W + xt.hi]);
        const double top = v00 + (v01 - v00) * xt.frac;
        const double bot = v10 + (v11 - v10) * xt.frac;
        oplane[oy * out_w + ox] = static_cast<T>(top + (bot - top) * yt.frac);
      }
    }
  }
  if (tape && tape->needs_grad(x)) {
    const auto ix = tape->ensure_id(x);
    const Shape xs = x.shape();
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      auto gx = Tensor<T>::zeros(xs);
      T* d = gx.data();
      const T* s = g.data();
      for (std::int64_t bc = 0; bc < B * C; ++bc) {
        T* plane = d + bc * H * W;
        const T* gplane = s + bc * out_h * out_w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const auto& yt = ty[static_cast<std::size_t>(oy)];
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const auto& xt = tx[static_cast<std::size_t>(ox)];
            const double gv = static_cast<double>(gplane[oy * out_w + ox]);
            plane[yt.lo * W + xt.lo] += static_cast<T>(gv * (1.0 - yt.frac) * (1.0 - xt.frac));
            plane[yt.lo * W + xt.hi] += static_cast<T>(gv * (1.0 - yt.frac) * xt.frac);
            plane[yt.hi * W + xt.lo] += static_cast<T>(gv * yt.frac * (1.0 - xt.frac));
            plane[yt.hi * W + xt.hi] += static_cast<T>(gv * yt.frac * xt.frac);
          }
        }
      }
      tp.accumulate(ix, gx);
    });
  }
  return out;
}

}  // namespace diamant
