#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diamant/image_ops.hpp"
#include "diamant/ops.hpp"
#include "diamant/param_store.hpp"
#include "diamant/tape.hpp"
#include "diamant/tensor.hpp"

// Parameterized building blocks. Each block comes as a pair of free
// functions: *_params registers its tensors under a hierarchical prefix,
// and a forward function reads them back. Normalization layers carry
// hand-derived backward rules (cheaper and numerically tighter than
// composing them from primitives).

namespace diamant {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// linear: x[..., d_in] * W[d_in, d_out] + b
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b,
                 Tape<T>* tape = nullptr) {
  if (W.rank() != 2) throw ShapeError("linear: weight must be [d_in, d_out]");
  const std::int64_t d_in = W.dim(0), d_out = W.dim(1);
  if (x.dim(x.rank() - 1) != d_in)
    throw ShapeError("linear: input feature dim " + std::to_string(x.dim(x.rank() - 1)) +
                     " != " + std::to_string(d_in));
  if (b.rank() != 1 || b.dim(0) != d_out) throw ShapeError("linear: bias must be [d_out]");
  const std::int64_t rows = x.numel() / d_in;
  auto x2 = x.rank() == 2 ? x : reshape(x, {rows, d_in}, tape);
  auto y2 = add(matmul(x2, W, tape), b, tape);
  if (x.rank() == 2) return y2;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  return reshape(y2, out_shape, tape);
}

// ---------------------------------------------------------------------------
// layernorm over the last dimension
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5), Tape<T>* tape = nullptr) {
  const std::int64_t D = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != D || beta.rank() != 1 || beta.dim(0) != D)
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(D) + "]");
  const std::int64_t rows = x.numel() / D;
  auto out = Tensor<T>::zeros(x.shape());
  std::vector<T> mean(static_cast<std::size_t>(rows)), inv(static_cast<std::size_t>(rows));
  {
    const T* xp = x.data();
    const T* gp = gamma.data();
    const T* bp = beta.data();
    T* op = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = xp + r * D;
      double m = 0;
      for (std::int64_t j = 0; j < D; ++j) m += static_cast<double>(row[j]);
      m /= static_cast<double>(D);
      double v = 0;
      for (std::int64_t j = 0; j < D; ++j) {
        const double d = static_cast<double>(row[j]) - m;
        v += d * d;
      }
      v /= static_cast<double>(D);
      const double iv = 1.0 / std::sqrt(v + static_cast<double>(eps));
      mean[static_cast<std::size_t>(r)] = static_cast<T>(m);
      inv[static_cast<std::size_t>(r)] = static_cast<T>(iv);
      T* orow = op + r * D;
      for (std::int64_t j = 0; j < D; ++j)
        orow[j] = gp[j] * static_cast<T>((static_cast<double>(row[j]) - m) * iv) + bp[j];
    }
  }
  if (tape && (tape->needs_grad(x) || tape->needs_grad(gamma) || tape->needs_grad(beta))) {
    const bool nx = tape->needs_grad(x), ng = tape->needs_grad(gamma), nb = tape->needs_grad(beta);
    const auto ix = nx ? tape->ensure_id(x) : -1;
    const auto ig = ng ? tape->ensure_id(gamma) : -1;
    const auto ib = nb ? tape->ensure_id(beta) : -1;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      Tensor<T> gx, gg, gb;
      if (nx) gx = Tensor<T>::zeros(x.shape());
      if (ng) gg = Tensor<T>::zeros(gamma.shape());
      if (nb) gb = Tensor<T>::zeros(beta.shape());
      const T* xp = x.data();
      const T* gp2 = gamma.data();
      const T* sp = g.data();
      std::vector<T> dxhat(static_cast<std::size_t>(D));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = xp + r * D;
        const T* grow = sp + r * D;
        const T m = mean[static_cast<std::size_t>(r)];
        const T iv = inv[static_cast<std::size_t>(r)];
        double m1 = 0, m2 = 0;
        for (std::int64_t j = 0; j < D; ++j) {
          const T xh = (row[j] - m) * iv;
          const T dxh = grow[j] * gp2[j];
          dxhat[static_cast<std::size_t>(j)] = dxh;
          m1 += static_cast<double>(dxh);
          m2 += static_cast<double>(dxh) * static_cast<double>(xh);
          if (ng) gg.data()[j] += grow[j] * xh;
          if (nb) gb.data()[j] += grow[j];
        }
        if (nx) {
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          T* gxrow = gx.data() + r * D;
          for (std::int64_t j = 0; j < D; ++j) {
            const double xh = static_cast<double>((row[j] - m) * iv);
            gxrow[j] = static_cast<T>(
                static_cast<double>(iv) *
                (static_cast<double>(dxhat[static_cast<std::size_t>(j)]) - m1 - xh * m2));
          }
        }
      }
      if (nx) tp.accumulate(ix, gx);
      if (ng) tp.accumulate(ig, gg);
      if (nb) tp.accumulate(ib, gb);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d over NCHW, per-channel statistics
// ---------------------------------------------------------------------------

// Train mode normalizes with biased batch statistics and folds them into the
// running estimates in place (running <- (1-momentum)*running + momentum*batch);
// eval mode is a pure function of the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                      T eps = T(1e-5), T momentum = T(0.1), Tape<T>* tape = nullptr) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: expects NCHW input");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::initializer_list<const Tensor<T>*> per_channel{&gamma, &beta, &running_mean,
                                                            &running_var};
  for (const Tensor<T>* t : per_channel)
    if (t->rank() != 1 || t->dim(0) != C)
      throw ShapeError("batchnorm2d: per-channel tensors must be [" + std::to_string(C) + "]");
  if (mode == Mode::Train && B < 2)
    throw ContractError("batchnorm2d: train mode needs batch size >= 2");

  const std::int64_t M = B * H * W;
  const std::int64_t hw = H * W;
  std::vector<T> mu(static_cast<std::size_t>(C)), iv(static_cast<std::size_t>(C));
  if (mode == Mode::Train) {
    for (std::int64_t c = 0; c < C; ++c) {
      double m = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* plane = x.data() + (b * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) m += static_cast<double>(plane[i]);
      }
      m /= static_cast<double>(M);
      double v = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* plane = x.data() + (b * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = static_cast<double>(plane[i]) - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(M);
      mu[static_cast<std::size_t>(c)] = static_cast<T>(m);
      iv[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      running_mean.data()[c] =
          (T(1) - momentum) * running_mean.at(c) + momentum * static_cast<T>(m);
      running_var.data()[c] =
          (T(1) - momentum) * running_var.at(c) + momentum * static_cast<T>(v);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mu[static_cast<std::size_t>(c)] = running_mean.at(c);
      iv[static_cast<std::size_t>(c)] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var.at(c)) + static_cast<double>(eps)));
    }
  }

  auto out = Tensor<T>::zeros(x.shape());
  {
    T* op = out.data();
    const T* xp = x.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const T m = mu[static_cast<std::size_t>(c)];
        const T ivc = iv[static_cast<std::size_t>(c)];
        const T gc = gamma.at(c), bc = beta.at(c);
        const T* plane = xp + (b * C + c) * hw;
        T* oplane = op + (b * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) oplane[i] = gc * ((plane[i] - m) * ivc) + bc;
      }
  }

  if (tape && (tape->needs_grad(x) || tape->needs_grad(gamma) || tape->needs_grad(beta))) {
    const bool nx = tape->needs_grad(x), ng = tape->needs_grad(gamma), nb = tape->needs_grad(beta);
    const auto ix = nx ? tape->ensure_id(x) : -1;
    const auto ig = ng ? tape->ensure_id(gamma) : -1;
    const auto ib = nb ? tape->ensure_id(beta) : -1;
    const bool batch_stats = (mode == Mode::Train);
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      Tensor<T> gx, gg, gb;
      if (nx) gx = Tensor<T>::zeros(x.shape());
      if (ng) gg = Tensor<T>::zeros(gamma.shape());
      if (nb) gb = Tensor<T>::zeros(beta.shape());
      const T* xp = x.data();
      const T* sp = g.data();
      for (std::int64_t c = 0; c < C; ++c) {
        const T m = mu[static_cast<std::size_t>(c)];
        const T ivc = iv[static_cast<std::size_t>(c)];
        const T gc = gamma.at(c);
        double sum_g = 0, sum_gx = 0;
        for (std::int64_t b = 0; b < B; ++b) {
          const T* plane = xp + (b * C + c) * hw;
          const T* gplane = sp + (b * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            sum_g += static_cast<double>(gplane[i]);
            sum_gx += static_cast<double>(gplane[i]) * static_cast<double>((plane[i] - m) * ivc);
          }
        }
        if (ng) gg.data()[c] += static_cast<T>(sum_gx);
        if (nb) gb.data()[c] += static_cast<T>(sum_g);
        if (nx) {
          // batch statistics participate in the gradient only in train mode
          const double m1 = batch_stats ? sum_g / static_cast<double>(M) : 0.0;
          const double m2 = batch_stats ? sum_gx / static_cast<double>(M) : 0.0;
          for (std::int64_t b = 0; b < B; ++b) {
            const T* plane = xp + (b * C + c) * hw;
            const T* gplane = sp + (b * C + c) * hw;
            T* gxplane = gx.data() + (b * C + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const double xh = static_cast<double>((plane[i] - m) * ivc);
              const double dxh = static_cast<double>(gplane[i]) * static_cast<double>(gc);
              gxplane[i] = static_cast<T>(static_cast<double>(ivc) * (dxh - m1 * gc - xh * m2 * gc));
            }
          }
        }
      }
      if (nx) tp.accumulate(ix, gx);
      if (ng) tp.accumulate(ig, gg);
      if (nb) tp.accumulate(ib, gb);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// ConvBlock: two (conv3x3 pad1 -> batchnorm -> relu) stages
// ---------------------------------------------------------------------------

template <typename T>
void conv_block_params(ParamStore<T>& ps, const std::string& p, std::int64_t cin,
                       std::int64_t cout) {
  ps.add(p + ".conv1.w", Tensor<T>::zeros({cout, cin, 3, 3}));
  ps.add(p + ".conv1.b", Tensor<T>::zeros({cout}));
  ps.add(p + ".bn1.gamma", Tensor<T>::zeros({cout}));
  ps.add(p + ".bn1.beta", Tensor<T>::zeros({cout}));
  ps.add(p + ".bn1.mean", Tensor<T>::zeros({cout}), false);
  ps.add(p + ".bn1.var", Tensor<T>::zeros({cout}), false);
  ps.add(p + ".conv2.w", Tensor<T>::zeros({cout, cout, 3, 3}));
  ps.add(p + ".conv2.b", Tensor<T>::zeros({cout}));
  ps.add(p + ".bn2.gamma", Tensor<T>::zeros({cout}));
  ps.add(p + ".bn2.beta", Tensor<T>::zeros({cout}));
  ps.add(p + ".bn2.mean", Tensor<T>::zeros({cout}), false);
  ps.add(p + ".bn2.var", Tensor<T>::zeros({cout}), false);
}

template <typename T>
Tensor<T> conv_block_forward(ParamStore<T>& ps, const std::string& p, const Tensor<T>& x,
                             Mode mode, Tape<T>* tape = nullptr) {
  auto h = conv2d(x, ps.at(p + ".conv1.w"), ps.at(p + ".conv1.b"), 1, 1, tape);
  h = batchnorm2d(h, ps.at(p + ".bn1.gamma"), ps.at(p + ".bn1.beta"), ps.at(p + ".bn1.mean"),
                  ps.at(p + ".bn1.var"), mode, T(1e-5), T(0.1), tape);
  h = relu(h, tape);
  h = conv2d(h, ps.at(p + ".conv2.w"), ps.at(p + ".conv2.b"), 1, 1, tape);
  h = batchnorm2d(h, ps.at(p + ".bn2.gamma"), ps.at(p + ".bn2.beta"), ps.at(p + ".bn2.mean"),
                  ps.at(p + ".bn2.var"), mode, T(1e-5), T(0.1), tape);
  return relu(h, tape);
}

// ---------------------------------------------------------------------------
// patch embedding: non-overlapping patches, row-major grid, channel-slowest
// flattening, then a linear projection
// ---------------------------------------------------------------------------

template <typename T>
void patch_embed_params(ParamStore<T>& ps, const std::string& p, std::int64_t C,
                        std::int64_t patch, std::int64_t d) {
  ps.add(p + ".w", Tensor<T>::zeros({C * patch * patch, d}));
  ps.add(p + ".b", Tensor<T>::zeros({d}));
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, std::int64_t patch, const Tensor<T>& W,
                      const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (img.rank() != 4) throw ShapeError("patch_embed: expects NCHW input");
  const std::int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), Wd = img.dim(3);
  if (H % patch != 0 || Wd % patch != 0)
    throw ShapeError("patch_embed: image size " + std::to_string(H) + "x" + std::to_string(Wd) +
                     " not divisible by patch " + std::to_string(patch));
  const std::int64_t Hp = H / patch, Wp = Wd / patch;
  auto x6 = reshape(img, {B, C, Hp, patch, Wp, patch}, tape);
  auto xp = permute(x6, {0, 2, 4, 1, 3, 5}, tape);
  auto tok = reshape(xp, {B, Hp * Wp, C * patch * patch}, tape);
  return linear(tok, W, b, tape);
}

// ---------------------------------------------------------------------------
// multi-head self-attention; also returns the attention tensor so the
// extraction pipeline can read per-head CLS rows
// ---------------------------------------------------------------------------

template <typename T>
struct AttnResult {
  Tensor<T> out;   // [B, T, d]
  Tensor<T> attn;  // [B, h, T, T]
};

template <typename T>
void mhsa_params(ParamStore<T>& ps, const std::string& p, std::int64_t d) {
  for (const char* n : {"q", "k", "v", "o"}) {
    ps.add(p + ".w" + n, Tensor<T>::zeros({d, d}));
    ps.add(p + ".b" + n, Tensor<T>::zeros({d}));
  }
}

template <typename T>
AttnResult<T> multi_head_self_attention(const Tensor<T>& x, std::int64_t h, const Tensor<T>& Wq,
                                        const Tensor<T>& bq, const Tensor<T>& Wk,
                                        const Tensor<T>& bk, const Tensor<T>& Wv,
                                        const Tensor<T>& bv, const Tensor<T>& Wo,
                                        const Tensor<T>& bo, Tape<T>* tape = nullptr) {
  if (x.rank() != 3) throw ShapeError("multi_head_self_attention: expects [B, T, d] tokens");
  const std::int64_t B = x.dim(0), Tn = x.dim(1), d = x.dim(2);
  if (h < 1 || d % h != 0)
    throw ConfigError("multi_head_self_attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(h) + " heads");
  const std::int64_t dh = d / h;
  auto split_heads = [&](const Tensor<T>& t) {
    return permute(reshape(t, {B, Tn, h, dh}, tape), {0, 2, 1, 3}, tape);
  };
  auto q = split_heads(linear(x, Wq, bq, tape));
  auto k = split_heads(linear(x, Wk, bk, tape));
  auto v = split_heads(linear(x, Wv, bv, tape));
  auto scores =
      scale(matmul(q, permute(k, {0, 1, 3, 2}, tape), tape),
            static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))), tape);
  auto attn = softmax(scores, 3, tape);
  auto ctx = reshape(permute(matmul(attn, v, tape), {0, 2, 1, 3}, tape), {B, Tn, d}, tape);
  return {linear(ctx, Wo, bo, tape), attn};
}

template <typename T>
AttnResult<T> mhsa_forward(ParamStore<T>& ps, const std::string& p, const Tensor<T>& x,
                           std::int64_t h, Tape<T>* tape = nullptr) {
  return multi_head_self_attention(x, h, ps.at(p + ".wq"), ps.at(p + ".bq"), ps.at(p + ".wk"),
                                   ps.at(p + ".bk"), ps.at(p + ".wv"), ps.at(p + ".bv"),
                                   ps.at(p + ".wo"), ps.at(p + ".bo"), tape);
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

// He-style fan-in init for weights, zeros for biases, identity for norm
// scales; token/positional embeddings get Normal(0, 0.02). Consumption order
// is the store's insertion order, so the same seed reproduces bit-identical
// parameters for the same architecture.
template <typename T>
void init_params(ParamStore<T>& ps, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1a17));
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (auto& e : ps.entries()) {
    T* p = e.tensor.data();
    const std::int64_t n = e.tensor.numel();
    if (!e.trainable) {
      const T v = ends_with(e.name, ".var") ? T(1) : T(0);
      for (std::int64_t i = 0; i < n; ++i) p[i] = v;
      continue;
    }
    if (ends_with(e.name, ".gamma")) {
      for (std::int64_t i = 0; i < n; ++i) p[i] = T(1);
    } else if (ends_with(e.name, ".beta") || (ends_with(e.name, ".b") && e.tensor.rank() == 1) ||
               ends_with(e.name, ".bq") || ends_with(e.name, ".bk") ||
               ends_with(e.name, ".bv") || ends_with(e.name, ".bo")) {
      for (std::int64_t i = 0; i < n; ++i) p[i] = T(0);
    } else if (ends_with(e.name, ".cls") || ends_with(e.name, ".pos")) {
      for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.normal() * 0.02);
    } else if (e.tensor.rank() >= 2) {
      const std::int64_t fan_in =
          e.tensor.rank() == 2 ? e.tensor.dim(0) : e.tensor.numel() / e.tensor.dim(0);
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.normal() * std_dev);
    } else {
      throw ContractError("no initialization rule for parameter: " + e.name);
    }
  }
}

}  // namespace diamant
