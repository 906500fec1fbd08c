#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "diamant/image_ops.hpp"
#include "diamant/layers.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// Encoder-decoder segmentation nets: a single-encoder U-Net over the image
// and auxiliary channels stacked together, and a dual-encoder variant with
// separate image / auxiliary-map encoders fused at the bottleneck, whose
// auxiliary skip connections are individually switchable.
// ---------------------------------------------------------------------------

struct SkipSwitches {
  // s1 gates the outermost (full-resolution) auxiliary skip, s4 the innermost.
  bool s1 = true, s2 = true, s3 = true, s4 = true;

  // level 0 = outermost decoder stage, level 3 = innermost.
  bool level(int l) const {
    switch (l) {
      case 0: return s1;
      case 1: return s2;
      case 2: return s3;
      case 3: return s4;
      default: throw ContractError("SkipSwitches: level must be 0..3");
    }
  }

  static SkipSwitches from_string(const std::string& s) {
    if (s.size() != 4 || s.find_first_not_of("01") != std::string::npos)
      throw ConfigError("switches: expected four characters of 0/1, got '" + s + "'");
    SkipSwitches sw;
    sw.s1 = s[0] == '1';
    sw.s2 = s[1] == '1';
    sw.s3 = s[2] == '1';
    sw.s4 = s[3] == '1';
    return sw;
  }

  std::string to_string() const {
    std::string s(4, '0');
    s[0] = s1 ? '1' : '0';
    s[1] = s2 ? '1' : '0';
    s[2] = s3 ? '1' : '0';
    s[3] = s4 ? '1' : '0';
    return s;
  }
};

struct SegNetConfig {
  enum class Variant { Single, Dual };

  Variant variant = Variant::Dual;
  std::int64_t in_channels = 1;   // image channels
  std::int64_t heads = 2;         // auxiliary-map channels
  std::int64_t classes = 2;
  std::int64_t base_width = 8;

  static constexpr int kLevels = 4;  // poolings; input must divide by 16

  std::int64_t width(int level) const { return base_width << level; }
  std::int64_t bottleneck_width() const { return base_width * 16; }

  void validate() const {
    if (in_channels < 1 || heads < 1) throw ConfigError("segnet: channel counts must be >= 1");
    if (classes < 2) throw ConfigError("segnet: needs at least 2 classes");
    if (base_width < 1) throw ConfigError("segnet: base_width must be >= 1");
  }
};

inline std::string variant_name(SegNetConfig::Variant v) {
  return v == SegNetConfig::Variant::Single ? "single" : "dual";
}

inline SegNetConfig::Variant variant_from_name(const std::string& s) {
  if (s == "single") return SegNetConfig::Variant::Single;
  if (s == "dual") return SegNetConfig::Variant::Dual;
  throw ConfigError("variant must be 'single' or 'dual', got '" + s + "'");
}

inline std::string segnet_arch_json(const SegNetConfig& cfg) {
  nlohmann::json j;
  j["kind"] = "segnet";
  j["variant"] = variant_name(cfg.variant);
  j["in_channels"] = cfg.in_channels;
  j["heads"] = cfg.heads;
  j["classes"] = cfg.classes;
  j["base_width"] = cfg.base_width;
  return j.dump();
}

inline SegNetConfig segnet_arch_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture record is not valid JSON: ") + e.what());
  }
  if (j.value("kind", "") != "segnet")
    throw FormatError("architecture record is not a segmentation net description");
  SegNetConfig cfg;
  cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  cfg.in_channels = j.at("in_channels").get<std::int64_t>();
  cfg.heads = j.at("heads").get<std::int64_t>();
  cfg.classes = j.at("classes").get<std::int64_t>();
  cfg.base_width = j.at("base_width").get<std::int64_t>();
  cfg.validate();
  return cfg;
}

namespace detail {

template <typename T>
void encoder_params(ParamStore<T>& ps, const std::string& p, std::int64_t in_c,
                    const SegNetConfig& cfg) {
  std::int64_t c = in_c;
  for (int l = 0; l < SegNetConfig::kLevels; ++l) {
    conv_block_params(ps, p + ".l" + std::to_string(l), c, cfg.width(l));
    c = cfg.width(l);
  }
  conv_block_params(ps, p + ".bott", c, cfg.bottleneck_width());
}

}  // namespace detail

// Registers every parameter of the configured network. Channel counts do not
// depend on the switch settings, so the parameter count is switch-invariant.
template <typename T>
ParamStore<T> build_network(const SegNetConfig& cfg) {
  cfg.validate();
  ParamStore<T> ps;
  const bool dual = cfg.variant == SegNetConfig::Variant::Dual;
  if (dual) {
    detail::encoder_params(ps, "ex", cfg.in_channels, cfg);
    detail::encoder_params(ps, "ev", cfg.heads, cfg);
    conv_block_params(ps, "fuse", 2 * cfg.bottleneck_width(), cfg.bottleneck_width());
  } else {
    detail::encoder_params(ps, "ex", cfg.in_channels + cfg.heads, cfg);
  }
  std::int64_t c = cfg.bottleneck_width();
  for (int l = SegNetConfig::kLevels - 1; l >= 0; --l) {
    const std::string dp = "dec.l" + std::to_string(l);
    const std::int64_t w = cfg.width(l);
    ps.add(dp + ".up.w", Tensor<T>::zeros({c, w, 2, 2}));
    ps.add(dp + ".up.b", Tensor<T>::zeros({w}));
    const std::int64_t cat = dual ? 3 * w : 2 * w;
    conv_block_params(ps, dp + ".cb", cat, w);
    c = w;
  }
  ps.add("head.w", Tensor<T>::zeros({cfg.classes, cfg.base_width, 1, 1}));
  ps.add("head.b", Tensor<T>::zeros({cfg.classes}));
  return ps;
}

template <typename T>
struct EncoderResult {
  Tensor<T> bottleneck;
  std::array<Tensor<T>, SegNetConfig::kLevels> skips;  // [0] = outermost (full res)
};

template <typename T>
EncoderResult<T> encoder_forward(ParamStore<T>& ps, const std::string& p, const Tensor<T>& x,
                                 Mode mode, Tape<T>* tape = nullptr) {
  if (x.rank() != 4) throw ShapeError("encoder_forward: expects NCHW input");
  if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0)
    throw ShapeError("encoder_forward: spatial dims must be divisible by 16, got " +
                     shape_str(x.shape()));
  EncoderResult<T> res;
  Tensor<T> z = x;
  for (int l = 0; l < SegNetConfig::kLevels; ++l) {
    z = conv_block_forward(ps, p + ".l" + std::to_string(l), z, mode, tape);
    res.skips[static_cast<std::size_t>(l)] = z;
    z = maxpool2d(z, 2, 2, tape);
  }
  res.bottleneck = conv_block_forward(ps, p + ".bott", z, mode, tape);
  return res;
}

// Decoder over four upsampling stages. Image skips are always concatenated;
// in the dual variant the auxiliary skip at level l takes part only when its
// switch is on, and an all-zero tensor of the same shape stands in otherwise,
// keeping channel counts (and parameters) independent of the switches.
template <typename T>
Tensor<T> decoder_forward(ParamStore<T>& ps, const SegNetConfig& cfg, const Tensor<T>& bottleneck,
                          const std::array<Tensor<T>, SegNetConfig::kLevels>& img_skips,
                          const std::array<Tensor<T>, SegNetConfig::kLevels>* attn_skips,
                          const SkipSwitches& switches, Mode mode, Tape<T>* tape = nullptr) {
  const bool dual = cfg.variant == SegNetConfig::Variant::Dual;
  if (dual && !attn_skips)
    throw ContractError("decoder_forward: dual variant needs auxiliary skips");
  Tensor<T> z = bottleneck;
  for (int l = SegNetConfig::kLevels - 1; l >= 0; --l) {
    const std::string dp = "dec.l" + std::to_string(l);
    z = conv_transpose2d(z, ps.at(dp + ".up.w"), ps.at(dp + ".up.b"), 2, 0, tape);
    const auto& img = img_skips[static_cast<std::size_t>(l)];
    if (img.shape() != z.shape())
      throw ShapeError("decoder_forward: level " + std::to_string(l) + " skip shape " +
                       shape_str(img.shape()) + " does not match upsampled " +
                       shape_str(z.shape()));
    std::vector<Tensor<T>> parts{z, img};
    if (dual) {
      const auto& attn = (*attn_skips)[static_cast<std::size_t>(l)];
      parts.push_back(switches.level(l) ? attn : Tensor<T>::zeros(attn.shape()));
    }
    z = concat(parts, 1, tape);
    z = conv_block_forward(ps, dp + ".cb", z, mode, tape);
  }
  return conv2d(z, ps.at("head.w"), ps.at("head.b"), 1, 0, tape);
}

// Full forward pass: image x [B,C,H,W] and auxiliary stack nu [B,h,H,W] to
// per-pixel class logits [B,N,H,W]. The single variant concatenates x and nu
// channel-wise and ignores the switches.
template <typename T>
Tensor<T> model_forward(ParamStore<T>& ps, const SegNetConfig& cfg, const Tensor<T>& x,
                        const Tensor<T>& nu, const SkipSwitches& switches, Mode mode,
                        Tape<T>* tape = nullptr) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
    throw ShapeError("model_forward: image must be [B," + std::to_string(cfg.in_channels) +
                     ",H,W], got " + shape_str(x.shape()));
  if (nu.rank() != 4 || nu.dim(1) != cfg.heads)
    throw ShapeError("model_forward: auxiliary stack must be [B," + std::to_string(cfg.heads) +
                     ",H,W], got " + shape_str(nu.shape()));
  if (nu.dim(0) != x.dim(0) || nu.dim(2) != x.dim(2) || nu.dim(3) != x.dim(3))
    throw ShapeError("model_forward: image " + shape_str(x.shape()) + " and auxiliary " +
                     shape_str(nu.shape()) + " disagree");
  if (cfg.variant == SegNetConfig::Variant::Single) {
    auto both = concat<T>({x, nu}, 1, tape);
    auto enc = encoder_forward(ps, "ex", both, mode, tape);
    return decoder_forward<T>(ps, cfg, enc.bottleneck, enc.skips, nullptr, switches, mode, tape);
  }
  auto ex = encoder_forward(ps, "ex", x, mode, tape);
  auto ev = encoder_forward(ps, "ev", nu, mode, tape);
  auto fused = concat<T>({ex.bottleneck, ev.bottleneck}, 1, tape);
  fused = conv_block_forward(ps, "fuse", fused, mode, tape);
  return decoder_forward<T>(ps, cfg, fused, ex.skips, &ev.skips, switches, mode, tape);
}

}  // namespace diamant
