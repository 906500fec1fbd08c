#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "diamant/layers.hpp"
#include "diamant/image_ops.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// Transformer encoder over image patches with per-layer attention capture,
// plus the conversion of final-layer class-token attention rows into
// normalized spatial maps usable as auxiliary input channels.
// ---------------------------------------------------------------------------

struct ViTConfig {
  std::int64_t image_size = 32;
  std::int64_t patch = 8;
  std::int64_t width = 64;
  std::int64_t depth = 2;
  std::int64_t heads = 2;
  std::int64_t channels = 1;

  std::int64_t grid_side() const { return image_size / patch; }
  std::int64_t patch_count() const { return grid_side() * grid_side(); }
  std::int64_t token_count() const { return patch_count() + 1; }  // + class token

  void validate() const {
    if (image_size < 1 || patch < 1 || width < 1 || depth < 1 || heads < 1 || channels < 1)
      throw ConfigError("vit: all dimensions must be >= 1");
    if (image_size % patch != 0)
      throw ConfigError("vit: image_size " + std::to_string(image_size) +
                        " not divisible by patch " + std::to_string(patch));
    if (width % heads != 0)
      throw ConfigError("vit: width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(heads));
  }
};

inline std::string vit_arch_json(const ViTConfig& cfg) {
  nlohmann::json j;
  j["kind"] = "vit";
  j["image_size"] = cfg.image_size;
  j["patch"] = cfg.patch;
  j["width"] = cfg.width;
  j["depth"] = cfg.depth;
  j["heads"] = cfg.heads;
  j["channels"] = cfg.channels;
  return j.dump();
}

inline ViTConfig vit_arch_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture record is not valid JSON: ") + e.what());
  }
  if (j.value("kind", "") != "vit")
    throw FormatError("architecture record is not a transformer encoder description");
  ViTConfig cfg;
  cfg.image_size = j.at("image_size").get<std::int64_t>();
  cfg.patch = j.at("patch").get<std::int64_t>();
  cfg.width = j.at("width").get<std::int64_t>();
  cfg.depth = j.at("depth").get<std::int64_t>();
  cfg.heads = j.at("heads").get<std::int64_t>();
  cfg.channels = j.at("channels").get<std::int64_t>();
  cfg.validate();
  return cfg;
}

// Small default used throughout the tests.
inline ViTConfig vit_toy_config() { return ViTConfig{}; }

// ViT-S/16 shape, used for parameter accounting.
inline ViTConfig vit_small16_config() {
  ViTConfig cfg;
  cfg.image_size = 224;
  cfg.patch = 16;
  cfg.width = 384;
  cfg.depth = 12;
  cfg.heads = 6;
  cfg.channels = 1;
  return cfg;
}

template <typename T>
void build_vit(ParamStore<T>& ps, const std::string& p, const ViTConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.width;
  patch_embed_params(ps, p + ".patch", cfg.channels, cfg.patch, d);
  ps.add(p + ".cls", Tensor<T>::zeros({1, 1, d}));
  ps.add(p + ".pos", Tensor<T>::zeros({1, cfg.token_count(), d}));
  for (std::int64_t b = 0; b < cfg.depth; ++b) {
    const std::string blk = p + ".blk" + std::to_string(b);
    ps.add(blk + ".ln1.gamma", Tensor<T>::full({d}, T(1)));
    ps.add(blk + ".ln1.beta", Tensor<T>::zeros({d}));
    mhsa_params(ps, blk + ".attn", d);
    ps.add(blk + ".ln2.gamma", Tensor<T>::full({d}, T(1)));
    ps.add(blk + ".ln2.beta", Tensor<T>::zeros({d}));
    ps.add(blk + ".mlp.fc1.w", Tensor<T>::zeros({d, 4 * d}));
    ps.add(blk + ".mlp.fc1.b", Tensor<T>::zeros({4 * d}));
    ps.add(blk + ".mlp.fc2.w", Tensor<T>::zeros({4 * d, d}));
    ps.add(blk + ".mlp.fc2.b", Tensor<T>::zeros({d}));
  }
  ps.add(p + ".ln.gamma", Tensor<T>::full({d}, T(1)));
  ps.add(p + ".ln.beta", Tensor<T>::zeros({d}));
}

template <typename T>
struct ViTResult {
  Tensor<T> cls;                 // [B, d] final class-token embedding
  std::vector<Tensor<T>> attn;   // per block, [B, h, T, T]
};

// Patchify -> prepend class token -> add positional embeddings -> pre-norm
// transformer blocks -> final layer norm. Attention weights of every block
// are returned alongside the class embedding.
template <typename T>
ViTResult<T> vit_forward(ParamStore<T>& ps, const std::string& p, const Tensor<T>& images,
                         const ViTConfig& cfg, Tape<T>* tape = nullptr) {
  cfg.validate();
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size)
    throw ShapeError("vit_forward: expected [B," + std::to_string(cfg.channels) + "," +
                     std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                     "], got " + shape_str(images.shape()));
  const std::int64_t B = images.dim(0), d = cfg.width, tokens = cfg.token_count();

  auto x = patch_embed(images, cfg.patch, ps.at(p + ".patch.w"), ps.at(p + ".patch.b"), tape);
  auto cls = broadcast_to(ps.at(p + ".cls"), {B, 1, d}, tape);
  x = concat<T>({cls, x}, 1, tape);
  x = add(x, ps.at(p + ".pos"), tape);

  ViTResult<T> res;
  res.attn.reserve(static_cast<std::size_t>(cfg.depth));
  for (std::int64_t b = 0; b < cfg.depth; ++b) {
    const std::string blk = p + ".blk" + std::to_string(b);
    auto h1 = layernorm(x, ps.at(blk + ".ln1.gamma"), ps.at(blk + ".ln1.beta"), T(1e-5), tape);
    auto att = mhsa_forward(ps, blk + ".attn", h1, cfg.heads, tape);
    x = add(x, att.out, tape);
    auto h2 = layernorm(x, ps.at(blk + ".ln2.gamma"), ps.at(blk + ".ln2.beta"), T(1e-5), tape);
    auto m = linear(h2, ps.at(blk + ".mlp.fc1.w"), ps.at(blk + ".mlp.fc1.b"), tape);
    m = gelu(m, tape);
    m = linear(m, ps.at(blk + ".mlp.fc2.w"), ps.at(blk + ".mlp.fc2.b"), tape);
    x = add(x, m, tape);
    res.attn.push_back(att.attn);
  }
  x = layernorm(x, ps.at(p + ".ln.gamma"), ps.at(p + ".ln.beta"), T(1e-5), tape);
  res.cls = reshape(slice(x, 1, 0, 1, tape), {B, d}, tape);
  (void)tokens;
  return res;
}

// From one block's attention weights [B,h,T,T], keep each head's class-query
// row over the patch keys and lay it out on the patch grid.
template <typename T>
Tensor<T> extract_attention_maps(const Tensor<T>& attn, std::int64_t grid_side,
                                 Tape<T>* tape = nullptr) {
  if (attn.rank() != 4 || attn.dim(2) != attn.dim(3))
    throw ShapeError("extract_attention_maps: expects [B,h,T,T] attention");
  const std::int64_t g = grid_side, T_ = attn.dim(2);
  if (T_ != g * g + 1)
    throw ShapeError("extract_attention_maps: token count " + std::to_string(T_) +
                     " != grid " + std::to_string(g) + "^2 + 1");
  auto row = slice(attn, 2, 0, 1, tape);       // [B,h,1,T]
  auto patches = slice(row, 3, 1, g * g, tape);  // [B,h,1,g*g]
  return reshape(patches, {attn.dim(0), attn.dim(1), g, g}, tape);
}

// Resize raw grid maps to image resolution, then min-max normalize each map
// (per image, per head) into [0,1]; maps with no spread become all zeros.
template <typename T>
Tensor<T> postprocess_maps(const Tensor<T>& raw, std::int64_t out_h, std::int64_t out_w) {
  if (raw.rank() != 4) throw ShapeError("postprocess_maps: expects [B,h,g,g]");
  auto up = resize_bilinear(raw, out_h, out_w);
  const std::int64_t planes = up.dim(0) * up.dim(1), hw = out_h * out_w;
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    T* v = up.data() + pl * hw;
    T lo = v[0], hi = v[0];
    for (std::int64_t i = 1; i < hw; ++i) {
      lo = std::min(lo, v[i]);
      hi = std::max(hi, v[i]);
    }
    const T span = hi - lo;
    if (span > T(0))
      for (std::int64_t i = 0; i < hw; ++i) v[i] = (v[i] - lo) / span;
    else
      for (std::int64_t i = 0; i < hw; ++i) v[i] = T(0);
  }
  return up;
}

}  // namespace diamant
