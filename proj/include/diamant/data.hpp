#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diamant/io.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// Dataset manifests, a deterministic synthetic shape dataset, stand-in
// auxiliary maps derived from the labels, and shared-transform augmentation.
// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::string id;
  std::string case_id;
  std::string image;  // paths relative to the manifest's directory
  std::string label;
  std::string attn;   // empty when not yet generated
  std::string split;  // train | val | test
  double spacing = 1.0;
};

struct Manifest {
  std::string dir;  // directory the relative paths resolve against
  std::vector<ManifestRecord> records;

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(dir) / rel).string();
  }

  std::vector<const ManifestRecord*> split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }
};

inline void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json rec;
    rec["id"] = r.id;
    rec["case_id"] = r.case_id;
    rec["image"] = r.image;
    rec["label"] = r.label;
    if (!r.attn.empty()) rec["attn"] = r.attn;
    rec["split"] = r.split;
    rec["spacing"] = r.spacing;
    j["records"].push_back(rec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path + " is not valid JSON: " + e.what());
  }
  Manifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";
  if (!j.contains("records") || !j["records"].is_array())
    throw FormatError("manifest " + path + " lacks a records array");
  std::vector<std::string> ids;
  for (const auto& rec : j["records"]) {
    ManifestRecord r;
    r.id = rec.at("id").get<std::string>();
    r.case_id = rec.value("case_id", r.id);
    r.image = rec.at("image").get<std::string>();
    r.label = rec.at("label").get<std::string>();
    r.attn = rec.value("attn", "");
    r.split = rec.at("split").get<std::string>();
    r.spacing = rec.value("spacing", 1.0);
    if (r.split != "train" && r.split != "val" && r.split != "test")
      throw FormatError("manifest record " + r.id + " has unknown split '" + r.split + "'");
    ids.push_back(r.id);
    m.records.push_back(std::move(r));
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw FormatError("manifest " + path + " has duplicate record ids");
  for (const auto& r : m.records) {
    for (const std::string& rel : {r.image, r.label, r.attn}) {
      if (rel.empty()) continue;
      if (!std::filesystem::exists(m.resolve(rel)))
        throw IoError("manifest references missing file " + m.resolve(rel));
    }
  }
  return m;
}

// One loaded dataset item; attn is defined only when the manifest links one.
struct Sample {
  Tensor<float> image;          // [C,H,W]
  Tensor<std::uint8_t> label;   // [H,W]
  Tensor<float> attn;           // [h,H,W] when defined
};

inline Sample load_sample(const Manifest& m, const ManifestRecord& r, bool need_attn) {
  Sample s;
  s.image = read_tensor<float>(m.resolve(r.image));
  s.label = read_tensor<std::uint8_t>(m.resolve(r.label));
  if (need_attn) {
    if (r.attn.empty())
      throw ConfigError("record " + r.id + " has no auxiliary-map file; generate them first");
    s.attn = read_tensor<float>(m.resolve(r.attn));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic dataset: each image holds 1..N-1 non-overlapping shapes (disk,
// rectangle, ring) of distinct foreground classes, rendered as a
// class-specific intensity over a noisy background.
// ---------------------------------------------------------------------------

namespace detail {

struct ShapeRaster {
  std::vector<std::int64_t> pixels;  // flat y*W+x
};

inline ShapeRaster raster_shape(Rng& rng, std::int64_t hw) {
  const int kind = static_cast<int>(rng.uniform_index(3));
  const double lo = static_cast<double>(hw) / 12.0, hi = static_cast<double>(hw) / 6.0;
  ShapeRaster out;
  auto push_if = [&](std::int64_t y, std::int64_t x, bool in) {
    if (in && y >= 0 && y < hw && x >= 0 && x < hw) out.pixels.push_back(y * hw + x);
  };
  const double cy = rng.uniform(hi, static_cast<double>(hw) - hi);
  const double cx = rng.uniform(hi, static_cast<double>(hw) - hi);
  if (kind == 0) {  // disk
    const double r = rng.uniform(lo, hi);
    for (std::int64_t y = 0; y < hw; ++y)
      for (std::int64_t x = 0; x < hw; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        push_if(y, x, dy * dy + dx * dx <= r * r);
      }
  } else if (kind == 1) {  // axis-aligned rectangle
    const double ay = rng.uniform(lo, hi), ax = rng.uniform(lo, hi);
    for (std::int64_t y = 0; y < hw; ++y)
      for (std::int64_t x = 0; x < hw; ++x)
        push_if(y, x,
                std::abs(static_cast<double>(y) - cy) <= ay &&
                    std::abs(static_cast<double>(x) - cx) <= ax);
  } else {  // ring
    const double r_out = rng.uniform(lo * 1.4, hi);
    const double r_in = r_out * rng.uniform(0.4, 0.7);
    for (std::int64_t y = 0; y < hw; ++y)
      for (std::int64_t x = 0; x < hw; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double d2 = dy * dy + dx * dx;
        push_if(y, x, d2 <= r_out * r_out && d2 >= r_in * r_in);
      }
  }
  return out;
}

// Tries to draw one full image; fails (returns false) when a shape cannot be
// placed without overlap after 100 tries.
inline bool try_gen_image(Rng& rng, std::int64_t hw, std::int64_t n_classes,
                          Tensor<float>& image, Tensor<std::uint8_t>& label) {
  image = Tensor<float>::zeros({1, hw, hw});
  label = Tensor<std::uint8_t>::zeros({hw, hw});
  const std::int64_t k = 1 + static_cast<std::int64_t>(
                                 rng.uniform_index(static_cast<std::uint64_t>(n_classes - 1)));
  std::vector<std::int64_t> classes;
  for (std::int64_t c = 1; c < n_classes; ++c) classes.push_back(c);
  rng.shuffle(classes);
  classes.resize(static_cast<std::size_t>(k));
  for (const std::int64_t c : classes) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const auto shape = raster_shape(rng, hw);
      if (shape.pixels.empty()) continue;
      bool overlaps = false;
      for (const auto px : shape.pixels)
        if (label.at(px) != 0) {
          overlaps = true;
          break;
        }
      if (overlaps) continue;
      const float intensity =
          0.3f + 0.7f * static_cast<float>(c) / static_cast<float>(n_classes - 1);
      for (const auto px : shape.pixels) {
        label.data()[px] = static_cast<std::uint8_t>(c);
        image.data()[px] = intensity;
      }
      placed = true;
    }
    if (!placed) return false;
  }
  for (std::int64_t i = 0; i < hw * hw; ++i)
    image.data()[i] += 0.1f * static_cast<float>(rng.normal());
  return true;
}

}  // namespace detail

// Deterministic given (seed, n, hw, n_classes); the split is assigned by
// index: the first train_frac*n ids train, the next val_frac*n validate, and
// the remainder test.
inline Manifest gen_synthetic_dataset(std::uint64_t seed, std::int64_t n, std::int64_t hw,
                                      std::int64_t n_classes, const std::string& out_dir,
                                      double train_frac = 0.7, double val_frac = 0.1) {
  if (n_classes < 2) throw ConfigError("gen_synthetic_dataset: need >= 2 classes");
  if (n < 1 || hw < 16) throw ConfigError("gen_synthetic_dataset: need n >= 1 and size >= 16");
  if (train_frac <= 0 || val_frac <= 0 || train_frac + val_frac >= 1.0)
    throw ConfigError("gen_synthetic_dataset: fractions must be positive and sum below 1");
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "labels");
  const auto n_train = static_cast<std::int64_t>(static_cast<double>(n) * train_frac + 0.5);
  const auto n_val = static_cast<std::int64_t>(static_cast<double>(n) * val_frac + 0.5);

  Manifest m;
  m.dir = out_dir;
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor<float> image;
    Tensor<std::uint8_t> label;
    std::uint64_t attempt = 0;
    for (;;) {
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)), attempt));
      if (detail::try_gen_image(rng, hw, n_classes, image, label)) break;
      ++attempt;  // rejected layout: redraw the whole image from a derived seed
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05lld", static_cast<long long>(i));
    ManifestRecord r;
    r.id = std::string("img_") + buf;
    r.case_id = r.id;
    r.image = std::string("images/") + r.id + ".dtns";
    r.label = std::string("labels/lab_") + buf + ".dtns";
    r.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    r.spacing = 1.0;
    write_tensor(m.resolve(r.image), image);
    write_tensor(m.resolve(r.label), label);
    m.records.push_back(std::move(r));
  }
  save_manifest(m, (std::filesystem::path(out_dir) / "manifest.json").string());
  return m;
}

// ---------------------------------------------------------------------------
// Auxiliary maps derived from the label map: channel i is the indicator of
// foreground class (i mod (N-1)) + 1, box-blurred 3x3 twice, noised, and
// min-max normalized. A controllable stand-in for learned maps.
// ---------------------------------------------------------------------------

namespace detail {

inline void box_blur_3x3(std::vector<float>& plane, std::int64_t h, std::int64_t w) {
  std::vector<float> out(plane.size(), 0.0f);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      float s = 0.0f;
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w)
            s += plane[static_cast<std::size_t>(yy * w + xx)];
        }
      out[static_cast<std::size_t>(y * w + x)] = s / 9.0f;
    }
  plane.swap(out);
}

}  // namespace detail

inline Tensor<float> gen_oracle_attention(const Tensor<std::uint8_t>& label,
                                          std::int64_t n_classes, std::int64_t heads,
                                          double sigma, std::uint64_t seed) {
  if (label.rank() != 2) throw ShapeError("gen_oracle_attention: expects [H,W] labels");
  if (heads < 1) throw ConfigError("gen_oracle_attention: heads must be >= 1");
  if (n_classes < 2) throw ConfigError("gen_oracle_attention: need >= 2 classes");
  const std::int64_t h = label.dim(0), w = label.dim(1);
  auto out = Tensor<float>::zeros({heads, h, w});
  Rng rng(mix_seed(seed, 0xA77E));
  for (std::int64_t i = 0; i < heads; ++i) {
    const std::int64_t cls = (i % (n_classes - 1)) + 1;
    std::vector<float> plane(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < h * w; ++p)
      plane[static_cast<std::size_t>(p)] =
          static_cast<std::int64_t>(label.at(p)) == cls ? 1.0f : 0.0f;
    detail::box_blur_3x3(plane, h, w);
    detail::box_blur_3x3(plane, h, w);
    for (auto& v : plane) v += static_cast<float>(sigma * rng.normal());
    float lo = plane[0], hi = plane[0];
    for (const auto v : plane) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    float* dst = out.data() + i * h * w;
    if (hi > lo)
      for (std::int64_t p = 0; p < h * w; ++p)
        dst[p] = (plane[static_cast<std::size_t>(p)] - lo) / (hi - lo);
    // constant channels stay all zero
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation: one transform (flips + quarter-turn rotation) drawn per
// sample and applied identically to image, label, and auxiliary stack.
// ---------------------------------------------------------------------------

namespace detail {

// Destination index of source pixel (y,x) under flips then k quarter turns
// counter-clockwise, for square planes of side s.
inline std::int64_t transformed_index(std::int64_t y, std::int64_t x, std::int64_t s, bool hflip,
                                      bool vflip, int quarter_turns) {
  if (hflip) x = s - 1 - x;
  if (vflip) y = s - 1 - y;
  for (int t = 0; t < quarter_turns; ++t) {
    const std::int64_t ny = s - 1 - x;
    x = y;
    y = ny;
  }
  return y * s + x;
}

template <typename T>
Tensor<T> transform_planes(const Tensor<T>& t, std::int64_t planes, std::int64_t s, bool hflip,
                           bool vflip, int quarter_turns) {
  auto out = Tensor<T>::zeros(t.shape());
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = t.data() + p * s * s;
    T* dst = out.data() + p * s * s;
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x)
        dst[transformed_index(y, x, s, hflip, vflip, quarter_turns)] = src[y * s + x];
  }
  return out;
}

}  // namespace detail

inline Sample augment(const Sample& in, std::uint64_t seed) {
  if (in.image.rank() != 3 || in.label.rank() != 2)
    throw ShapeError("augment: expects image [C,H,W] and label [H,W]");
  const std::int64_t s = in.image.dim(1);
  if (in.image.dim(2) != s || in.label.dim(0) != s || in.label.dim(1) != s)
    throw ShapeError("augment: planes must be square and aligned");
  if (in.attn.defined() && (in.attn.rank() != 3 || in.attn.dim(1) != s || in.attn.dim(2) != s))
    throw ShapeError("augment: auxiliary stack misaligned with image");
  Rng rng(seed);
  const bool hflip = rng.bernoulli(0.5);
  const bool vflip = rng.bernoulli(0.5);
  const int quarter_turns = static_cast<int>(rng.uniform_index(4));
  Sample out;
  out.image = detail::transform_planes(in.image, in.image.dim(0), s, hflip, vflip, quarter_turns);
  out.label = detail::transform_planes(in.label, 1, s, hflip, vflip, quarter_turns);
  if (in.attn.defined())
    out.attn = detail::transform_planes(in.attn, in.attn.dim(0), s, hflip, vflip, quarter_turns);
  return out;
}

}  // namespace diamant
