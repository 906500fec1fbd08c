#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diamant/param_store.hpp"
#include "diamant/segnet.hpp"
#include "diamant/tensor.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// Evaluation metrics on hard label maps: per-class overlap (dice) and the
// 95th-percentile symmetric boundary distance, plus parameter/MAC accounting.
// ---------------------------------------------------------------------------

// 2|P∩G| / (|P|+|G|) for class c; two empty masks count as a perfect match.
template <typename L>
double dice_score(const Tensor<L>& pred, const Tensor<L>& gt, std::int64_t c) {
  if (pred.shape() != gt.shape()) throw ShapeError("dice_score: label maps differ in shape");
  std::int64_t p = 0, g = 0, both = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool inp = static_cast<std::int64_t>(pred.at(i)) == c;
    const bool ing = static_cast<std::int64_t>(gt.at(i)) == c;
    p += inp;
    g += ing;
    both += inp && ing;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

namespace detail {

constexpr double kBigDistance = 1e20;

// Boundary pixels: mask pixels with a four-neighbor outside the mask or on
// the image border.
inline std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(
    const std::vector<char>& mask, std::int64_t h, std::int64_t w) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (!mask[static_cast<std::size_t>(y * w + x)]) continue;
      const bool border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
      const bool exposed = border || !mask[static_cast<std::size_t>((y - 1) * w + x)] ||
                           !mask[static_cast<std::size_t>((y + 1) * w + x)] ||
                           !mask[static_cast<std::size_t>(y * w + x - 1)] ||
                           !mask[static_cast<std::size_t>(y * w + x + 1)];
      if (exposed) out.emplace_back(y, x);
    }
  return out;
}

// One-dimensional squared-distance transform (lower envelope of parabolas).
inline void squared_dt_1d(const double* f, double* d, std::int64_t n, std::int64_t* v,
                          double* z) {
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -kBigDistance;
  z[1] = kBigDistance;
  for (std::int64_t q = 1; q < n; ++q) {
    double s = ((f[q] + static_cast<double>(q * q)) -
                (f[v[k]] + static_cast<double>(v[k] * v[k]))) /
               (2.0 * static_cast<double>(q - v[k]));
    while (s <= z[k]) {
      --k;
      s = ((f[q] + static_cast<double>(q * q)) -
           (f[v[k]] + static_cast<double>(v[k] * v[k]))) /
          (2.0 * static_cast<double>(q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kBigDistance;
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Exact squared Euclidean distance to the given seed pixels, over the grid.
inline std::vector<double> squared_distance_field(
    const std::vector<std::pair<std::int64_t, std::int64_t>>& seeds, std::int64_t h,
    std::int64_t w) {
  std::vector<double> field(static_cast<std::size_t>(h * w), kBigDistance);
  for (const auto& [y, x] : seeds) field[static_cast<std::size_t>(y * w + x)] = 0.0;
  const std::int64_t n = std::max(h, w);
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n + 1));
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  for (std::int64_t x = 0; x < w; ++x) {  // along columns
    for (std::int64_t y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = field[static_cast<std::size_t>(y * w + x)];
    squared_dt_1d(f.data(), d.data(), h, v.data(), z.data());
    for (std::int64_t y = 0; y < h; ++y) field[static_cast<std::size_t>(y * w + x)] = d[static_cast<std::size_t>(y)];
  }
  for (std::int64_t y = 0; y < h; ++y) {  // along rows
    for (std::int64_t x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = field[static_cast<std::size_t>(y * w + x)];
    squared_dt_1d(f.data(), d.data(), w, v.data(), z.data());
    for (std::int64_t x = 0; x < w; ++x) field[static_cast<std::size_t>(y * w + x)] = d[static_cast<std::size_t>(x)];
  }
  return field;
}

// Percentile with linear interpolation between order statistics; data sorted.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 0) throw ContractError("percentile of an empty sample");
  if (n == 1) return sorted[0];
  const double r = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(r);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = r - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

// 95th percentile of the pooled two-directional boundary distances between
// two binary masks, scaled by the pixel spacing. Empty masks have no
// boundary, so the value is undefined and an empty optional is returned.
template <typename L>
std::optional<double> hd95(const Tensor<L>& pred_mask, const Tensor<L>& gt_mask,
                           double spacing = 1.0) {
  if (pred_mask.rank() != 2 || gt_mask.rank() != 2 || pred_mask.shape() != gt_mask.shape())
    throw ShapeError("hd95: masks must share one [H,W] shape");
  const std::int64_t h = pred_mask.dim(0), w = pred_mask.dim(1);
  std::vector<char> pm(static_cast<std::size_t>(h * w)), gm(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h * w; ++i) {
    pm[static_cast<std::size_t>(i)] = pred_mask.at(i) != L(0);
    gm[static_cast<std::size_t>(i)] = gt_mask.at(i) != L(0);
  }
  const auto pb = detail::boundary_pixels(pm, h, w);
  const auto gb = detail::boundary_pixels(gm, h, w);
  if (pb.empty() || gb.empty()) return std::nullopt;
  const auto dist_to_g = detail::squared_distance_field(gb, h, w);
  const auto dist_to_p = detail::squared_distance_field(pb, h, w);
  std::vector<double> pooled;
  pooled.reserve(pb.size() + gb.size());
  for (const auto& [y, x] : pb)
    pooled.push_back(std::sqrt(dist_to_g[static_cast<std::size_t>(y * w + x)]));
  for (const auto& [y, x] : gb)
    pooled.push_back(std::sqrt(dist_to_p[static_cast<std::size_t>(y * w + x)]));
  std::sort(pooled.begin(), pooled.end());
  return detail::percentile_sorted(pooled, 0.95) * spacing;
}

// ---------------------------------------------------------------------------
// Case/class evaluation report with CSV serialization.
// ---------------------------------------------------------------------------

struct CaseClassMetric {
  std::string case_id;
  std::int64_t cls = 0;
  double dice = 0.0;
  double hd = 0.0;          // after substitution when undefined
  bool hd_undefined = false;  // some mask was empty; hd holds the image diagonal
};

struct MetricsReport {
  double spacing = 1.0;
  std::vector<CaseClassMetric> rows;

  double mean_dice() const {
    if (rows.empty()) return 0.0;
    double s = 0;
    for (const auto& r : rows) s += r.dice;
    return s / static_cast<double>(rows.size());
  }

  double mean_hd() const {
    if (rows.empty()) return 0.0;
    double s = 0;
    for (const auto& r : rows) s += r.hd;
    return s / static_cast<double>(rows.size());
  }

  // Fixed-notation numbers so files are identical across platforms.
  static std::string fmt(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << v;
    return os.str();
  }

  std::string to_csv() const {
    std::string out = "case_id,class,dice,hd95,flags\n";
    for (const auto& r : rows) {
      out += r.case_id + "," + std::to_string(r.cls) + "," + fmt(r.dice) + "," + fmt(r.hd) +
             "," + (r.hd_undefined ? "hd95_undefined" : "") + "\n";
    }
    out += "mean,all," + fmt(mean_dice()) + "," + fmt(mean_hd()) + ",\n";
    return out;
  }
};

// Per-class metrics of one case for foreground classes 1..n_classes-1; an
// empty prediction or ground-truth mask makes hd95 undefined and the image
// diagonal is substituted, with the row flagged.
template <typename L>
std::vector<CaseClassMetric> evaluate_case(const std::string& case_id, const Tensor<L>& pred,
                                           const Tensor<L>& gt, std::int64_t n_classes,
                                           double spacing = 1.0) {
  if (pred.rank() != 2 || pred.shape() != gt.shape())
    throw ShapeError("evaluate_case: label maps must share one [H,W] shape");
  const double diag =
      std::sqrt(static_cast<double>(pred.dim(0) * pred.dim(0) + pred.dim(1) * pred.dim(1))) *
      spacing;
  std::vector<CaseClassMetric> out;
  for (std::int64_t c = 1; c < n_classes; ++c) {
    CaseClassMetric m;
    m.case_id = case_id;
    m.cls = c;
    m.dice = dice_score(pred, gt, c);
    auto pm = Tensor<L>::zeros(pred.shape());
    auto gm = Tensor<L>::zeros(gt.shape());
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      pm.data()[i] = static_cast<std::int64_t>(pred.at(i)) == c ? L(1) : L(0);
      gm.data()[i] = static_cast<std::int64_t>(gt.at(i)) == c ? L(1) : L(0);
    }
    const auto d = hd95(pm, gm, spacing);
    if (d.has_value()) {
      m.hd = *d;
    } else {
      m.hd = diag;
      m.hd_undefined = true;
    }
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

template <typename T>
std::int64_t count_params(const ParamStore<T>& ps) {
  return ps.total_params();
}

namespace detail {

inline std::int64_t conv_macs(std::int64_t out_elems, std::int64_t in_c, std::int64_t k) {
  return out_elems * in_c * k * k;
}

// A conv block is two 3x3 convs at one resolution.
inline std::int64_t conv_block_macs(std::int64_t b, std::int64_t hw, std::int64_t cin,
                                    std::int64_t cout) {
  return conv_macs(b * cout * hw, cin, 3) + conv_macs(b * cout * hw, cout, 3);
}

}  // namespace detail

// Multiply-accumulate count of one forward pass; convolutions and transposed
// convolutions only (normalization and activations excluded).
inline std::int64_t count_macs(const SegNetConfig& cfg, std::int64_t batch, std::int64_t h,
                               std::int64_t w) {
  cfg.validate();
  if (h % 16 != 0 || w % 16 != 0)
    throw ShapeError("count_macs: spatial dims must be divisible by 16");
  const bool dual = cfg.variant == SegNetConfig::Variant::Dual;
  std::int64_t total = 0;
  auto encoder = [&](std::int64_t in_c) {
    std::int64_t c = in_c;
    for (int l = 0; l < SegNetConfig::kLevels; ++l) {
      const std::int64_t hw = (h >> l) * (w >> l);
      total += detail::conv_block_macs(batch, hw, c, cfg.width(l));
      c = cfg.width(l);
    }
    const std::int64_t hw4 = (h >> 4) * (w >> 4);
    total += detail::conv_block_macs(batch, hw4, c, cfg.bottleneck_width());
  };
  if (dual) {
    encoder(cfg.in_channels);
    encoder(cfg.heads);
    const std::int64_t hw4 = (h >> 4) * (w >> 4);
    total += detail::conv_block_macs(batch, hw4, 2 * cfg.bottleneck_width(),
                                     cfg.bottleneck_width());
  } else {
    encoder(cfg.in_channels + cfg.heads);
  }
  std::int64_t c = cfg.bottleneck_width();
  for (int l = SegNetConfig::kLevels - 1; l >= 0; --l) {
    const std::int64_t wl = cfg.width(l);
    const std::int64_t hw_in = (h >> (l + 1)) * (w >> (l + 1));
    const std::int64_t hw_out = (h >> l) * (w >> l);
    total += detail::conv_macs(batch * c * hw_in, wl, 2);  // transposed conv: in_elems*out_c*k^2
    const std::int64_t cat = dual ? 3 * wl : 2 * wl;
    total += detail::conv_block_macs(batch, hw_out, cat, wl);
    c = wl;
  }
  total += detail::conv_macs(batch * cfg.classes * h * w, cfg.base_width, 1);
  return total;
}

}  // namespace diamant
