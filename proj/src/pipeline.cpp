#include "diamant/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "diamant/io.hpp"
#include "diamant/losses.hpp"
#include "diamant/optim.hpp"

namespace diamant::pipeline {

namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

// Entries whose names start with the given prefix, names kept intact.
ParamStore<float> filter_by_prefix(const ParamStore<float>& ps, const std::string& prefix) {
  ParamStore<float> out;
  for (const auto& e : ps.entries())
    if (e.name.rfind(prefix, 0) == 0) out.add(e.name, e.tensor.clone(), e.trainable);
  return out;
}

Tensor<float> image_as_batch(const Tensor<float>& img) {
  Shape s = img.shape();
  s.insert(s.begin(), 1);
  return img.clone().reshaped(s);
}

std::int64_t dataset_classes(const Manifest& m) {
  std::int64_t max_label = 0;
  for (const auto& r : m.records) {
    const auto lab = read_tensor<std::uint8_t>(m.resolve(r.label));
    for (std::int64_t i = 0; i < lab.numel(); ++i)
      max_label = std::max<std::int64_t>(max_label, lab.at(i));
  }
  if (max_label < 1) throw ContractError("dataset has no foreground labels");
  return max_label + 1;
}

}  // namespace

void extract_attention(const std::string& manifest_path, ParamStore<float>& vit_params,
                       const ViTConfig& cfg, const std::string& subdir) {
  cfg.validate();
  auto m = load_manifest(manifest_path);
  fs::create_directories(fs::path(m.dir) / subdir);
  for (auto& r : m.records) {
    auto img = read_tensor<float>(m.resolve(r.image));
    if (img.rank() != 3 || img.dim(0) != cfg.channels)
      throw ShapeError("record " + r.id + ": image shape " + shape_str(img.shape()) +
                       " does not provide " + std::to_string(cfg.channels) + " channels");
    const std::int64_t H = img.dim(1), W = img.dim(2);
    auto batch = image_as_batch(img);
    if (H != cfg.image_size || W != cfg.image_size)
      batch = resize_bilinear(batch, cfg.image_size, cfg.image_size);
    auto res = vit_forward(vit_params, "vit", batch, cfg);
    auto raw = extract_attention_maps(res.attn.back(), cfg.grid_side());
    auto maps = postprocess_maps(raw, H, W);  // [1,h,H,W]
    auto stack = maps.reshaped({cfg.heads, H, W});
    r.attn = subdir + "/" + r.id + ".dtns";
    write_tensor(m.resolve(r.attn), stack);
  }
  save_manifest(m, manifest_path);
}

void extract_attention_from_checkpoint(const std::string& manifest_path,
                                       const std::string& checkpoint_path,
                                       const std::string& subdir) {
  const auto cfg = vit_arch_from_json(read_checkpoint_arch(checkpoint_path));
  ParamStore<float> ps;
  build_vit(ps, "vit", cfg);
  load_checkpoint(checkpoint_path, ps);
  extract_attention(manifest_path, ps, cfg, subdir);
}

void gen_oracle_attention_files(const std::string& manifest_path, std::int64_t heads,
                                double sigma, std::uint64_t seed, const std::string& subdir) {
  auto m = load_manifest(manifest_path);
  const auto n_classes = dataset_classes(m);
  fs::create_directories(fs::path(m.dir) / subdir);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    auto& r = m.records[i];
    const auto label = read_tensor<std::uint8_t>(m.resolve(r.label));
    const auto stack = gen_oracle_attention(label, n_classes, heads, sigma,
                                            mix_seed(seed, static_cast<std::uint64_t>(i)));
    r.attn = subdir + "/" + r.id + ".dtns";
    write_tensor(m.resolve(r.attn), stack);
  }
  save_manifest(m, manifest_path);
}

DinoOutputs dino_train_files(const std::string& manifest_path, const ViTConfig& vit_cfg,
                             const DistillConfig& dcfg, const DinoRunOptions& opt,
                             const std::string& out_dir) {
  auto m = load_manifest(manifest_path);
  std::vector<Tensor<float>> images;
  for (const auto* r : m.split("train"))
    images.push_back(read_tensor<float>(m.resolve(r->image)));
  if (images.empty()) throw ConfigError("manifest has no train records");
  auto run = dino_train(images, vit_cfg, dcfg, opt);
  fs::create_directories(out_dir);
  DinoOutputs out;
  out.student_path = (fs::path(out_dir) / "dino_student.dmck").string();
  out.teacher_path = (fs::path(out_dir) / "dino_teacher.dmck").string();
  out.head_path = (fs::path(out_dir) / "dino_head.dmck").string();
  const auto arch = vit_arch_json(vit_cfg);
  auto student_vit = filter_by_prefix(run.student, "vit.");
  auto teacher_vit = filter_by_prefix(run.teacher, "vit.");
  auto head = filter_by_prefix(run.student, "head.");
  save_checkpoint(out.student_path, student_vit, arch);
  save_checkpoint(out.teacher_path, teacher_vit, arch);
  save_checkpoint(out.head_path, head, "");
  out.losses = std::move(run.losses);
  return out;
}

namespace {

// Mean over foreground classes and validation records of the per-class dice
// between the argmax prediction and the label map.
double validation_dice(ParamStore<float>& ps, const SegNetConfig& cfg, const SkipSwitches& sw,
                       const Manifest& m, const std::vector<const ManifestRecord*>& records) {
  double total = 0;
  std::int64_t count = 0;
  for (const auto* r : records) {
    auto s = load_sample(m, *r, true);
    const std::int64_t H = s.label.dim(0), W = s.label.dim(1);
    auto x = image_as_batch(s.image);
    auto nu = image_as_batch(s.attn);
    auto logits = model_forward(ps, cfg, x, nu, sw, Mode::Eval);
    auto pred = Tensor<std::uint8_t>::zeros({H, W});
    for (std::int64_t i = 0; i < H * W; ++i) {
      std::int64_t best = 0;
      float best_v = logits.at(i);
      for (std::int64_t c = 1; c < cfg.classes; ++c) {
        const float v = logits.at(c * H * W + i);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      pred.data()[i] = static_cast<std::uint8_t>(best);
    }
    for (std::int64_t c = 1; c < cfg.classes; ++c) {
      total += dice_score(pred, s.label, c);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace

TrainOutputs seg_train(const std::string& manifest_path, const TrainConfig& cfg,
                       const std::string& out_dir, const ValEvaluator* evaluator) {
  cfg.validate();
  auto m = load_manifest(manifest_path);
  const auto train_recs = m.split("train");
  const auto val_recs = m.split("val");
  if (train_recs.empty() || val_recs.empty())
    throw ConfigError("manifest needs non-empty train and val splits");
  for (const auto* r : train_recs)
    if (r->attn.empty())
      throw ConfigError("record " + r->id + " lacks an auxiliary-map file; run extraction first");
  for (const auto* r : val_recs)
    if (r->attn.empty())
      throw ConfigError("record " + r->id + " lacks an auxiliary-map file; run extraction first");

  const auto first = load_sample(m, *train_recs[0], true);
  SegNetConfig net;
  net.variant = cfg.variant;
  net.in_channels = first.image.dim(0);
  net.heads = first.attn.dim(0);
  net.classes = dataset_classes(m);
  net.base_width = cfg.base_width;
  net.validate();
  if (first.image.dim(1) != cfg.image_size || first.image.dim(2) != cfg.image_size)
    throw ConfigError("config image_size " + std::to_string(cfg.image_size) +
                      " does not match dataset images " + shape_str(first.image.shape()));

  auto ps = build_network<float>(net);
  init_params(ps, cfg.seed);
  Adam<float> opt;

  const std::int64_t iters_per_epoch =
      static_cast<std::int64_t>(train_recs.size()) / cfg.batch_size;
  if (iters_per_epoch < 1)
    throw ConfigError("batch_size exceeds the number of training records");
  const std::int64_t max_iters = cfg.max_epochs * iters_per_epoch;

  fs::create_directories(out_dir);
  TrainOutputs out;
  out.checkpoint_path = (fs::path(out_dir) / "best.dmck").string();
  out.log_path = (fs::path(out_dir) / "train_log.csv").string();

  std::string log = "epoch,train_loss,val_dice,lr\n";
  double best = -1.0;
  std::int64_t evals_since_best = 0;
  std::int64_t global_iter = 0;
  const std::int64_t C = net.in_channels, h = net.heads, S = cfg.image_size;

  for (std::int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_recs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x0E0C, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::int64_t batches = 0;
    for (std::int64_t b = 0; b + cfg.batch_size <= static_cast<std::int64_t>(order.size());
         b += cfg.batch_size) {
      auto x = Tensor<float>::zeros({cfg.batch_size, C, S, S});
      auto nu = Tensor<float>::zeros({cfg.batch_size, h, S, S});
      auto labels = Tensor<std::uint8_t>::zeros({cfg.batch_size, S, S});
      for (std::int64_t k = 0; k < cfg.batch_size; ++k) {
        const auto idx = order[static_cast<std::size_t>(b + k)];
        auto s = load_sample(m, *train_recs[idx], true);
        const auto aug_seed = mix_seed(mix_seed(cfg.seed, 0xA06, static_cast<std::uint64_t>(epoch)),
                                       static_cast<std::uint64_t>(idx));
        s = augment(s, aug_seed);
        std::memcpy(x.data() + k * C * S * S, s.image.data(),
                    static_cast<std::size_t>(C * S * S) * sizeof(float));
        std::memcpy(nu.data() + k * h * S * S, s.attn.data(),
                    static_cast<std::size_t>(h * S * S) * sizeof(float));
        std::memcpy(labels.data() + k * S * S, s.label.data(),
                    static_cast<std::size_t>(S * S) * sizeof(std::uint8_t));
      }
      auto y = one_hot<float>(labels, net.classes);
      Tape<float> tape;
      auto logits = model_forward(ps, net, x, nu, cfg.switches, Mode::Train, &tape);
      auto loss = combined_loss(logits, y, 1.0f, &tape);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw TrainingError("seg_train: non-finite loss at epoch " + std::to_string(epoch) +
                            " iter " + std::to_string(global_iter));
      tape.backward(loss);
      const double lr = poly_lr(global_iter, max_iters, cfg.lr0, cfg.lr_power);
      opt.step(ps, tape, static_cast<float>(lr), static_cast<float>(cfg.weight_decay));
      ++global_iter;
      loss_sum += lv;
      ++batches;
    }
    out.epochs_run = epoch + 1;
    const double train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;

    if ((epoch + 1) % cfg.eval_every != 0 && epoch + 1 != cfg.max_epochs) {
      log += std::to_string(epoch) + "," + MetricsReport::fmt(train_loss) + ",," +
             MetricsReport::fmt(poly_lr(std::min(global_iter, max_iters), max_iters, cfg.lr0,
                                        cfg.lr_power)) +
             "\n";
      continue;
    }
    const double val_dice =
        evaluator ? (*evaluator)(ps, net, epoch)
                  : validation_dice(ps, net, cfg.switches, m, val_recs);
    log += std::to_string(epoch) + "," + MetricsReport::fmt(train_loss) + "," +
           MetricsReport::fmt(val_dice) + "," +
           MetricsReport::fmt(poly_lr(std::min(global_iter, max_iters), max_iters, cfg.lr0,
                                      cfg.lr_power)) +
           "\n";
    if (val_dice > best) {
      best = val_dice;
      evals_since_best = 0;
      save_checkpoint(out.checkpoint_path, ps, segnet_arch_json(net));
    } else {
      ++evals_since_best;
    }
    if (evals_since_best >= cfg.early_stop_patience) break;
  }
  out.best_val_dice = best;
  write_text(out.log_path, log);
  return out;
}

MetricsReport seg_eval(const std::string& manifest_path, const std::string& split,
                       const std::string& checkpoint_path) {
  auto m = load_manifest(manifest_path);
  const auto recs = m.split(split);
  if (recs.empty()) throw ConfigError("manifest has no records in split '" + split + "'");
  const auto net = segnet_arch_from_json(read_checkpoint_arch(checkpoint_path));
  auto ps = build_network<float>(net);
  load_checkpoint(checkpoint_path, ps);
  SkipSwitches sw;  // gates are a training-time wiring choice; evaluation uses all-on

  MetricsReport report;
  // group into cases, preserving first-appearance order
  std::vector<std::string> case_order;
  std::map<std::string, std::vector<const ManifestRecord*>> cases;
  for (const auto* r : recs) {
    if (!cases.count(r->case_id)) case_order.push_back(r->case_id);
    cases[r->case_id].push_back(r);
  }
  for (const auto& case_id : case_order) {
    const auto& slices = cases[case_id];
    report.spacing = slices[0]->spacing;
    // per class accumulation across the case's slices
    std::vector<double> inter(static_cast<std::size_t>(net.classes), 0.0);
    std::vector<double> psum(static_cast<std::size_t>(net.classes), 0.0);
    std::vector<double> gsum(static_cast<std::size_t>(net.classes), 0.0);
    std::vector<std::vector<double>> pooled(static_cast<std::size_t>(net.classes));
    std::vector<bool> any_defined(static_cast<std::size_t>(net.classes), false);
    double diag = 0;
    for (const auto* r : slices) {
      auto s = load_sample(m, *r, true);
      const std::int64_t H = s.label.dim(0), W = s.label.dim(1);
      if (s.image.dim(1) != H || s.image.dim(2) != W)
        throw ConfigError("record " + r->id + ": image and label sizes disagree");
      diag = std::sqrt(static_cast<double>(H * H + W * W)) * r->spacing;
      auto logits = model_forward(ps, net, image_as_batch(s.image), image_as_batch(s.attn), sw,
                                  Mode::Eval);
      auto pred = Tensor<std::uint8_t>::zeros({H, W});
      for (std::int64_t i = 0; i < H * W; ++i) {
        std::int64_t bestc = 0;
        float best_v = logits.at(i);
        for (std::int64_t c = 1; c < net.classes; ++c) {
          const float v = logits.at(c * H * W + i);
          if (v > best_v) {
            best_v = v;
            bestc = c;
          }
        }
        pred.data()[i] = static_cast<std::uint8_t>(bestc);
      }
      for (std::int64_t c = 1; c < net.classes; ++c) {
        auto pm = Tensor<std::uint8_t>::zeros({H, W});
        auto gm = Tensor<std::uint8_t>::zeros({H, W});
        std::int64_t pc = 0, gc = 0, bc = 0;
        for (std::int64_t i = 0; i < H * W; ++i) {
          const bool inp = pred.at(i) == c;
          const bool ing = s.label.at(i) == c;
          pm.data()[i] = inp;
          gm.data()[i] = ing;
          pc += inp;
          gc += ing;
          bc += inp && ing;
        }
        inter[static_cast<std::size_t>(c)] += static_cast<double>(bc);
        psum[static_cast<std::size_t>(c)] += static_cast<double>(pc);
        gsum[static_cast<std::size_t>(c)] += static_cast<double>(gc);
        // pool this slice's two-directional boundary distances when defined
        std::vector<char> pmv(pm.data(), pm.data() + H * W), gmv(gm.data(), gm.data() + H * W);
        const auto pbnd = detail::boundary_pixels(pmv, H, W);
        const auto gbnd = detail::boundary_pixels(gmv, H, W);
        if (!pbnd.empty() && !gbnd.empty()) {
          const auto dg = detail::squared_distance_field(gbnd, H, W);
          const auto dp = detail::squared_distance_field(pbnd, H, W);
          auto& bucket = pooled[static_cast<std::size_t>(c)];
          for (const auto& [y, xx] : pbnd)
            bucket.push_back(std::sqrt(dg[static_cast<std::size_t>(y * W + xx)]) * r->spacing);
          for (const auto& [y, xx] : gbnd)
            bucket.push_back(std::sqrt(dp[static_cast<std::size_t>(y * W + xx)]) * r->spacing);
          any_defined[static_cast<std::size_t>(c)] = true;
        }
      }
    }
    for (std::int64_t c = 1; c < net.classes; ++c) {
      CaseClassMetric row;
      row.case_id = case_id;
      row.cls = c;
      const double denom = psum[static_cast<std::size_t>(c)] + gsum[static_cast<std::size_t>(c)];
      row.dice = denom == 0.0 ? 1.0 : 2.0 * inter[static_cast<std::size_t>(c)] / denom;
      if (any_defined[static_cast<std::size_t>(c)]) {
        auto& bucket = pooled[static_cast<std::size_t>(c)];
        std::sort(bucket.begin(), bucket.end());
        row.hd = detail::percentile_sorted(bucket, 0.95);
      } else {
        row.hd = diag;
        row.hd_undefined = true;
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string ablation_run(const std::string& manifest_path, const TrainConfig& base,
                         const std::string& out_dir) {
  struct Entry {
    const char* name;
    SegNetConfig::Variant variant;
    const char* switches;
  };
  const Entry entries[] = {
      {"single", SegNetConfig::Variant::Single, "1111"},
      {"dual_0000", SegNetConfig::Variant::Dual, "0000"},
      {"dual_0001", SegNetConfig::Variant::Dual, "0001"},
      {"dual_0111", SegNetConfig::Variant::Dual, "0111"},
      {"dual_1111", SegNetConfig::Variant::Dual, "1111"},
  };
  std::string csv;
  bool wrote_header = false;
  for (const auto& e : entries) {
    TrainConfig cfg = base;
    cfg.variant = e.variant;
    cfg.switches = SkipSwitches::from_string(e.switches);
    const auto dir = (fs::path(out_dir) / e.name).string();
    const auto trained = seg_train(manifest_path, cfg, dir);
    const auto report = seg_eval(manifest_path, "test", trained.checkpoint_path);
    // collapse to per-class means across cases
    std::map<std::int64_t, std::pair<double, std::int64_t>> per_class;
    for (const auto& row : report.rows) {
      per_class[row.cls].first += row.dice;
      per_class[row.cls].second += 1;
    }
    if (!wrote_header) {
      csv = "config,switches,seed";
      for (const auto& [cls, agg] : per_class) csv += ",dice_class_" + std::to_string(cls);
      csv += ",mean_dice\n";
      wrote_header = true;
    }
    csv += std::string(e.name) + "," + e.switches + "," + std::to_string(base.seed);
    for (const auto& [cls, agg] : per_class)
      csv += "," + MetricsReport::fmt(agg.first / static_cast<double>(agg.second));
    csv += "," + MetricsReport::fmt(report.mean_dice()) + "\n";
  }
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "ablation.csv").string(), csv);
  return csv;
}

std::string count_report(const SegNetConfig& cfg, std::int64_t batch, std::int64_t image_size) {
  cfg.validate();
  auto ps = build_network<float>(cfg);
  std::ostringstream os;
  os << "model,params,macs\n";
  os << variant_name(cfg.variant) << "_w" << cfg.base_width << "," << count_params(ps) << ","
     << count_macs(cfg, batch, image_size, image_size) << "\n";
  return os.str();
}

std::string count_report_checkpoint(const std::string& checkpoint_path, std::int64_t batch,
                                    std::int64_t image_size) {
  const auto arch = read_checkpoint_arch(checkpoint_path);
  const auto cfg = segnet_arch_from_json(arch);
  return count_report(cfg, batch, image_size);
}

}  // namespace diamant::pipeline
