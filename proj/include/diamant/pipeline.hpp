#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diamant/config.hpp"
#include "diamant/data.hpp"
#include "diamant/dino.hpp"
#include "diamant/metrics.hpp"
#include "diamant/segnet.hpp"
#include "diamant/vit.hpp"

namespace diamant::pipeline {

// ---------------------------------------------------------------------------
// Concrete single-precision commands behind the CLI: each one reads/writes
// files named in a manifest and is deterministic given its seed inputs.
// ---------------------------------------------------------------------------

// Writes one auxiliary-map stack per record (derived from the transformer's
// final-block class-token attention) and links it in the manifest.
void extract_attention(const std::string& manifest_path, ParamStore<float>& vit_params,
                       const ViTConfig& cfg, const std::string& subdir = "attn");

// Same, loading weights and architecture from a checkpoint file.
void extract_attention_from_checkpoint(const std::string& manifest_path,
                                       const std::string& checkpoint_path,
                                       const std::string& subdir = "attn");

// Label-derived auxiliary maps (controllable stand-in for learned ones).
void gen_oracle_attention_files(const std::string& manifest_path, std::int64_t heads,
                                double sigma, std::uint64_t seed,
                                const std::string& subdir = "attn");

// Self-distillation over the manifest's train images; saves three
// checkpoints (student backbone, teacher backbone, projection head) and
// returns the per-step losses.
struct DinoOutputs {
  std::string student_path, teacher_path, head_path;
  std::vector<double> losses;
};
DinoOutputs dino_train_files(const std::string& manifest_path, const ViTConfig& vit_cfg,
                             const DistillConfig& dcfg, const DinoRunOptions& opt,
                             const std::string& out_dir);

// Supervised segmentation training. The evaluator hook exists so tests can
// stub the validation metric; null means the real mean validation dice.
struct TrainOutputs {
  std::string checkpoint_path;
  std::string log_path;
  double best_val_dice = 0.0;
  std::int64_t epochs_run = 0;
};
using ValEvaluator = std::function<double(ParamStore<float>&, const SegNetConfig&,
                                          std::int64_t /*epoch*/)>;
TrainOutputs seg_train(const std::string& manifest_path, const TrainConfig& cfg,
                       const std::string& out_dir, const ValEvaluator* evaluator = nullptr);

// Per-case, per-class dice and hd95 for one split of the manifest.
MetricsReport seg_eval(const std::string& manifest_path, const std::string& split,
                       const std::string& checkpoint_path);

// Trains and evaluates the five reference configurations; returns the CSV.
std::string ablation_run(const std::string& manifest_path, const TrainConfig& base,
                         const std::string& out_dir);

// Parameter/MAC table for a network configuration.
std::string count_report(const SegNetConfig& cfg, std::int64_t batch, std::int64_t image_size);
std::string count_report_checkpoint(const std::string& checkpoint_path, std::int64_t batch,
                                    std::int64_t image_size);

}  // namespace diamant::pipeline
