#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "diamant/config.hpp"
#include "diamant/pipeline.hpp"

namespace {

using diamant::ConfigError;
using diamant::KeyValues;

// Knobs for the self-distillation command, mirroring TrainConfig's
// `key = value` handling: file first, flags override, unknown keys rejected.
struct DinoCliConfig {
  diamant::ViTConfig vit;
  diamant::DistillConfig distill;
  diamant::DinoRunOptions run;

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys{
        "steps",      "batch_size",  "lr",           "seed",        "image_size",
        "patch",      "width",       "depth",        "heads",       "channels",
        "proj_dim",   "tau_student", "tau_teacher",  "lambda_start", "lambda_end"};
    return keys;
  }

  void apply(const KeyValues& kv) {
    namespace d = diamant::detail;
    for (const auto& [key, value] : kv) {
      if (key == "steps") run.steps = d::to_i64(key, value);
      else if (key == "batch_size") run.batch_size = d::to_i64(key, value);
      else if (key == "lr") run.lr = d::to_f64(key, value);
      else if (key == "seed") run.seed = static_cast<std::uint64_t>(d::to_i64(key, value));
      else if (key == "image_size") vit.image_size = d::to_i64(key, value);
      else if (key == "patch") vit.patch = d::to_i64(key, value);
      else if (key == "width") vit.width = d::to_i64(key, value);
      else if (key == "depth") vit.depth = d::to_i64(key, value);
      else if (key == "heads") vit.heads = d::to_i64(key, value);
      else if (key == "channels") vit.channels = d::to_i64(key, value);
      else if (key == "proj_dim") distill.proj_dim = d::to_i64(key, value);
      else if (key == "tau_student") distill.tau_student = d::to_f64(key, value);
      else if (key == "tau_teacher") distill.tau_teacher = d::to_f64(key, value);
      else if (key == "lambda_start") distill.lambda_start = d::to_f64(key, value);
      else if (key == "lambda_end") distill.lambda_end = d::to_f64(key, value);
      else {
        std::string valid;
        for (const auto& k : known_keys()) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
      }
    }
    if (run.steps < 1) throw ConfigError("steps must be >= 1");
    if (run.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(run.lr > 0)) throw ConfigError("lr must be > 0");
    distill.total_steps = run.steps;
    vit.validate();
    distill.validate();
  }
};

void require_flag(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

KeyValues file_config(const std::string& path) {
  return path.empty() ? KeyValues{} : diamant::load_config_file(path);
}

// Raw-string flag overrides reuse the config parser so typing, validation,
// and error wording stay identical between file keys and flags.
struct Overrides {
  KeyValues kv;
  void set(const std::string& key, const std::string& value) {
    if (!value.empty()) kv[key] = value;
  }
};

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw diamant::IoError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual image--attention-map segmentation workbench"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shape-segmentation dataset");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  std::int64_t gen_n = 250, gen_size = 64, gen_classes = 4;
  double gen_train_frac = 0.7, gen_val_frac = 0.1;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--size", gen_size, "image side length");
  gen->add_option("--classes", gen_classes, "class count incl. background");
  gen->add_option("--train-frac", gen_train_frac, "train split fraction");
  gen->add_option("--val-frac", gen_val_frac, "val split fraction");

  // extract-attn
  auto* ext = app.add_subcommand("extract-attn", "Write per-head attention maps from a checkpoint");
  std::string ext_manifest, ext_ckpt, ext_out = "attn";
  ext->add_option("--manifest", ext_manifest, "dataset manifest");
  ext->add_option("--checkpoint", ext_ckpt, "transformer checkpoint (.dmck)");
  ext->add_option("--out", ext_out, "map subdirectory relative to the manifest");

  // gen-oracle-attn
  auto* ora = app.add_subcommand("gen-oracle-attn", "Write label-derived auxiliary maps");
  std::string ora_manifest, ora_out = "attn";
  std::int64_t ora_heads = 1;
  double ora_sigma = 0.0;
  std::uint64_t ora_seed = 0;
  ora->add_option("--manifest", ora_manifest, "dataset manifest");
  ora->add_option("--heads", ora_heads, "map channels per image");
  ora->add_option("--sigma", ora_sigma, "noise level");
  ora->add_option("--seed", ora_seed, "noise seed");
  ora->add_option("--out", ora_out, "map subdirectory relative to the manifest");

  // dino-train
  auto* dino = app.add_subcommand("dino-train", "Self-distill a transformer on the train split");
  std::string dino_manifest, dino_out, dino_config;
  std::string d_steps, d_batch, d_lr, d_seed, d_imgsz, d_patch, d_width, d_depth, d_heads,
      d_channels, d_proj, d_taus, d_taut, d_lstart, d_lend;
  dino->add_option("--manifest", dino_manifest, "dataset manifest");
  dino->add_option("--out", dino_out, "checkpoint directory");
  dino->add_option("--config", dino_config, "`key = value` config file");
  dino->add_option("--steps", d_steps, "optimization steps");
  dino->add_option("--batch-size", d_batch, "view pairs per step");
  dino->add_option("--lr", d_lr, "learning rate");
  dino->add_option("--seed", d_seed, "master seed");
  dino->add_option("--image-size", d_imgsz, "transformer input side");
  dino->add_option("--patch", d_patch, "patch side");
  dino->add_option("--width", d_width, "embedding width");
  dino->add_option("--depth", d_depth, "transformer blocks");
  dino->add_option("--heads", d_heads, "attention heads");
  dino->add_option("--channels", d_channels, "image channels");
  dino->add_option("--proj-dim", d_proj, "projection output dimension");
  dino->add_option("--tau-student", d_taus, "student temperature");
  dino->add_option("--tau-teacher", d_taut, "teacher temperature");
  dino->add_option("--lambda-start", d_lstart, "EMA coefficient at step 0");
  dino->add_option("--lambda-end", d_lend, "EMA coefficient at the last step");

  // seg-train
  auto* tr = app.add_subcommand("seg-train", "Train a segmentation network");
  std::string tr_manifest, tr_out, tr_config;
  std::string t_lr0, t_wd, t_batch, t_epochs, t_power, t_patience, t_seed, t_eval, t_variant,
      t_switches, t_imgsz, t_base;
  tr->add_option("--manifest", tr_manifest, "dataset manifest");
  tr->add_option("--out", tr_out, "run directory (checkpoint + log)");
  tr->add_option("--config", tr_config, "`key = value` config file");
  tr->add_option("--lr0", t_lr0, "initial learning rate");
  tr->add_option("--weight-decay", t_wd, "coupled L2 strength");
  tr->add_option("--batch-size", t_batch, "images per step");
  tr->add_option("--max-epochs", t_epochs, "epoch budget");
  tr->add_option("--lr-power", t_power, "polynomial decay power");
  tr->add_option("--early-stop-patience", t_patience, "evaluations without improvement");
  tr->add_option("--seed", t_seed, "master seed");
  tr->add_option("--eval-every", t_eval, "epochs between validations");
  tr->add_option("--variant", t_variant, "single | dual");
  tr->add_option("--switches", t_switches, "four 0/1 digits, outermost first");
  tr->add_option("--image-size", t_imgsz, "input side length");
  tr->add_option("--base-width", t_base, "channels at the first level");

  // seg-eval
  auto* ev = app.add_subcommand("seg-eval", "Evaluate a checkpoint on one split");
  std::string ev_manifest, ev_ckpt, ev_split = "test", ev_out;
  ev->add_option("--manifest", ev_manifest, "dataset manifest");
  ev->add_option("--checkpoint", ev_ckpt, "network checkpoint (.dmck)");
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--out", ev_out, "metrics CSV path (stdout when omitted)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate the five reference configurations");
  std::string ab_manifest, ab_out, ab_config;
  ab->add_option("--manifest", ab_manifest, "dataset manifest");
  ab->add_option("--out", ab_out, "output directory (runs + ablation.csv)");
  ab->add_option("--config", ab_config, "`key = value` base config file");

  // count
  auto* cnt = app.add_subcommand("count", "Print the parameter/MAC table for one network");
  std::string cnt_ckpt, cnt_variant = "dual";
  std::int64_t cnt_in = 1, cnt_heads = 2, cnt_classes = 2, cnt_base = 8;
  std::int64_t cnt_batch = 1, cnt_imgsz = 64;
  cnt->add_option("--checkpoint", cnt_ckpt, "network checkpoint (overrides config flags)");
  cnt->add_option("--variant", cnt_variant, "single | dual");
  cnt->add_option("--in-channels", cnt_in, "image channels");
  cnt->add_option("--heads", cnt_heads, "auxiliary-map channels");
  cnt->add_option("--classes", cnt_classes, "output classes");
  cnt->add_option("--base-width", cnt_base, "channels at the first level");
  cnt->add_option("--batch", cnt_batch, "batch size for the MAC column");
  cnt->add_option("--image-size", cnt_imgsz, "input side for the MAC column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // flag/usage problems are config errors
  }

  try {
    if (gen->parsed()) {
      require_flag(gen_out, "--out");
      const auto m = diamant::gen_synthetic_dataset(gen_seed, gen_n, gen_size, gen_classes,
                                                    gen_out, gen_train_frac, gen_val_frac);
      std::cout << "wrote " << m.records.size() << " records (" << m.split("train").size()
                << " train / " << m.split("val").size() << " val / " << m.split("test").size()
                << " test) to " << gen_out << "/manifest.json\n";
    } else if (ext->parsed()) {
      require_flag(ext_manifest, "--manifest");
      require_flag(ext_ckpt, "--checkpoint");
      diamant::pipeline::extract_attention_from_checkpoint(ext_manifest, ext_ckpt, ext_out);
      std::cout << "extracted attention maps into '" << ext_out << "' and updated "
                << ext_manifest << "\n";
    } else if (ora->parsed()) {
      require_flag(ora_manifest, "--manifest");
      diamant::pipeline::gen_oracle_attention_files(ora_manifest, ora_heads, ora_sigma, ora_seed,
                                                    ora_out);
      std::cout << "wrote oracle maps (" << ora_heads << " heads, sigma " << ora_sigma
                << ") into '" << ora_out << "' and updated " << ora_manifest << "\n";
    } else if (dino->parsed()) {
      require_flag(dino_manifest, "--manifest");
      require_flag(dino_out, "--out");
      DinoCliConfig cfg;
      cfg.apply(file_config(dino_config));
      Overrides ov;
      ov.set("steps", d_steps);
      ov.set("batch_size", d_batch);
      ov.set("lr", d_lr);
      ov.set("seed", d_seed);
      ov.set("image_size", d_imgsz);
      ov.set("patch", d_patch);
      ov.set("width", d_width);
      ov.set("depth", d_depth);
      ov.set("heads", d_heads);
      ov.set("channels", d_channels);
      ov.set("proj_dim", d_proj);
      ov.set("tau_student", d_taus);
      ov.set("tau_teacher", d_taut);
      ov.set("lambda_start", d_lstart);
      ov.set("lambda_end", d_lend);
      cfg.apply(ov.kv);
      const auto out = diamant::pipeline::dino_train_files(dino_manifest, cfg.vit, cfg.distill,
                                                           cfg.run, dino_out);
      std::cout << "distilled for " << out.losses.size() << " steps (loss "
                << out.losses.front() << " -> " << out.losses.back() << ")\n"
                << "student:  " << out.student_path << "\n"
                << "teacher:  " << out.teacher_path << "\n"
                << "head:     " << out.head_path << "\n";
    } else if (tr->parsed()) {
      require_flag(tr_manifest, "--manifest");
      require_flag(tr_out, "--out");
      diamant::TrainConfig cfg;
      cfg.apply(file_config(tr_config));
      Overrides ov;
      ov.set("lr0", t_lr0);
      ov.set("weight_decay", t_wd);
      ov.set("batch_size", t_batch);
      ov.set("max_epochs", t_epochs);
      ov.set("lr_power", t_power);
      ov.set("early_stop_patience", t_patience);
      ov.set("seed", t_seed);
      ov.set("eval_every", t_eval);
      ov.set("variant", t_variant);
      ov.set("switches", t_switches);
      ov.set("image_size", t_imgsz);
      ov.set("base_width", t_base);
      cfg.apply(ov.kv);
      const auto out = diamant::pipeline::seg_train(tr_manifest, cfg, tr_out);
      std::cout << "trained " << out.epochs_run << " epochs, best val dice "
                << out.best_val_dice << "\n"
                << "checkpoint: " << out.checkpoint_path << "\n"
                << "log:        " << out.log_path << "\n";
    } else if (ev->parsed()) {
      require_flag(ev_manifest, "--manifest");
      require_flag(ev_ckpt, "--checkpoint");
      const auto report = diamant::pipeline::seg_eval(ev_manifest, ev_split, ev_ckpt);
      if (ev_out.empty()) {
        std::cout << report.to_csv();
      } else {
        write_text_file(ev_out, report.to_csv());
        std::cout << "wrote " << report.rows.size() << " rows to " << ev_out << "\n";
      }
    } else if (ab->parsed()) {
      require_flag(ab_manifest, "--manifest");
      require_flag(ab_out, "--out");
      diamant::TrainConfig base;
      base.apply(file_config(ab_config));
      const auto csv = diamant::pipeline::ablation_run(ab_manifest, base, ab_out);
      std::cout << csv << "table: " << ab_out << "/ablation.csv\n";
    } else if (cnt->parsed()) {
      if (!cnt_ckpt.empty()) {
        std::cout << diamant::pipeline::count_report_checkpoint(cnt_ckpt, cnt_batch, cnt_imgsz);
      } else {
        diamant::SegNetConfig cfg;
        cfg.variant = diamant::variant_from_name(cnt_variant);
        cfg.in_channels = cnt_in;
        cfg.heads = cnt_heads;
        cfg.classes = cnt_classes;
        cfg.base_width = cnt_base;
        std::cout << diamant::pipeline::count_report(cfg, cnt_batch, cnt_imgsz);
      }
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
