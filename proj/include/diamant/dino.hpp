#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "diamant/optim.hpp"
#include "diamant/vit.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// Self-distillation: a student network matches a temperature-sharpened
// teacher over two augmented views; the teacher tracks the student by
// exponential moving average on a cosine schedule.
// ---------------------------------------------------------------------------

struct DistillConfig {
  double tau_student = 0.1;
  double tau_teacher = 0.04;
  std::int64_t proj_dim = 16;     // projection output dimension
  double lambda_start = 0.996;    // EMA bounds
  double lambda_end = 1.0;
  std::int64_t total_steps = 200;

  void validate() const {
    if (!(tau_teacher > 0) || !(tau_student > 0) || tau_teacher > tau_student)
      throw ConfigError("distill: need 0 < tau_teacher <= tau_student");
    if (proj_dim < 2) throw ConfigError("distill: proj_dim must be >= 2");
    if (!(lambda_start > 0) || lambda_start > lambda_end || lambda_end > 1.0)
      throw ConfigError("distill: need 0 < lambda_start <= lambda_end <= 1");
    if (total_steps < 1) throw ConfigError("distill: total_steps must be >= 1");
  }
};

template <typename T>
struct ViewPair {
  Tensor<T> x1, x2;  // two augmented crops of one source image
};

// Temperature-sharpened distribution: softmax(logits / tau) along the last axis.
template <typename T>
Tensor<T> sharpen(const Tensor<T>& logits, T tau, Tape<T>* tape = nullptr) {
  if (!(tau > T(0))) throw ConfigError("sharpen: tau must be > 0");
  return softmax(scale(logits, T(1) / tau, tape), static_cast<int>(logits.rank()) - 1, tape);
}

namespace detail {

template <typename T>
void check_rows_stochastic(const Tensor<T>& p, const char* who) {
  const std::int64_t k = p.dim(static_cast<int>(p.rank()) - 1);
  const std::int64_t rows = p.numel() / k;
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::int64_t j = 0; j < k; ++j) s += static_cast<double>(p.at(r * k + j));
    if (std::abs(s - 1.0) > 1e-4)
      throw ContractError(std::string(who) + ": row " + std::to_string(r) +
                          " is not a probability distribution (sum " + std::to_string(s) + ")");
  }
}

// mean over the batch of the cross-entropy -sum_j target * log(pred).
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& target, const Tensor<T>& pred, Tape<T>* tape) {
  auto lp = diamant::log(pred, tape, T(1e-12));
  auto s = sum_all(mul(target, lp, tape), tape);
  return scale(s, -T(1) / static_cast<T>(target.dim(0)), tape);
}

}  // namespace detail

// Symmetric two-view distillation loss. Teacher distributions are treated as
// constants; gradients reach only the student-side inputs.
template <typename T>
Tensor<T> dino_loss(const Tensor<T>& student_x1, const Tensor<T>& student_x2,
                    const Tensor<T>& teacher_x1, const Tensor<T>& teacher_x2,
                    Tape<T>* tape = nullptr) {
  for (const Tensor<T>* p : {&student_x1, &student_x2, &teacher_x1, &teacher_x2})
    if (p->rank() != 2 || p->shape() != student_x1.shape())
      throw ShapeError("dino_loss: all four distributions must share one [B,K] shape");
  detail::check_rows_stochastic(student_x1, "dino_loss(student x1)");
  detail::check_rows_stochastic(student_x2, "dino_loss(student x2)");
  detail::check_rows_stochastic(teacher_x1, "dino_loss(teacher x1)");
  detail::check_rows_stochastic(teacher_x2, "dino_loss(teacher x2)");
  auto a = detail::cross_entropy_rows(teacher_x1, student_x2, tape);
  auto b = detail::cross_entropy_rows(teacher_x2, student_x1, tape);
  return scale(add(a, b, tape), T(0.5), tape);
}

// teacher <- lambda * teacher + (1 - lambda) * student, entry by entry.
template <typename T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ContractError("ema_update: lambda outside [0,1]");
  if (teacher.size() != student.size())
    throw ContractError("ema_update: stores hold different entry counts");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto& te = teacher.entries()[i];
    const auto& se = student.entries()[i];
    if (te.name != se.name || te.tensor.shape() != se.tensor.shape())
      throw ContractError("ema_update: mismatch at entry " + te.name + " vs " + se.name);
    T* t = te.tensor.data();
    const T* s = se.tensor.data();
    for (std::int64_t j = 0; j < te.tensor.numel(); ++j)
      t[j] = static_cast<T>(lambda * static_cast<double>(t[j]) +
                            (1.0 - lambda) * static_cast<double>(s[j]));
  }
}

// Cosine ramp of the EMA coefficient from lambda_start (step 0) to
// lambda_end (step == total); steps beyond total clamp to the end value.
inline double cosine_lambda(std::int64_t step, std::int64_t total, double lambda_start,
                            double lambda_end) {
  if (total < 1) throw ConfigError("cosine_lambda: total must be >= 1");
  if (step < 0) throw ContractError("cosine_lambda: negative step");
  if (step > total) step = total;
  const double c = (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total))) / 2.0;
  return lambda_end - (lambda_end - lambda_start) * c;
}

// Two random square crops (50-100% of the source area) resized to out_size
// with nearest-neighbor sampling, each independently mirrored with p=1/2.
template <typename T>
ViewPair<T> make_views(const Tensor<T>& image, std::int64_t out_size, std::uint64_t seed) {
  if (image.rank() != 3) throw ShapeError("make_views: expects [C,H,W]");
  const std::int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H < out_size || W < out_size)
    throw ShapeError("make_views: image smaller than requested view size");
  Rng rng(seed);
  auto one_view = [&]() {
    const double area = rng.uniform(0.5, 1.0);
    const double frac = std::sqrt(area);
    const std::int64_t ch = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::lround(frac * H)));
    const std::int64_t cw = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::lround(frac * W)));
    const std::int64_t top = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(H - ch + 1)));
    const std::int64_t left = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(W - cw + 1)));
    const bool flip = rng.bernoulli(0.5);
    auto out = Tensor<T>::zeros({C, out_size, out_size});
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < out_size; ++y) {
        std::int64_t sy = top + std::min(ch - 1, (y * ch) / out_size);
        for (std::int64_t x = 0; x < out_size; ++x) {
          const std::int64_t xe = flip ? out_size - 1 - x : x;
          std::int64_t sx = left + std::min(cw - 1, (xe * cw) / out_size);
          out.data()[(c * out_size + y) * out_size + x] = image.at((c * H + sy) * W + sx);
        }
      }
    return out;
  };
  ViewPair<T> vp;
  vp.x1 = one_view();
  vp.x2 = one_view();
  return vp;
}

// Projection head: 3-layer MLP d -> 4d -> 4d -> K with GELU activations.
template <typename T>
void dino_head_params(ParamStore<T>& ps, const std::string& p, std::int64_t d, std::int64_t k) {
  ps.add(p + ".fc1.w", Tensor<T>::zeros({d, 4 * d}));
  ps.add(p + ".fc1.b", Tensor<T>::zeros({4 * d}));
  ps.add(p + ".fc2.w", Tensor<T>::zeros({4 * d, 4 * d}));
  ps.add(p + ".fc2.b", Tensor<T>::zeros({4 * d}));
  ps.add(p + ".fc3.w", Tensor<T>::zeros({4 * d, k}));
  ps.add(p + ".fc3.b", Tensor<T>::zeros({k}));
}

template <typename T>
Tensor<T> dino_head_forward(ParamStore<T>& ps, const std::string& p, const Tensor<T>& x,
                            Tape<T>* tape = nullptr) {
  auto h = gelu(linear(x, ps.at(p + ".fc1.w"), ps.at(p + ".fc1.b"), tape), tape);
  h = gelu(linear(h, ps.at(p + ".fc2.w"), ps.at(p + ".fc2.b"), tape), tape);
  return linear(h, ps.at(p + ".fc3.w"), ps.at(p + ".fc3.b"), tape);
}

// Builds one store holding backbone ("vit.*") and projection head ("head.*").
template <typename T>
ParamStore<T> build_dino_model(const ViTConfig& vit_cfg, const DistillConfig& dcfg,
                               std::uint64_t seed) {
  vit_cfg.validate();
  dcfg.validate();
  ParamStore<T> ps;
  build_vit(ps, "vit", vit_cfg);
  dino_head_params(ps, "head", vit_cfg.width, dcfg.proj_dim);
  init_params(ps, seed);
  return ps;
}

template <typename T>
Tensor<T> dino_model_forward(ParamStore<T>& ps, const Tensor<T>& images, const ViTConfig& cfg,
                             Tape<T>* tape = nullptr) {
  auto vit = vit_forward(ps, "vit", images, cfg, tape);
  return dino_head_forward(ps, "head", vit.cls, tape);
}

// One optimization step over a batch of view pairs: student gradients from
// the symmetric loss, Adam update, then the EMA teacher update.
template <typename T>
double dino_train_step(const std::vector<ViewPair<T>>& batch, ParamStore<T>& student,
                       ParamStore<T>& teacher, const ViTConfig& vit_cfg,
                       const DistillConfig& dcfg, Adam<T>& opt, T lr, std::int64_t step) {
  if (batch.empty()) throw ContractError("dino_train_step: empty batch");
  const std::int64_t B = static_cast<std::int64_t>(batch.size());
  const std::int64_t s = vit_cfg.image_size, C = vit_cfg.channels;
  auto x1 = Tensor<T>::zeros({B, C, s, s});
  auto x2 = Tensor<T>::zeros({B, C, s, s});
  const std::int64_t item = C * s * s;
  for (std::int64_t i = 0; i < B; ++i) {
    std::memcpy(x1.data() + i * item, batch[static_cast<std::size_t>(i)].x1.data(),
                static_cast<std::size_t>(item) * sizeof(T));
    std::memcpy(x2.data() + i * item, batch[static_cast<std::size_t>(i)].x2.data(),
                static_cast<std::size_t>(item) * sizeof(T));
  }

  auto pt1 = sharpen(dino_model_forward(teacher, x1, vit_cfg), static_cast<T>(dcfg.tau_teacher));
  auto pt2 = sharpen(dino_model_forward(teacher, x2, vit_cfg), static_cast<T>(dcfg.tau_teacher));

  Tape<T> tape;
  auto ps1 = sharpen(dino_model_forward(student, x1, vit_cfg, &tape),
                     static_cast<T>(dcfg.tau_student), &tape);
  auto ps2 = sharpen(dino_model_forward(student, x2, vit_cfg, &tape),
                     static_cast<T>(dcfg.tau_student), &tape);
  auto loss = dino_loss(ps1, ps2, pt1, pt2, &tape);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value))
    throw TrainingError("dino_train_step: non-finite loss at step " + std::to_string(step));
  tape.backward(loss);
  opt.step(student, tape, lr);
  ema_update(teacher, student,
             cosine_lambda(step, dcfg.total_steps, dcfg.lambda_start, dcfg.lambda_end));
  return value;
}

struct DinoRunOptions {
  std::int64_t steps = 200;
  std::int64_t batch_size = 8;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

template <typename T>
struct DinoRunResult {
  ParamStore<T> student, teacher;
  std::vector<double> losses;
};

// Toy training loop over in-memory images [C,H,W]; batches cycle through a
// seed-shuffled order and views derive per-(step,slot) seeds.
template <typename T>
DinoRunResult<T> dino_train(const std::vector<Tensor<T>>& images, const ViTConfig& vit_cfg,
                            const DistillConfig& dcfg, const DinoRunOptions& opt) {
  if (images.empty()) throw ContractError("dino_train: no images");
  DinoRunResult<T> run;
  run.student = build_dino_model<T>(vit_cfg, dcfg, opt.seed);
  run.teacher = run.student.clone();
  Adam<T> adam;
  Rng order_rng(mix_seed(opt.seed, 0xD1A0));
  for (std::int64_t step = 0; step < opt.steps; ++step) {
    std::vector<ViewPair<T>> batch;
    batch.reserve(static_cast<std::size_t>(opt.batch_size));
    for (std::int64_t b = 0; b < opt.batch_size; ++b) {
      const auto idx = order_rng.uniform_index(images.size());
      const auto view_seed = mix_seed(mix_seed(opt.seed, 0x51de, static_cast<std::uint64_t>(step)),
                                      static_cast<std::uint64_t>(b));
      batch.push_back(make_views(images[idx], vit_cfg.image_size, view_seed));
    }
    const double lr = static_cast<double>(opt.lr);
    run.losses.push_back(
        dino_train_step(batch, run.student, run.teacher, vit_cfg, dcfg, adam, static_cast<T>(lr), step));
  }
  return run;
}

}  // namespace diamant
