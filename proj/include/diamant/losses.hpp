#pragma once

#include <cstdint>

#include "diamant/ops.hpp"

namespace diamant {

// ---------------------------------------------------------------------------
// Segmentation objective: equally weighted cross-entropy and soft-dice terms
// over per-pixel class logits [B,N,H,W] and one-hot targets of equal shape.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_loss_shapes(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (a.rank() != 4 || b.rank() != 4 || a.shape() != b.shape())
    throw ShapeError(std::string(who) + ": prediction " + shape_str(a.shape()) +
                     " and one-hot target " + shape_str(b.shape()) +
                     " must share one [B,N,H,W] shape");
}

// -(1/(N*B*H*W)) * sum y*log(p): the class-mean cross-entropy averaged over
// batch and pixels, computed from probabilities.
template <typename T>
Tensor<T> ce_from_probs(const Tensor<T>& probs, const Tensor<T>& y_onehot, Tape<T>* tape) {
  auto lp = diamant::log(probs, tape, T(1e-12));
  auto s = sum_all(mul(y_onehot, lp, tape), tape);
  const double denom = static_cast<double>(y_onehot.numel());
  return scale(s, static_cast<T>(-1.0 / denom), tape);
}

// mean over classes of 1 - (2*sum(y*p)+eps)/(sum(y)+sum(p)+eps), sums over
// batch and pixels.
template <typename T>
Tensor<T> dice_from_probs(const Tensor<T>& probs, const Tensor<T>& y_onehot, T eps,
                          Tape<T>* tape) {
  const std::vector<int> reduce_axes{0, 2, 3};
  auto inter = reduce_sum(mul(y_onehot, probs, tape), reduce_axes, false, tape);
  auto ysum = reduce_sum(y_onehot, reduce_axes, false, tape);
  auto psum = reduce_sum(probs, reduce_axes, false, tape);
  auto num = add_scalar(scale(inter, T(2), tape), eps, tape);
  auto den = add_scalar(add(ysum, psum, tape), eps, tape);
  auto frac = div(num, den, tape);
  auto ones = Tensor<T>::full(frac.shape(), T(1));
  return mean_all(sub(ones, frac, tape), tape);
}

}  // namespace detail

template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const Tensor<T>& y_onehot, Tape<T>* tape = nullptr) {
  detail::check_loss_shapes(logits, y_onehot, "ce_loss");
  auto probs = softmax(logits, 1, tape);
  return detail::ce_from_probs(probs, y_onehot, tape);
}

// Takes probabilities (not logits); pair with softmax or use combined_loss.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& y_onehot, T eps = T(1),
                    Tape<T>* tape = nullptr) {
  detail::check_loss_shapes(probs, y_onehot, "dice_loss");
  return detail::dice_from_probs(probs, y_onehot, eps, tape);
}

// (ce + dice)/2 with a single shared softmax over the class axis.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& logits, const Tensor<T>& y_onehot, T dice_eps = T(1),
                        Tape<T>* tape = nullptr) {
  detail::check_loss_shapes(logits, y_onehot, "combined_loss");
  auto probs = softmax(logits, 1, tape);
  auto ce = detail::ce_from_probs(probs, y_onehot, tape);
  auto dice = detail::dice_from_probs(probs, y_onehot, dice_eps, tape);
  return scale(add(ce, dice, tape), T(0.5), tape);
}

// Expands an integer label map [B,H,W] into one-hot [B,N,H,W] float planes.
template <typename T, typename L>
Tensor<T> one_hot(const Tensor<L>& labels, std::int64_t n_classes) {
  if (labels.rank() != 3) throw ShapeError("one_hot: expects [B,H,W] labels");
  const std::int64_t B = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
  auto out = Tensor<T>::zeros({B, n_classes, H, W});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H * W; ++i) {
      const std::int64_t c = static_cast<std::int64_t>(labels.at(b * H * W + i));
      if (c < 0 || c >= n_classes)
        throw DomainError("one_hot: label " + std::to_string(c) + " outside [0, " +
                          std::to_string(n_classes) + ")");
      out.data()[((b * n_classes + c) * H + i / W) * W + i % W] = T(1);
    }
  return out;
}

}  // namespace diamant
