#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pacbayes/errors.hpp"
#include "pacbayes/numeric.hpp"

namespace pacbayes {

using Labels = std::vector<int>;

struct LossConfig {
  double p_min = 1e-4;

  void validate(Index num_classes) const {
    if (!(p_min > 0.0) || !(p_min < 1.0 / static_cast<double>(num_classes))) {
      throw ParameterError("LossConfig: p_min must lie in (0, 1/num_classes)");
    }
  }
  double scale() const { return std::log(1.0 / p_min); }
};

namespace detail {
inline void check_label(Index label, Index classes) {
  if (label < 0 || label >= classes) {
    throw DomainError("label " + std::to_string(label) + " out of range [0, " + std::to_string(classes) + ")");
  }
}
}  // namespace detail

// Cross-entropy with the target probability floored at p_min and rescaled by
// 1/log(1/p_min), so the value lies in [0, 1].
template <typename Derived>
double bounded_xe(const Eigen::MatrixBase<Derived>& probs, Index label, const LossConfig& cfg) {
  detail::check_label(label, probs.size());
  const double p = std::max(static_cast<double>(probs(label)), cfg.p_min);
  return std::log(1.0 / p) / cfg.scale();
}

// Gradient of softmax followed by bounded_xe, taken with respect to the
// logits. Zero on the clamped side (probs[label] < p_min).
template <typename Derived>
VectorX<typename Derived::Scalar> bounded_xe_grad(const Eigen::MatrixBase<Derived>& probs, Index label,
                                                  const LossConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  detail::check_label(label, probs.size());
  VectorX<Scalar> g = VectorX<Scalar>::Zero(probs.size());
  if (static_cast<double>(probs(label)) < cfg.p_min) return g;
  g = probs / static_cast<Scalar>(cfg.scale());
  g(label) -= Scalar(1) / static_cast<Scalar>(cfg.scale());
  return g;
}

// argmax with ties going to the smallest index.
template <typename Derived>
Index argmax_first(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

template <typename Derived>
int zero_one(const Eigen::MatrixBase<Derived>& probs, Index label) {
  detail::check_label(label, probs.size());
  return argmax_first(probs) == label ? 0 : 1;
}

struct MixedExample {
  Vector x;
  int label_a = 0;
  int label_b = 0;
  double lambda = 1.0;
};

inline MixedExample mixup_compose(const Vector& xi, const Vector& xj, int yi, int yj, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("mixup_compose: lambda must lie in [0, 1]");
  if (xi.size() != xj.size()) throw DimensionError("mixup_compose: inputs differ in width");
  return {lambda * xi + (1.0 - lambda) * xj, yi, yj, lambda};
}

template <typename Derived>
double mixup_loss(const Eigen::MatrixBase<Derived>& probs, const MixedExample& ex, const LossConfig& cfg) {
  return ex.lambda * bounded_xe(probs, ex.label_a, cfg) + (1.0 - ex.lambda) * bounded_xe(probs, ex.label_b, cfg);
}

// Mean loss over a batch together with its gradient w.r.t. the logits; the
// gradient already includes the 1/batch factor.
struct BatchLoss {
  double mean_loss = 0.0;
  Matrix dlogits;
};

BatchLoss bounded_xe_batch(const Matrix& probs, std::span<const int> labels, const LossConfig& cfg);

// lambda * loss(labels_a) + (1 - lambda) * loss(labels_b), averaged.
BatchLoss mixup_batch(const Matrix& probs, std::span<const int> labels_a, std::span<const int> labels_b,
                      double lambda, const LossConfig& cfg);

// Count of rows whose argmax disagrees with the label.
Index count_errors(const Matrix& scores, std::span<const int> labels);

inline double zero_one_rate(const Matrix& scores, std::span<const int> labels) {
  if (labels.empty()) throw DataError("zero_one_rate: empty label set");
  return static_cast<double>(count_errors(scores, labels)) / static_cast<double>(labels.size());
}

}  // namespace pacbayes
