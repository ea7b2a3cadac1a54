#include "pacbayes/losses.hpp"

namespace pacbayes {

BatchLoss bounded_xe_batch(const Matrix& probs, std::span<const int> labels, const LossConfig& cfg) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("bounded_xe_batch: label count does not match batch");
  }
  BatchLoss out;
  out.dlogits = Matrix::Zero(probs.rows(), probs.cols());
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  double total = 0.0;
  for (Index r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r).transpose();
    total += bounded_xe(row, labels[r], cfg);
    out.dlogits.row(r) = inv_b * bounded_xe_grad(row, labels[r], cfg).transpose();
  }
  out.mean_loss = total * inv_b;
  return out;
}

BatchLoss mixup_batch(const Matrix& probs, std::span<const int> labels_a, std::span<const int> labels_b,
                      double lambda, const LossConfig& cfg) {
  const BatchLoss a = bounded_xe_batch(probs, labels_a, cfg);
  const BatchLoss b = bounded_xe_batch(probs, labels_b, cfg);
  return {lambda * a.mean_loss + (1.0 - lambda) * b.mean_loss, lambda * a.dlogits + (1.0 - lambda) * b.dlogits};
}

Index count_errors(const Matrix& scores, std::span<const int> labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) {
    throw DimensionError("count_errors: label count does not match rows");
  }
  Index errors = 0;
  for (Index r = 0; r < scores.rows(); ++r) {
    errors += zero_one(scores.row(r), labels[r]);
  }
  return errors;
}

}  // namespace pacbayes
