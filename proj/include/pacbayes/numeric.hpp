#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <string_view>

#include "pacbayes/errors.hpp"

namespace pacbayes {

using Index = Eigen::Index;

// Row-major so that one example (or one output unit) is a contiguous row.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

// Deterministic generator with label-derived child streams. A child depends
// only on (seed, label, index), never on how much the parent has been used,
// so subsystems can draw in any order without perturbing each other.
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  SeededRng child(std::string_view label, std::uint64_t index = 0) const {
    return SeededRng(mix(seed_ ^ mix(fnv1a(label) + mix(index + 0x632be59bd9b4e019ULL))));
  }

  // Fresh key drawn from this stream's state; used to fan out per-draw
  // streams that still depend on how far the caller has advanced.
  std::uint64_t next_key() { return engine_(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t uniform_index(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: lhs has " + std::to_string(a.cols()) + " columns, rhs has " +
                         std::to_string(b.rows()) + " rows");
  }
  MatrixX<Scalar> out = a * b;
  return out;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = logits.maxCoeff();
  VectorX<Scalar> e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

// Row-wise softmax for a batch of logits (one example per row).
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = logits;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar top = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - top).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// log(1 + exp(x)) without overflow for large x.
template <std::floating_point Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

// Derivative of softplus.
template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

// Inverse of softplus: rho such that softplus(rho) == sigma.
template <std::floating_point Scalar>
Scalar softplus_inverse(Scalar sigma) {
  using std::expm1;
  using std::log;
  if (!(sigma > Scalar(0))) throw ParameterError("softplus_inverse: sigma must be positive");
  if (sigma > Scalar(30)) return sigma + log(-std::expm1(-sigma));
  return log(expm1(sigma));
}

template <typename Derived>
auto softplus(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return softplus(v); });
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

// N(0, std^2) conditioned on |v| <= 2 std, by rejection.
template <typename Scalar = double>
VectorX<Scalar> trunc_normal(SeededRng& rng, Index n, Scalar std) {
  if (!(std > Scalar(0))) throw ParameterError("trunc_normal: std must be positive");
  VectorX<Scalar> out(n);
  for (Index i = 0; i < n; ++i) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    out[i] = static_cast<Scalar>(z) * std;
  }
  return out;
}

// Symmetric Beta(alpha, alpha) via the ratio of two gamma draws.
inline double sample_beta(SeededRng& rng, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("sample_beta: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    const double x = gamma(rng.engine());
    const double y = gamma(rng.engine());
    const double s = x + y;
    if (s > 0.0 && std::isfinite(s)) return x / s;
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace pacbayes
