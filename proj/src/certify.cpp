#include "pacbayes/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pacbayes/losses.hpp"
#include "pacbayes/parallel.hpp"

namespace pacbayes {

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(what) + " must lie in [0, 1]");
}

// v * log(v / w), with 0 log 0 = 0.
double xlogx_over(double v, double w) {
  if (v == 0.0) return 0.0;
  if (w == 0.0) return std::numeric_limits<double>::infinity();
  return v * std::log(v / w);
}

constexpr Index kBlockRows = 4096;

}  // namespace

double binary_kl(double q, double p) {
  check_unit(q, "binary_kl: q");
  check_unit(p, "binary_kl: p");
  const double kl = xlogx_over(q, p) + xlogx_over(1.0 - q, 1.0 - p);
  return std::max(kl, 0.0);
}

double kl_inverse(double q, double c) {
  check_unit(q, "kl_inverse: q");
  if (!(c >= 0.0)) throw DomainError("kl_inverse: budget must be non-negative");
  if (c == 0.0 || q == 1.0) return q;
  if (std::isinf(c)) return 1.0;
  double lo = q;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (binary_kl(q, mid) > c) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

double quad_bound_value(double emp, double kl, Index n, double delta) {
  if (!(emp >= 0.0 && emp <= 1.0)) throw ParameterError("quad_bound_value: emp must lie in [0, 1]");
  if (!(kl >= 0.0)) throw ParameterError("quad_bound_value: kl must be non-negative");
  if (n < 1) throw ParameterError("quad_bound_value: n must be at least 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("quad_bound_value: delta must lie in (0, 1)");
  const double nn = static_cast<double>(n);
  const double b = (kl + std::log(2.0 * std::sqrt(nn) / delta)) / (2.0 * nn);
  const double s = std::sqrt(emp + b) + std::sqrt(b);
  return s * s;
}

void BoundInputs::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("BoundInputs: delta must lie in (0, 1)");
  if (!(delta_prime > 0.0 && delta_prime < 1.0)) throw ParameterError("BoundInputs: delta_prime must lie in (0, 1)");
  if (n_cert < 1) throw ParameterError("BoundInputs: n_cert must be at least 1");
  if (m < 1) throw ParameterError("BoundInputs: m must be at least 1");
  if (std::isnan(kl_value) || kl_value < 0.0) throw ParameterError("BoundInputs: kl_value must be non-negative");
}

Certificate certificate_from_estimate(double mc_estimate, const BoundInputs& inputs) {
  inputs.validate();
  if (!std::isfinite(inputs.kl_value)) throw NumericError("certificate: KL is not finite");
  check_unit(mc_estimate, "certificate: mc_estimate");
  Certificate c;
  c.inputs = inputs;
  c.mc_estimate = mc_estimate;
  c.emp_bound = kl_inverse(mc_estimate, std::log(2.0 / inputs.delta_prime) / static_cast<double>(inputs.m));
  const double n = static_cast<double>(inputs.n_cert);
  c.risk_bound = kl_inverse(c.emp_bound, (inputs.kl_value + std::log(2.0 * std::sqrt(n) / inputs.delta)) / n);
  c.kl_per_n = inputs.kl_value / n;
  return c;
}

double mc_empirical_error(const ProbNetwork& net, const Matrix& x, std::span<const int> y, Index m, SeededRng& rng,
                          int threads) {
  if (x.rows() == 0) throw DataError("mc_empirical_error: empty certification set");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DimensionError("mc_empirical_error: rows and labels differ");
  if (x.cols() != net.input_width()) throw DimensionError("mc_empirical_error: input width mismatch");
  if (m < 1) throw ParameterError("mc_empirical_error: m must be at least 1");

  const SeededRng base(rng.next_key());
  const NetworkMoments<double> moments(net);
  const Index n = x.rows();
  std::vector<Index> errors(static_cast<std::size_t>(m), 0);
  // Contiguous ranges of draws per worker, each with its own buffers. Every
  // draw still has its own stream, so the split does not affect the result.
  const std::size_t draws = static_cast<std::size_t>(m);
  const std::size_t workers = std::min<std::size_t>(draws, static_cast<std::size_t>(std::max(1, threads)));
  parallel_for(workers, threads, [&](std::size_t worker) {
    RealizedNetwork<double> w;
    LogitWorkspace<double> ws;
    for (std::size_t draw = worker * draws / workers; draw < (worker + 1) * draws / workers; ++draw) {
      SeededRng stream = base.child("mc-draw", draw);
      moments.sample_into(stream, w);
      Index wrong = 0;
      for (Index start = 0; start < n; start += kBlockRows) {
        const Index len = std::min(kBlockRows, n - start);
        const Matrix& logits = predict_logits(w, x.middleRows(start, len), ws);
        wrong += count_errors(logits, y.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)));
      }
      errors[draw] = wrong;
    }
  });
  // Integer counts make the total exact; a single division keeps it so.
  long double total = 0;
  for (Index e : errors) total += static_cast<long double>(e);
  return static_cast<double>(total / (static_cast<long double>(m) * static_cast<long double>(n)));
}

Certificate pac_bayes_kl_certificate(const ProbNetwork& net, const PriorRef& prior, const Matrix& x,
                                     std::span<const int> y, BoundInputs inputs, SeededRng& rng, int threads) {
  inputs.kl_value = kl_to_prior(net, prior);
  if (!std::isfinite(inputs.kl_value)) throw NumericError("certificate: KL(Q || prior) is not finite");
  inputs.n_cert = x.rows();
  inputs.validate();
  const double mc = mc_empirical_error(net, x, y, inputs.m, rng, threads);
  return certificate_from_estimate(mc, inputs);
}

nlohmann::json certificate_to_json(const Certificate& c, const std::string& config_hash, std::uint64_t seed) {
  return {
      {"risk_bound", c.risk_bound},
      {"mc_estimate", c.mc_estimate},
      {"emp_bound", c.emp_bound},
      {"kl_per_n", c.kl_per_n},
      {"inputs",
       {{"kl_value", c.inputs.kl_value},
        {"n_cert", c.inputs.n_cert},
        {"m", c.inputs.m},
        {"delta", c.inputs.delta},
        {"delta_prime", c.inputs.delta_prime}}},
      {"config_hash", config_hash},
      {"seed", seed},
  };
}

Certificate certificate_from_json(const nlohmann::json& j) {
  try {
    Certificate c;
    c.risk_bound = j.at("risk_bound").get<double>();
    c.mc_estimate = j.at("mc_estimate").get<double>();
    c.emp_bound = j.at("emp_bound").get<double>();
    c.kl_per_n = j.at("kl_per_n").get<double>();
    const auto& in = j.at("inputs");
    c.inputs.kl_value = in.at("kl_value").get<double>();
    c.inputs.n_cert = in.at("n_cert").get<Index>();
    c.inputs.m = in.at("m").get<Index>();
    c.inputs.delta = in.at("delta").get<double>();
    c.inputs.delta_prime = in.at("delta_prime").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("certificate record: ") + e.what());
  }
}

}  // namespace pacbayes
