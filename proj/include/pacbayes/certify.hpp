#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "json.hpp"

#include "pacbayes/prob_network.hpp"

namespace pacbayes {

// kl(q || p) between Bernoulli(q) and Bernoulli(p), +inf when p is 0 or 1
// and q differs.
double binary_kl(double q, double p);

// Largest p in [q, 1] with binary_kl(q, p) <= c. Bisection runs until the
// bracket collapses to adjacent doubles, and the upper end is returned.
double kl_inverse(double q, double c);

// (sqrt(emp + B) + sqrt(B))^2 with B = (kl + log(2 sqrt(n) / delta)) / (2n).
double quad_bound_value(double emp, double kl, Index n, double delta);

struct BoundInputs {
  double kl_value = 0.0;
  Index n_cert = 0;
  Index m = 150000;
  double delta = 0.025;
  double delta_prime = 0.01;

  void validate() const;
};

struct Certificate {
  double risk_bound = 1.0;
  double mc_estimate = 0.0;
  double emp_bound = 0.0;
  double kl_per_n = 0.0;
  BoundInputs inputs;

  bool chain_holds() const { return mc_estimate <= emp_bound && emp_bound <= risk_bound; }
};

// Both inversions for a given Monte-Carlo estimate. Pure.
Certificate certificate_from_estimate(double mc_estimate, const BoundInputs& inputs);

// Average 0-1 error over m weight draws, each scored on every row of x.
// Draw i uses its own stream derived from one key taken from `rng`, and the
// per-draw errors are summed in draw order, so the value does not depend on
// `threads`.
double mc_empirical_error(const ProbNetwork& net, const Matrix& x, std::span<const int> y, Index m, SeededRng& rng,
                          int threads = 1);

// inputs.kl_value is overwritten with KL(net || prior) and inputs.n_cert
// with the number of rows in x.
Certificate pac_bayes_kl_certificate(const ProbNetwork& net, const PriorRef& prior, const Matrix& x,
                                     std::span<const int> y, BoundInputs inputs, SeededRng& rng, int threads = 1);

nlohmann::json certificate_to_json(const Certificate& c, const std::string& config_hash, std::uint64_t seed);
Certificate certificate_from_json(const nlohmann::json& j);

}  // namespace pacbayes
