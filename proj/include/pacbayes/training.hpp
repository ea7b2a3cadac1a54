#pragma once

#include <chrono>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pacbayes/certify.hpp"
#include "pacbayes/data.hpp"
#include "pacbayes/losses.hpp"
#include "pacbayes/prob_network.hpp"

namespace pacbayes {

// Heavy-ball SGD: v <- momentum * v + g; p <- p - lr * v. Velocity buffers
// are created on first use and must keep their shape afterwards.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum);

  void step(Vector& params, const Vector& grads);
  void step(ProbNetwork& net, const Gradients<double>& grads);

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  void update(std::size_t slot, double* p, const double* g, Index n);

  double lr_;
  double momentum_;
  std::vector<Vector> velocity_;
};

enum class Objective { erm, erm_dropout, mixup, bbb, quad_prior, quad_posterior };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);
bool is_deterministic(Objective o);

struct TrainConfig {
  Objective objective = Objective::erm;
  int epochs = 100;
  Index batch_size = 250;
  double lr = 0.005;
  double momentum = 0.95;
  double dropout_rate = 0.0;
  double mixup_alpha = 0.2;
  std::optional<double> kl_coeff;  // eta, required by bbb and quad_prior
  double sigma0 = 0.03;
  double delta = 0.025;
  double delta_prime = 0.01;
  double p_min = 1e-4;
  std::uint64_t seed = 0;
  bool validate = true;  // prior validation / posterior checkpoint selection
  int checkpoint_interval = 10;
  Index checkpoint_m = 1000;

  void validate_config() const;
};

inline TrainConfig posterior_defaults() {
  TrainConfig c;
  c.objective = Objective::quad_posterior;
  return c;
}

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochMetrics {
  int epoch = 0;
  double objective = 0.0;
  double emp_surrogate = 0.0;
  double kl_per_n = 0.0;
  double val_error = std::numeric_limits<double>::quiet_NaN();
  double checkpoint_risk = std::numeric_limits<double>::quiet_NaN();
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::optional<std::chrono::steady_clock::time_point> deadline;
  int threads = 1;
};

struct PriorValState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<std::pair<int, double>> eval_history;  // (epoch, val 01 error)
  ProbNetwork best_snapshot;

  // Records an evaluation; keeps the earlier snapshot on ties.
  void offer(int epoch, double val_error, const ProbNetwork& net);
};

struct PriorTrainResult {
  ProbNetwork net;
  PriorValState val;
};

// erm / erm_dropout / mixup on the mean network (scales are left untouched).
PriorTrainResult train_prior_deterministic(const Dataset& train, const Dataset& val, ProbNetwork init,
                                           const TrainConfig& cfg, SeededRng& rng, const TrainHooks& hooks = {});

// bbb / quad_prior starting from and regularized towards `pre_prior`.
PriorTrainResult train_prior_probabilistic(const Dataset& train, const Dataset& val, const PriorRef& pre_prior,
                                           const TrainConfig& cfg, SeededRng& rng, const TrainHooks& hooks = {});

struct CheckpointCertificate {
  int epoch = 0;
  Certificate certificate;
};

struct PosteriorTrainResult {
  ProbNetwork net;
  std::vector<CheckpointCertificate> checkpoints;
  int selected_epoch = 0;
};

// f_quad over all of `s` (n = |s|), starting at the prior. Reduced-m
// certificates on `cert` are taken every checkpoint_interval epochs and at
// the last epoch; the best one is returned when cfg.validate is set.
PosteriorTrainResult train_posterior(const Dataset& s, const PriorRef& prior, const TrainConfig& cfg,
                                     const Dataset& cert, SeededRng& rng, const TrainHooks& hooks = {});

// Same, with S and S_cert taken from a partition. Throws PartitionError if
// the certification rows intersect the prior rows.
PosteriorTrainResult train_posterior(const Dataset& full, const Partition& partition, const PriorRef& prior,
                                     const TrainConfig& cfg, SeededRng& rng, const TrainHooks& hooks = {});

struct QuadValue {
  double value = 0.0;
  double d_emp = 0.0;
  double d_kl = 0.0;
};

double objective_quad_value(double emp, double kl, Index n, double delta);
QuadValue objective_quad_partials(double emp, double kl, Index n, double delta);

struct ObjectiveEval {
  double objective = 0.0;
  double emp = 0.0;
  double kl = 0.0;  // unattenuated
  Gradients<double> grad;
};

// bbb, quad_prior or quad_posterior on one minibatch under fixed noise, with
// eta multiplying KL wherever it appears. n is the training-set size.
ObjectiveEval pac_bayes_objective(const ProbNetwork& net, const PriorRef& prior, const Matrix& xb,
                                  std::span<const int> yb, const WeightNoise<double>& noise, Objective objective,
                                  double eta, Index n, const TrainConfig& cfg);

}  // namespace pacbayes
