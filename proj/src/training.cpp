#include "pacbayes/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pacbayes {

SgdMomentum::SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw ParameterError("SgdMomentum: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("SgdMomentum: momentum must lie in [0, 1)");
}

void SgdMomentum::update(std::size_t slot, double* p, const double* g, Index n) {
  if (slot >= velocity_.size()) velocity_.resize(slot + 1);
  Vector& v = velocity_[slot];
  if (v.size() == 0) v = Vector::Zero(n);
  if (v.size() != n) throw DimensionError("SgdMomentum: parameter block changed shape");
  Eigen::Map<Vector> pm(p, n);
  Eigen::Map<const Vector> gm(g, n);
  v = momentum_ * v + gm;
  pm -= lr_ * v;
}

void SgdMomentum::step(Vector& params, const Vector& grads) {
  if (params.size() != grads.size()) throw DimensionError("SgdMomentum: gradient shape mismatch");
  update(0, params.data(), grads.data(), params.size());
}

void SgdMomentum::step(ProbNetwork& net, const Gradients<double>& grads) {
  if (grads.layers.size() != net.num_layers()) throw DimensionError("SgdMomentum: gradient layer count mismatch");
  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const auto& G = grads.layers[l];
    if (G.dmu_w.rows() != L.mu_w.rows() || G.dmu_w.cols() != L.mu_w.cols() || G.drho_w.size() != L.rho_w.size() ||
        G.dmu_b.size() != L.mu_b.size() || G.drho_b.size() != L.rho_b.size()) {
      throw DimensionError("SgdMomentum: gradient shape mismatch at layer " + std::to_string(l));
    }
    update(4 * l + 0, L.mu_w.data(), G.dmu_w.data(), L.mu_w.size());
    update(4 * l + 1, L.rho_w.data(), G.drho_w.data(), L.rho_w.size());
    update(4 * l + 2, L.mu_b.data(), G.dmu_b.data(), L.mu_b.size());
    update(4 * l + 3, L.rho_b.data(), G.drho_b.data(), L.rho_b.size());
  }
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::erm: return "erm";
    case Objective::erm_dropout: return "erm_dropout";
    case Objective::mixup: return "mixup";
    case Objective::bbb: return "bbb";
    case Objective::quad_prior: return "quad_prior";
    case Objective::quad_posterior: return "quad_posterior";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& s) {
  for (auto o : {Objective::erm, Objective::erm_dropout, Objective::mixup, Objective::bbb, Objective::quad_prior,
                 Objective::quad_posterior}) {
    if (to_string(o) == s) return o;
  }
  throw ConfigError("unknown objective '" + s + "'");
}

bool is_deterministic(Objective o) {
  return o == Objective::erm || o == Objective::erm_dropout || o == Objective::mixup;
}

void TrainConfig::validate_config() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (objective == Objective::mixup && !(mixup_alpha > 0.0)) throw ConfigError("mixup_alpha must be positive");
  if (kl_coeff && !(*kl_coeff > 0.0)) throw ConfigError("kl_coeff must be positive");
  if (!(sigma0 > 0.0 && sigma0 <= 1.0)) throw ConfigError("sigma0 must lie in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(delta_prime > 0.0 && delta_prime < 1.0)) throw ConfigError("delta_prime must lie in (0, 1)");
  if (!(p_min > 0.0 && p_min < 1.0)) throw ConfigError("p_min must lie in (0, 1)");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be at least 1");
  if (checkpoint_m < 1) throw ConfigError("checkpoint_m must be at least 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {
      {"objective", to_string(c.objective)},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"dropout_rate", c.dropout_rate},
      {"mixup_alpha", c.mixup_alpha},
      {"sigma0", c.sigma0},
      {"delta", c.delta},
      {"delta_prime", c.delta_prime},
      {"p_min", c.p_min},
      {"seed", c.seed},
      {"validate", c.validate},
      {"checkpoint_interval", c.checkpoint_interval},
      {"checkpoint_m", c.checkpoint_m},
  };
  j["kl_coeff"] = c.kl_coeff ? nlohmann::json(*c.kl_coeff) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    if (j.contains("objective")) c.objective = objective_from_string(j.at("objective").get<std::string>());
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<Index>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("mixup_alpha")) c.mixup_alpha = j.at("mixup_alpha").get<double>();
    if (j.contains("kl_coeff")) {
      c.kl_coeff = j.at("kl_coeff").is_null() ? std::nullopt : std::optional<double>(j.at("kl_coeff").get<double>());
    }
    if (j.contains("sigma0")) c.sigma0 = j.at("sigma0").get<double>();
    if (j.contains("delta")) c.delta = j.at("delta").get<double>();
    if (j.contains("delta_prime")) c.delta_prime = j.at("delta_prime").get<double>();
    if (j.contains("p_min")) c.p_min = j.at("p_min").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("validate")) c.validate = j.at("validate").get<bool>();
    if (j.contains("checkpoint_interval")) c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
    if (j.contains("checkpoint_m")) c.checkpoint_m = j.at("checkpoint_m").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch},
                      {"objective", m.objective},
                      {"emp_surrogate", m.emp_surrogate},
                      {"kl_per_n", m.kl_per_n}};
  auto optional = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  j["val_error"] = optional(m.val_error);
  j["checkpoint_risk"] = optional(m.checkpoint_risk);
  return j;
}

void PriorValState::offer(int epoch, double val_error, const ProbNetwork& net) {
  eval_history.emplace_back(epoch, val_error);
  if (val_error < best_val_loss) {
    best_val_loss = val_error;
    best_epoch = epoch;
    best_snapshot = net;
  }
}

double objective_quad_value(double emp, double kl, Index n, double delta) {
  return objective_quad_partials(emp, kl, n, delta).value;
}

QuadValue objective_quad_partials(double emp, double kl, Index n, double delta) {
  if (!(emp >= 0.0 && emp <= 1.0)) throw ParameterError("f_quad: emp must lie in [0, 1]");
  if (!(kl >= 0.0)) throw ParameterError("f_quad: kl must be non-negative");
  if (n < 1) throw ParameterError("f_quad: n must be at least 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("f_quad: delta must lie in (0, 1)");
  const double nn = static_cast<double>(n);
  const double b = (kl + std::log(2.0 * std::sqrt(nn) / delta)) / (2.0 * nn);
  const double ra = std::sqrt(emp + b);
  const double rb = std::sqrt(b);
  QuadValue q;
  q.value = (ra + rb) * (ra + rb);
  q.d_emp = (ra + rb) / ra;
  q.d_kl = (ra + rb) * (1.0 / ra + 1.0 / rb) / (2.0 * nn);
  return q;
}

ObjectiveEval pac_bayes_objective(const ProbNetwork& net, const PriorRef& prior, const Matrix& xb,
                                  std::span<const int> yb, const WeightNoise<double>& noise, Objective objective,
                                  double eta, Index n, const TrainConfig& cfg) {
  if (objective != Objective::bbb && objective != Objective::quad_prior && objective != Objective::quad_posterior) {
    throw ConfigError("pac_bayes_objective: objective " + to_string(objective) + " has no KL term");
  }
  if (!(eta > 0.0)) throw ConfigError("pac_bayes_objective: eta must be positive");
  const LossConfig loss{cfg.p_min};
  const auto fr = forward(net, xb, &noise);
  const BatchLoss bl = bounded_xe_batch(fr.probs, yb, loss);
  const Gradients<double> emp_grad = pathwise_backward(net, fr.cache, bl.dlogits);
  const Gradients<double> kl_grad = kl_gradient(net, prior);

  ObjectiveEval e;
  e.emp = bl.mean_loss;
  e.kl = kl_to_prior(net, prior);
  e.grad = zero_gradients(net);
  if (objective == Objective::bbb) {
    e.objective = bl.mean_loss + eta * e.kl / static_cast<double>(n);
    e.grad += emp_grad;
    e.grad.axpy(eta / static_cast<double>(n), kl_grad);
  } else {
    const QuadValue q = objective_quad_partials(std::clamp(bl.mean_loss, 0.0, 1.0), eta * e.kl, n, cfg.delta);
    e.objective = q.value;
    e.grad.axpy(q.d_emp, emp_grad);
    e.grad.axpy(q.d_kl * eta, kl_grad);
  }
  return e;
}

namespace {

IndexList shuffled_range(Index n, SeededRng rng) {
  IndexList p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng.engine());
  return p;
}

void gather(const Dataset& d, std::span<const Index> rows, Matrix& x, Labels& y) {
  x.resize(static_cast<Index>(rows.size()), d.features());
  y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x.row(static_cast<Index>(i)) = d.x.row(rows[i]);
    y[i] = d.y[static_cast<std::size_t>(rows[i])];
  }
}

double mean_error(const ProbNetwork& net, const Dataset& d) { return zero_one_rate(mean_forward(net, d.x), d.y); }

void finish_epoch(const TrainHooks& hooks, const EpochMetrics& m, const char* stage) {
  if (!std::isfinite(m.objective)) {
    throw NumericError(std::string(stage) + ": objective became non-finite at epoch " + std::to_string(m.epoch));
  }
  if (hooks.on_epoch) hooks.on_epoch(m);
  if (hooks.deadline && std::chrono::steady_clock::now() > *hooks.deadline) {
    throw TimeoutError(std::string(stage) + ": time budget exhausted at epoch " + std::to_string(m.epoch));
  }
}

struct StepResult {
  double objective = 0.0;
  double emp = 0.0;
  double kl = 0.0;
};

StepResult pac_bayes_step(ProbNetwork& net, const PriorRef& prior, const Matrix& xb, std::span<const int> yb,
                          SeededRng& noise_rng, Objective objective, double eta, Index n, const TrainConfig& cfg,
                          SgdMomentum& opt) {
  const WeightNoise<double> noise = draw_noise(net, noise_rng);
  ObjectiveEval e = pac_bayes_objective(net, prior, xb, yb, noise, objective, eta, n, cfg);
  opt.step(net, e.grad);
  return {e.objective, e.emp, e.kl};
}

}  // namespace

PriorTrainResult train_prior_deterministic(const Dataset& train, const Dataset& val, ProbNetwork net,
                                           const TrainConfig& cfg, SeededRng& rng, const TrainHooks& hooks) {
  cfg.validate_config();
  if (!is_deterministic(cfg.objective)) {
    throw ConfigError("train_prior_deterministic: objective " + to_string(cfg.objective) + " is not deterministic");
  }
  if (train.size() == 0) throw DataError("train_prior_deterministic: empty training set");
  if (cfg.validate && val.size() == 0) throw ConfigError("prior validation enabled but the validation set is empty");
  const LossConfig loss{cfg.p_min};
  loss.validate(net.num_classes());

  SgdMomentum opt(cfg.lr, cfg.momentum);
  PriorValState state;
  const Index n = train.size();
  Matrix xb;
  Labels yb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const IndexList perm = shuffled_range(n, rng.child("shuffle", static_cast<std::uint64_t>(epoch)));
    SeededRng dropout_rng = rng.child("dropout", static_cast<std::uint64_t>(epoch));
    SeededRng mixup_rng = rng.child("mixup", static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    int batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, n - start);
      gather(train, std::span(perm).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)), xb, yb);
      BatchLoss bl;
      ForwardResult<double> fr;
      if (cfg.objective == Objective::mixup) {
        const double lambda = sample_beta(mixup_rng, cfg.mixup_alpha);
        IndexList partner(static_cast<std::size_t>(len));
        std::iota(partner.begin(), partner.end(), Index{0});
        std::shuffle(partner.begin(), partner.end(), mixup_rng.engine());
        Matrix xmix(len, xb.cols());
        Labels ypartner(static_cast<std::size_t>(len));
        for (Index i = 0; i < len; ++i) {
          const Index j = partner[static_cast<std::size_t>(i)];
          xmix.row(i) = lambda * xb.row(i) + (1.0 - lambda) * xb.row(j);
          ypartner[static_cast<std::size_t>(i)] = yb[static_cast<std::size_t>(j)];
        }
        fr = forward(net, xmix, nullptr);
        bl = mixup_batch(fr.probs, yb, ypartner, lambda, loss);
      } else {
        DropoutSpec dropout;
        if (cfg.objective == Objective::erm_dropout) dropout = {cfg.dropout_rate, &dropout_rng};
        fr = forward(net, xb, nullptr, dropout);
        bl = bounded_xe_batch(fr.probs, yb, loss);
      }
      opt.step(net, pathwise_backward(net, fr.cache, bl.dlogits));
      loss_sum += bl.mean_loss;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.emp_surrogate = loss_sum / batches;
    m.objective = m.emp_surrogate;
    if (cfg.validate) {
      m.val_error = mean_error(net, val);
      state.offer(epoch, m.val_error, net);
    }
    finish_epoch(hooks, m, "prior training");
  }
  if (cfg.validate && cfg.epochs == 0) state.offer(0, mean_error(net, val), net);
  ProbNetwork chosen = cfg.validate ? state.best_snapshot : net;
  return {std::move(chosen), std::move(state)};
}

PriorTrainResult train_prior_probabilistic(const Dataset& train, const Dataset& val, const PriorRef& pre_prior,
                                           const TrainConfig& cfg, SeededRng& rng, const TrainHooks& hooks) {
  cfg.validate_config();
  if (cfg.objective != Objective::bbb && cfg.objective != Objective::quad_prior) {
    throw ConfigError("train_prior_probabilistic: objective must be bbb or quad_prior");
  }
  if (!cfg.kl_coeff) throw ConfigError(to_string(cfg.objective) + " prior training requires kl_coeff");
  if (train.size() == 0) throw DataError("train_prior_probabilistic: empty training set");
  if (cfg.validate && val.size() == 0) throw ConfigError("prior validation enabled but the validation set is empty");

  ProbNetwork net = pre_prior.to_network();
  const LossConfig loss{cfg.p_min};
  loss.validate(net.num_classes());
  SgdMomentum opt(cfg.lr, cfg.momentum);
  PriorValState state;
  const Index n = train.size();
  const double eta = *cfg.kl_coeff;
  Matrix xb;
  Labels yb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const IndexList perm = shuffled_range(n, rng.child("shuffle", static_cast<std::uint64_t>(epoch)));
    SeededRng noise_rng = rng.child("noise", static_cast<std::uint64_t>(epoch));
    double obj_sum = 0.0, emp_sum = 0.0, kl_last = 0.0;
    int batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, n - start);
      gather(train, std::span(perm).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)), xb, yb);
      const StepResult r = pac_bayes_step(net, pre_prior, xb, yb, noise_rng, cfg.objective, eta, n, cfg, opt);
      obj_sum += r.objective;
      emp_sum += r.emp;
      kl_last = r.kl;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.objective = obj_sum / batches;
    m.emp_surrogate = emp_sum / batches;
    m.kl_per_n = kl_last / static_cast<double>(n);
    if (cfg.validate) {
      m.val_error = mean_error(net, val);
      state.offer(epoch, m.val_error, net);
    }
    finish_epoch(hooks, m, "prior training");
  }
  if (cfg.validate && cfg.epochs == 0) state.offer(0, mean_error(net, val), net);
  ProbNetwork chosen = cfg.validate ? state.best_snapshot : net;
  return {std::move(chosen), std::move(state)};
}

PosteriorTrainResult train_posterior(const Dataset& s, const PriorRef& prior, const TrainConfig& cfg,
                                     const Dataset& cert, SeededRng& rng, const TrainHooks& hooks) {
  cfg.validate_config();
  if (cfg.objective != Objective::quad_posterior) throw ConfigError("train_posterior: objective must be quad_posterior");
  if (s.size() == 0) throw DataError("train_posterior: empty training set");
  if (cert.size() == 0) throw DataError("train_posterior: empty certification set");

  ProbNetwork net = prior.to_network();
  const LossConfig loss{cfg.p_min};
  loss.validate(net.num_classes());
  SgdMomentum opt(cfg.lr, cfg.momentum);
  const Index n = s.size();

  PosteriorTrainResult result;
  ProbNetwork best = net;
  double best_risk = std::numeric_limits<double>::infinity();
  auto checkpoint = [&](int epoch) {
    BoundInputs inputs;
    inputs.m = cfg.checkpoint_m;
    inputs.delta = cfg.delta;
    inputs.delta_prime = cfg.delta_prime;
    SeededRng mc_rng = rng.child("checkpoint", static_cast<std::uint64_t>(epoch));
    const Certificate c = pac_bayes_kl_certificate(net, prior, cert.x, cert.y, inputs, mc_rng, hooks.threads);
    result.checkpoints.push_back({epoch, c});
    if (c.risk_bound < best_risk) {
      best_risk = c.risk_bound;
      best = net;
      result.selected_epoch = epoch;
    }
  };

  Matrix xb;
  Labels yb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const IndexList perm = shuffled_range(n, rng.child("shuffle", static_cast<std::uint64_t>(epoch)));
    SeededRng noise_rng = rng.child("noise", static_cast<std::uint64_t>(epoch));
    double obj_sum = 0.0, emp_sum = 0.0, kl_last = 0.0;
    int batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, n - start);
      gather(s, std::span(perm).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)), xb, yb);
      const StepResult r =
          pac_bayes_step(net, prior, xb, yb, noise_rng, Objective::quad_posterior, 1.0, n, cfg, opt);
      obj_sum += r.objective;
      emp_sum += r.emp;
      kl_last = r.kl;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.objective = obj_sum / batches;
    m.emp_surrogate = emp_sum / batches;
    m.kl_per_n = kl_last / static_cast<double>(n);
    const bool at_checkpoint = epoch == cfg.epochs || (cfg.validate && epoch % cfg.checkpoint_interval == 0);
    if (at_checkpoint) {
      checkpoint(epoch);
      m.checkpoint_risk = result.checkpoints.back().certificate.risk_bound;
    }
    finish_epoch(hooks, m, "posterior training");
  }
  if (cfg.epochs == 0) checkpoint(0);

  if (cfg.validate) {
    result.net = std::move(best);
  } else {
    result.net = std::move(net);
    result.selected_epoch = cfg.epochs;
  }
  return result;
}

PosteriorTrainResult train_posterior(const Dataset& full, const Partition& partition, const PriorRef& prior,
                                     const TrainConfig& cfg, SeededRng& rng, const TrainHooks& hooks) {
  IndexList prior_rows = partition.prior();
  IndexList cert_rows = partition.cert;
  std::sort(cert_rows.begin(), cert_rows.end());
  IndexList overlap;
  std::set_intersection(prior_rows.begin(), prior_rows.end(), cert_rows.begin(), cert_rows.end(),
                        std::back_inserter(overlap));
  if (!overlap.empty()) {
    throw PartitionError("certification set shares " + std::to_string(overlap.size()) + " rows with the prior set");
  }
  const IndexList learner = partition.learner();
  return train_posterior(subset(full, learner), prior, cfg, subset(full, cert_rows), rng, hooks);
}

}  // namespace pacbayes
