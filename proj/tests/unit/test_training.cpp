#include <gtest/gtest.h>

#include <cmath>

#include "pacbayes/training.hpp"
#include "support/oracles.hpp"

using namespace pacbayes;

namespace {

// Two Gaussian blobs separated along the first axis by a wide margin.
Dataset blobs(std::uint64_t seed, Index n, double gap = 3.0) {
  SeededRng rng(seed);
  Dataset ds;
  ds.num_classes = 2;
  ds.x.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    ds.y.push_back(label);
    ds.x(i, 0) = (label == 0 ? -gap : gap) + 0.5 * rng.normal();
    ds.x(i, 1) = rng.normal();
  }
  return ds;
}

ProbNetwork small_net(std::uint64_t seed, double sigma0 = 0.03) {
  SeededRng rng(seed);
  return init_network({2, 8, 2}, sigma0, rng, Center::random);
}

bool same_parameters(const ProbNetwork& a, const ProbNetwork& b) {
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const auto &x = a.layers()[l], &y = b.layers()[l];
    if (x.mu_w != y.mu_w || x.rho_w != y.rho_w || x.mu_b != y.mu_b || x.rho_b != y.rho_b) return false;
  }
  return true;
}

TrainConfig quick(Objective o, int epochs) {
  TrainConfig c;
  c.objective = o;
  c.epochs = epochs;
  c.batch_size = 25;
  c.lr = 0.01;
  c.momentum = 0.9;
  return c;
}

}  // namespace

TEST(SgdMomentum, PlainStep) {
  SgdMomentum opt(0.1, 0.0);
  Vector p = Vector::Constant(3, 2.0);
  opt.step(p, Vector::Ones(3));
  EXPECT_LE((p.array() - 1.9).abs().maxCoeff(), 1e-15);
}

TEST(SgdMomentum, ZeroGradientNeverMoves) {
  SgdMomentum opt(0.5, 0.9);
  Vector p(2);
  p << 1.0, -3.0;
  const Vector start = p;
  for (int i = 0; i < 100; ++i) opt.step(p, Vector::Zero(2));
  EXPECT_EQ(p, start);
}

TEST(SgdMomentum, TwoStepDisplacement) {
  SgdMomentum opt(1.0, 0.9);
  Vector p = Vector::Zero(1);
  opt.step(p, Vector::Ones(1));
  opt.step(p, Vector::Ones(1));
  EXPECT_NEAR(p[0], -2.9, 1e-15);
}

TEST(SgdMomentum, ShapeErrors) {
  SgdMomentum opt(0.1, 0.5);
  Vector p = Vector::Zero(2);
  EXPECT_THROW(opt.step(p, Vector::Zero(3)), DimensionError);
  opt.step(p, Vector::Zero(2));
  Vector q = Vector::Zero(4);
  EXPECT_THROW(opt.step(q, Vector::Zero(4)), DimensionError);
  EXPECT_THROW(SgdMomentum(0.0, 0.5), ParameterError);
  EXPECT_THROW(SgdMomentum(0.1, 1.0), ParameterError);
}

TEST(Objective, NamesRoundTrip) {
  for (auto o : {Objective::erm, Objective::erm_dropout, Objective::mixup, Objective::bbb, Objective::quad_prior,
                 Objective::quad_posterior}) {
    EXPECT_EQ(objective_from_string(to_string(o)), o);
  }
  EXPECT_THROW(objective_from_string("lambda"), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = quick(Objective::bbb, 7);
  c.kl_coeff = 1e-4;
  const TrainConfig back = train_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate_config(), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
}

TEST(QuadObjective, FrozenValue) {
  // B = 0.01 with n = 1000.
  const double kl = 20.0 - std::log(2.0 * std::sqrt(1000.0) / 0.025);
  EXPECT_NEAR(objective_quad_value(0.1, kl, 1000, 0.025), 0.186332495807107996982298654733, 1e-12);
}

TEST(QuadObjective, LimitAndMonotonicity) {
  EXPECT_NEAR(objective_quad_value(0.3, 0.0, 1000000000000, 0.025), 0.3, 1e-4);
  SeededRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double e1 = rng.uniform(), e2 = rng.uniform(), k1 = 100 * rng.uniform(), k2 = 100 * rng.uniform();
    const Index n = 1 + static_cast<Index>(rng.uniform_index(10000));
    EXPECT_LE(objective_quad_value(std::min(e1, e2), k1, n, 0.025), objective_quad_value(std::max(e1, e2), k1, n, 0.025));
    EXPECT_LE(objective_quad_value(e1, std::min(k1, k2), n, 0.025), objective_quad_value(e1, std::max(k1, k2), n, 0.025));
    EXPECT_GE(objective_quad_value(e1, k1, n, 0.025), e1);
  }
  EXPECT_THROW(objective_quad_value(0.1, -1.0, 10, 0.025), ParameterError);
}

TEST(QuadObjective, PartialsMatchFiniteDifferences) {
  SeededRng rng(2);
  for (int t = 0; t < 200; ++t) {
    const double emp = 0.05 + 0.9 * rng.uniform(), kl = 1.0 + 50.0 * rng.uniform();
    const Index n = 100 + static_cast<Index>(rng.uniform_index(5000));
    const QuadValue q = objective_quad_partials(emp, kl, n, 0.025);
    const double h = 1e-6;
    const double de = (objective_quad_value(emp + h, kl, n, 0.025) - objective_quad_value(emp - h, kl, n, 0.025)) / (2 * h);
    const double dk = (objective_quad_value(emp, kl + h, n, 0.025) - objective_quad_value(emp, kl - h, n, 0.025)) / (2 * h);
    EXPECT_LE(oracle::rel_err(q.d_emp, de), 1e-6);
    EXPECT_LE(oracle::rel_err(q.d_kl, dk), 1e-6);
  }
}

TEST(PacBayesObjective, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SeededRng rng(seed);
    const ProbNetwork prior_net = oracle::random_network(rng, {3, 4, 2});
    const ProbNetwork net = oracle::random_network(rng, {3, 4, 2});
    const PriorRef prior(prior_net, 0.1);
    const Matrix x = oracle::random_inputs(rng, 6, 3);
    const Labels y = oracle::random_labels(rng, 6, 2);
    const auto noise = draw_noise(net, rng);
    TrainConfig cfg;
    for (Objective o : {Objective::bbb, Objective::quad_prior, Objective::quad_posterior}) {
      const double eta = o == Objective::quad_posterior ? 1.0 : 1e-2;
      auto value = [&](const ProbNetwork& n) { return pac_bayes_objective(n, prior, x, y, noise, o, eta, 500, cfg).objective; };
      const auto e = pac_bayes_objective(net, prior, x, y, noise, o, eta, 500, cfg);
      EXPECT_LE(oracle::max_fd_error(net, e.grad, value), 1e-4) << to_string(o) << " seed " << seed;
    }
  }
}

TEST(PacBayesObjective, ObjectiveBoundsEmpiricalTerm) {
  SeededRng rng(3);
  TrainConfig cfg;
  for (int t = 0; t < 50; ++t) {
    const ProbNetwork prior_net = oracle::random_network(rng, {3, 5, 2});
    const ProbNetwork net = oracle::random_network(rng, {3, 5, 2});
    const PriorRef prior(prior_net, 0.1);
    const Matrix x = oracle::random_inputs(rng, 8, 3);
    const Labels y = oracle::random_labels(rng, 8, 2);
    const auto e = pac_bayes_objective(net, prior, x, y, draw_noise(net, rng), Objective::quad_posterior, 1.0, 100, cfg);
    EXPECT_GE(e.objective, e.emp);
  }
}

TEST(PacBayesObjective, KlDominatedStepReducesKl) {
  SeededRng rng(4);
  const ProbNetwork prior_net = init_network({3, 6, 2}, 0.03, rng, Center::random);
  ProbNetwork net = prior_net;
  // Push the posterior far from the prior so the KL term dominates.
  for (auto& L : net.mutable_layers()) L.mu_w.array() += 2.0;
  const PriorRef prior(prior_net, 0.03);
  const Matrix x = oracle::random_inputs(rng, 10, 3);
  const Labels y = oracle::random_labels(rng, 10, 2);
  TrainConfig cfg;
  const auto e = pac_bayes_objective(net, prior, x, y, draw_noise(net, rng), Objective::quad_posterior, 1.0, 50, cfg);
  const double before = kl_to_prior(net, prior);
  SgdMomentum opt(1e-5, 0.0);
  opt.step(net, e.grad);
  EXPECT_LT(kl_to_prior(net, prior), before);
}

TEST(PacBayesObjective, RejectsNonPacBayesObjective) {
  SeededRng rng(5);
  const ProbNetwork net = oracle::random_network(rng, {2, 2});
  EXPECT_THROW(pac_bayes_objective(net, PriorRef(net, 0.1), Matrix::Zero(1, 2), Labels{0}, zero_noise(net),
                                   Objective::erm, 1.0, 10, TrainConfig{}),
               ConfigError);
}

TEST(PriorValState, KeepsEarliestBest) {
  const ProbNetwork a = small_net(1), b = small_net(2), c = small_net(3);
  PriorValState s;
  s.offer(1, 0.3, a);
  s.offer(2, 0.1, b);
  s.offer(3, 0.1, c);
  s.offer(4, 0.2, a);
  EXPECT_EQ(s.best_epoch, 2);
  EXPECT_EQ(s.best_val_loss, 0.1);
  EXPECT_TRUE(same_parameters(s.best_snapshot, b));
  EXPECT_EQ(s.eval_history.size(), 4u);
}

TEST(TrainPriorDeterministic, SeparatesLinearlySeparableData) {
  const Dataset train = blobs(1, 200);
  TrainConfig cfg = quick(Objective::erm, 500);
  cfg.validate = false;
  SeededRng rng(2);
  const auto r = train_prior_deterministic(train, Dataset{}, small_net(3), cfg, rng);
  EXPECT_EQ(zero_one_rate(mean_forward(r.net, train.x), train.y), 0.0);
}

TEST(TrainPriorDeterministic, ValidationSelectsMinimum) {
  const Dataset train = blobs(4, 100, 1.0), val = blobs(5, 40, 1.0);
  TrainConfig cfg = quick(Objective::erm, 30);
  SeededRng rng(6);
  const auto r = train_prior_deterministic(train, val, small_net(7), cfg, rng);
  for (const auto& [epoch, err] : r.val.eval_history) EXPECT_LE(r.val.best_val_loss, err);
  EXPECT_EQ(r.val.eval_history.size(), 30u);
  EXPECT_EQ(zero_one_rate(mean_forward(r.net, val.x), val.y), r.val.best_val_loss);
}

TEST(TrainPriorDeterministic, ValidationOffReturnsFinalEpoch) {
  const Dataset train = blobs(8, 60);
  TrainConfig cfg = quick(Objective::erm, 5);
  cfg.validate = false;
  SeededRng a(9), b(9);
  const auto r5 = train_prior_deterministic(train, Dataset{}, small_net(10), cfg, a);
  TrainHooks hooks;
  int epochs_seen = 0;
  hooks.on_epoch = [&](const EpochMetrics& m) { epochs_seen = m.epoch; };
  const auto again = train_prior_deterministic(train, Dataset{}, small_net(10), cfg, b, hooks);
  EXPECT_EQ(epochs_seen, 5);
  EXPECT_TRUE(same_parameters(r5.net, again.net));
  EXPECT_TRUE(r5.val.eval_history.empty());
}

TEST(TrainPriorDeterministic, ZeroDropoutMatchesErm) {
  const Dataset train = blobs(11, 80), val = blobs(12, 20);
  TrainConfig erm = quick(Objective::erm, 4);
  TrainConfig drop = erm;
  drop.objective = Objective::erm_dropout;
  drop.dropout_rate = 0.0;
  SeededRng a(13), b(13);
  const auto r1 = train_prior_deterministic(train, val, small_net(14), erm, a);
  const auto r2 = train_prior_deterministic(train, val, small_net(14), drop, b);
  EXPECT_TRUE(same_parameters(r1.net, r2.net));
}

TEST(TrainPriorDeterministic, MixupAndDropoutTrain) {
  const Dataset train = blobs(15, 200), val = blobs(16, 40);
  for (Objective o : {Objective::mixup, Objective::erm_dropout}) {
    TrainConfig cfg = quick(o, 40);
    cfg.dropout_rate = 0.1;
    SeededRng rng(17);
    const auto r = train_prior_deterministic(train, val, small_net(18), cfg, rng);
    EXPECT_LE(r.val.best_val_loss, 0.05) << to_string(o);
  }
}

TEST(TrainPriorDeterministic, EmptyValidationIsConfigError) {
  SeededRng rng(1);
  EXPECT_THROW(train_prior_deterministic(blobs(1, 20), Dataset{}, small_net(1), quick(Objective::erm, 1), rng),
               ConfigError);
}

TEST(TrainPriorProbabilistic, RequiresKlCoefficient) {
  SeededRng rng(1);
  const PriorRef pre(small_net(1), 0.03);
  EXPECT_THROW(train_prior_probabilistic(blobs(1, 20), blobs(2, 10), pre, quick(Objective::bbb, 1), rng), ConfigError);
  TrainConfig cfg = quick(Objective::quad_prior, 1);
  EXPECT_THROW(train_prior_probabilistic(blobs(1, 20), blobs(2, 10), pre, cfg, rng), ConfigError);
}

TEST(TrainPriorProbabilistic, ZeroEpochsStaysAtPrePrior) {
  SeededRng rng(1);
  const ProbNetwork start = small_net(2);
  const PriorRef pre(start, 0.03);
  TrainConfig cfg = quick(Objective::bbb, 0);
  cfg.kl_coeff = 1e-3;
  const auto r = train_prior_probabilistic(blobs(1, 20), blobs(2, 10), pre, cfg, rng);
  EXPECT_EQ(kl_to_prior(r.net, pre), 0.0);
}

TEST(TrainPriorProbabilistic, StrongerRegularizationKeepsCloserToPrePrior) {
  const Dataset train = blobs(20, 100), val = blobs(21, 20);
  double kl_weak = 0.0, kl_strong = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PriorRef pre(small_net(100 + seed), 0.1);
    for (double eta : {1e-3, 1.0}) {
      TrainConfig cfg = quick(Objective::bbb, 10);
      cfg.kl_coeff = eta;
      cfg.validate = false;
      SeededRng rng(seed);
      const double kl = kl_to_prior(train_prior_probabilistic(train, val, pre, cfg, rng).net, pre);
      (eta < 0.5 ? kl_weak : kl_strong) += kl / 5.0;
    }
  }
  EXPECT_LT(kl_strong, kl_weak);
}

TEST(TrainPosterior, ZeroEpochsCertifiesThePrior) {
  const Dataset s = blobs(30, 100), cert = blobs(31, 60);
  const PriorRef prior(small_net(32), 0.03);
  TrainConfig cfg = posterior_defaults();
  cfg.epochs = 0;
  cfg.checkpoint_m = 50;
  SeededRng rng(33);
  const auto r = train_posterior(s, prior, cfg, cert, rng);
  ASSERT_EQ(r.checkpoints.size(), 1u);
  EXPECT_EQ(r.checkpoints[0].epoch, 0);
  EXPECT_EQ(r.checkpoints[0].certificate.inputs.kl_value, 0.0);
  EXPECT_EQ(kl_to_prior(r.net, prior), 0.0);
}

TEST(TrainPosterior, CheckpointScheduleAndSelection) {
  const Dataset s = blobs(34, 100), cert = blobs(35, 50);
  const PriorRef prior(small_net(36), 0.03);
  TrainConfig cfg = posterior_defaults();
  cfg.epochs = 25;
  cfg.batch_size = 25;
  cfg.checkpoint_m = 30;
  SeededRng rng(37);
  std::vector<int> checkpoint_epochs;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    if (!std::isnan(m.checkpoint_risk)) checkpoint_epochs.push_back(m.epoch);
    EXPECT_GE(m.objective, m.emp_surrogate);
  };
  const auto r = train_posterior(s, prior, cfg, cert, rng, hooks);
  EXPECT_EQ(checkpoint_epochs, (std::vector<int>{10, 20, 25}));
  double best = 2.0;
  for (const auto& c : r.checkpoints) best = std::min(best, c.certificate.risk_bound);
  for (const auto& c : r.checkpoints) {
    if (c.epoch == r.selected_epoch) EXPECT_EQ(c.certificate.risk_bound, best);
  }
}

TEST(TrainPosterior, DeterministicBitForBit) {
  const Dataset s = blobs(38, 80), cert = blobs(39, 40);
  const PriorRef prior(small_net(40), 0.05);
  TrainConfig cfg = posterior_defaults();
  cfg.epochs = 3;
  cfg.batch_size = 20;
  cfg.checkpoint_m = 20;
  SeededRng a(41), b(41);
  const auto r1 = train_posterior(s, prior, cfg, cert, a);
  const auto r2 = train_posterior(s, prior, cfg, cert, b);
  EXPECT_TRUE(same_parameters(r1.net, r2.net));
  EXPECT_EQ(r1.checkpoints.back().certificate.risk_bound, r2.checkpoints.back().certificate.risk_bound);
}

TEST(TrainPosterior, RejectsOverlappingPartition) {
  const Dataset full = blobs(42, 40);
  Partition p;
  for (Index i = 0; i < 10; ++i) p.test.push_back(i);
  for (Index i = 10; i < 20; ++i) p.prior_train.push_back(i);
  for (Index i = 18; i < 40; ++i) p.cert.push_back(i);
  const PriorRef prior(small_net(43), 0.03);
  SeededRng rng(1);
  EXPECT_THROW(train_posterior(full, p, prior, posterior_defaults(), rng), PartitionError);
}

TEST(TrainPosterior, NonFiniteObjectiveIsNumericError) {
  const Dataset s = blobs(44, 40), cert = blobs(45, 20);
  const PriorRef prior(small_net(46), 0.03);
  TrainConfig cfg = posterior_defaults();
  cfg.epochs = 3;
  cfg.lr = 1e12;
  cfg.checkpoint_m = 5;
  SeededRng rng(47);
  EXPECT_THROW(train_posterior(s, prior, cfg, cert, rng), NumericError);
}
