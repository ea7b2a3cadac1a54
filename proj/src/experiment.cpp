#include "pacbayes/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "pacbayes/parallel.hpp"

namespace pacbayes {

std::vector<Index> network_dims(Index inputs, const ArchSpec& arch, Index classes) {
  if (inputs < 1 || classes < 2) throw DimensionError("network_dims: need inputs >= 1 and classes >= 2");
  if (arch.hidden_units < 1 || arch.depth < 0) throw ConfigError("network_dims: invalid architecture");
  std::vector<Index> dims{inputs};
  for (Index l = 0; l < arch.depth; ++l) dims.push_back(arch.hidden_units);
  dims.push_back(classes);
  return dims;
}

void PipelineConfig::validate(const Dataset& ds) const {
  plan.validate();
  if (!prior && plan.prior_fraction > 0.0) {
    throw ConfigError("prior_fraction > 0 needs a prior training objective");
  }
  if (prior && plan.prior_fraction == 0.0) {
    throw ConfigError("data-dependent prior objective " + to_string(prior->objective) + " requested with prior_fraction 0");
  }
  if (prior) {
    prior->validate_config();
    if (prior->objective == Objective::quad_posterior) throw ConfigError("quad_posterior is not a prior objective");
  }
  posterior.validate_config();
  if (posterior.objective != Objective::quad_posterior) throw ConfigError("posterior objective must be quad_posterior");
  if (test_draws < 1) throw ConfigError("test_draws must be at least 1");
  if (timeout_seconds < 0.0) throw ConfigError("timeout_seconds must be non-negative");
  BoundInputs probe = bound;
  probe.n_cert = 1;
  probe.kl_value = 0.0;
  try {
    probe.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  network_dims(std::max<Index>(ds.features(), 1), arch, std::max(ds.num_classes, 2));
}

namespace {

nlohmann::json nullable(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double read_nullable(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

std::string center_name(Center c) { return c == Center::zero ? "zero" : "random"; }

Center center_from_string(const std::string& s) {
  if (s == "zero") return Center::zero;
  if (s == "random") return Center::random;
  throw ConfigError("unknown prior center '" + s + "'");
}

nlohmann::json plan_json(const PartitionPlan& p) {
  return {{"test_fraction", p.test_fraction},       {"prior_fraction", p.prior_fraction},
          {"prior_val_fraction", p.prior_val_fraction}, {"prior_validation", p.prior_validation},
          {"subsample_fraction", p.subsample_fraction}, {"standard_split", p.standard_split}};
}

PartitionPlan plan_from_json(const nlohmann::json& j, PartitionPlan p) {
  if (j.contains("test_fraction")) p.test_fraction = j.at("test_fraction").get<double>();
  if (j.contains("prior_fraction")) p.prior_fraction = j.at("prior_fraction").get<double>();
  if (j.contains("prior_val_fraction")) p.prior_val_fraction = j.at("prior_val_fraction").get<double>();
  if (j.contains("prior_validation")) p.prior_validation = j.at("prior_validation").get<bool>();
  if (j.contains("subsample_fraction")) p.subsample_fraction = j.at("subsample_fraction").get<double>();
  if (j.contains("standard_split")) p.standard_split = j.at("standard_split").get<bool>();
  return p;
}

}  // namespace

nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j = {
      {"dataset", c.dataset},
      {"plan", plan_json(c.plan)},
      {"arch", {{"hidden_units", c.arch.hidden_units}, {"depth", c.arch.depth}}},
      {"posterior", to_json(c.posterior)},
      {"bound", {{"m", c.bound.m}, {"delta", c.bound.delta}, {"delta_prime", c.bound.delta_prime}}},
      {"prior_center", center_name(c.prior_center)},
      {"test_draws", c.test_draws},
      {"seed", c.seed},
      {"timeout_seconds", c.timeout_seconds},
  };
  j["prior"] = c.prior ? to_json(*c.prior) : nlohmann::json(nullptr);
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c) {
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("plan")) c.plan = plan_from_json(j.at("plan"), c.plan);
    if (j.contains("arch")) {
      const auto& a = j.at("arch");
      if (a.contains("hidden_units")) c.arch.hidden_units = a.at("hidden_units").get<Index>();
      if (a.contains("depth")) c.arch.depth = a.at("depth").get<Index>();
    }
    if (j.contains("prior")) {
      if (j.at("prior").is_null()) {
        c.prior.reset();
      } else {
        c.prior = train_config_from_json(j.at("prior"), c.prior.value_or(TrainConfig{}));
      }
    }
    if (j.contains("posterior")) c.posterior = train_config_from_json(j.at("posterior"), c.posterior);
    if (j.contains("bound")) {
      const auto& b = j.at("bound");
      if (b.contains("m")) c.bound.m = b.at("m").get<Index>();
      if (b.contains("delta")) c.bound.delta = b.at("delta").get<double>();
      if (b.contains("delta_prime")) c.bound.delta_prime = b.at("delta_prime").get<double>();
    }
    if (j.contains("prior_center")) c.prior_center = center_from_string(j.at("prior_center").get<std::string>());
    if (j.contains("test_draws")) c.test_draws = j.at("test_draws").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("timeout_seconds")) c.timeout_seconds = j.at("timeout_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  return c;
}

std::string config_hash(const PipelineConfig& c) {
  const std::string canonical = to_json(c).dump();
  const std::uint64_t h = SeededRng::fnv1a(canonical);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {
      {"config", to_json(r.config)},
      {"config_hash", r.config_hash},
      {"seed", r.seed},
      {"partition",
       {{"n_test", r.n_test},
        {"n_prior_train", r.n_prior_train},
        {"n_prior_val", r.n_prior_val},
        {"n_cert", r.n_cert},
        {"n_s", r.n_s}}},
      {"parameter_count", r.parameter_count},
      {"prior", {{"val_error", nullable(r.prior_val_error)},
                 {"stoch_error", nullable(r.prior_stoch_error)},
                 {"mean_error", nullable(r.prior_mean_error)}}},
      {"posterior", {{"stoch_test_error", nullable(r.stoch_test_error)},
                     {"mean_test_error", nullable(r.mean_test_error)},
                     {"selected_epoch", r.selected_epoch}}},
      {"certificate", r.failed ? nlohmann::json(nullptr) : certificate_to_json(r.certificate, r.config_hash, r.seed)},
      {"wall_seconds", r.wall_seconds},
      {"failed", r.failed},
  };
  if (r.failed) {
    j["failed_stage"] = r.failed_stage;
    j["error"] = r.error;
  }
  return j;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.config = pipeline_config_from_json(j.at("config"));
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& p = j.at("partition");
    r.n_test = p.at("n_test").get<Index>();
    r.n_prior_train = p.at("n_prior_train").get<Index>();
    r.n_prior_val = p.at("n_prior_val").get<Index>();
    r.n_cert = p.at("n_cert").get<Index>();
    r.n_s = p.at("n_s").get<Index>();
    r.parameter_count = j.at("parameter_count").get<Index>();
    r.prior_val_error = read_nullable(j.at("prior"), "val_error");
    r.prior_stoch_error = read_nullable(j.at("prior"), "stoch_error");
    r.prior_mean_error = read_nullable(j.at("prior"), "mean_error");
    r.stoch_test_error = read_nullable(j.at("posterior"), "stoch_test_error");
    r.mean_test_error = read_nullable(j.at("posterior"), "mean_test_error");
    r.selected_epoch = j.at("posterior").at("selected_epoch").get<int>();
    r.failed = j.at("failed").get<bool>();
    if (!r.failed) r.certificate = certificate_from_json(j.at("certificate"));
    r.wall_seconds = j.at("wall_seconds").get<double>();
    if (r.failed) {
      r.failed_stage = j.value("failed_stage", "");
      r.error = j.value("error", "");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
}

namespace {

template <typename F>
auto in_stage(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

double mean_error(const ProbNetwork& net, const Dataset& d) { return zero_one_rate(mean_forward(net, d.x), d.y); }

}  // namespace

PreparedData prepare_data(const Dataset& ds, const PipelineConfig& cfg) {
  in_stage("config", [&] {
    ds.validate();
    cfg.validate(ds);
    return 0;
  });
  const SeededRng rng(cfg.seed);
  PreparedData out;
  PartitionPlan plan = cfg.plan;
  plan.prior_validation = cfg.prior && cfg.prior->validate;
  out.partition = in_stage("partition", [&] {
    SeededRng r = rng.child("partition");
    return make_partition(ds, plan, r);
  });
  out.data = in_stage("standardize", [&] {
    const Standardizer s = fit_standardizer(subset(ds, out.partition.learner()).x);
    Dataset z = ds;
    z.x = apply_standardizer(s, ds.x);
    return z;
  });
  return out;
}

double prior_sigma0(const PipelineConfig& cfg) {
  return cfg.prior && !is_deterministic(cfg.prior->objective) ? cfg.prior->sigma0 : cfg.posterior.sigma0;
}

PriorStage build_prior(const PreparedData& prep, const PipelineConfig& cfg, const TrainHooks& hooks) {
  return in_stage("prior", [&] {
    const SeededRng rng(cfg.seed);
    const auto dims = network_dims(prep.data.features(), cfg.arch, prep.data.num_classes);
    const double sigma0 = cfg.posterior.sigma0;
    SeededRng init_rng = rng.child("init");
    SeededRng prior_rng = rng.child("prior");
    PriorStage out;
    if (!cfg.prior) {
      out.prior = PriorRef(init_network(dims, sigma0, init_rng, cfg.prior_center), sigma0);
      return out;
    }
    const Dataset train = subset(prep.data, prep.partition.prior_train);
    const Dataset val = subset(prep.data, prep.partition.prior_val);
    if (is_deterministic(cfg.prior->objective)) {
      ProbNetwork init = init_network(dims, sigma0, init_rng, Center::random);
      PriorTrainResult res = train_prior_deterministic(train, val, std::move(init), *cfg.prior, prior_rng, hooks);
      if (cfg.prior->validate) out.val_error = res.val.best_val_loss;
      out.prior = PriorRef(init_network(res.net, sigma0), sigma0);
      return out;
    }
    const double pre_sigma = cfg.prior->sigma0;
    const PriorRef pre(init_network(dims, pre_sigma, init_rng, cfg.prior_center), pre_sigma);
    PriorTrainResult res = train_prior_probabilistic(train, val, pre, *cfg.prior, prior_rng, hooks);
    if (cfg.prior->validate) out.val_error = res.val.best_val_loss;
    out.prior = PriorRef(res.net, pre_sigma);
    return out;
  });
}

PosteriorTrainResult fit_posterior(const PreparedData& prep, const PipelineConfig& cfg, const PriorRef& prior,
                                   const TrainHooks& hooks) {
  return in_stage("posterior", [&] {
    SeededRng r = SeededRng(cfg.seed).child("posterior");
    return train_posterior(prep.data, prep.partition, prior, cfg.posterior, r, hooks);
  });
}

Certificate certify_posterior(const PreparedData& prep, const PipelineConfig& cfg, const ProbNetwork& posterior,
                              const PriorRef& prior, int threads) {
  return in_stage("certificate", [&] {
    const Dataset cert = subset(prep.data, prep.partition.cert);
    SeededRng r = SeededRng(cfg.seed).child("certificate");
    const Certificate c = pac_bayes_kl_certificate(posterior, prior, cert.x, cert.y, cfg.bound, r, threads);
    if (!c.chain_holds()) throw ContractError("certificate chain mc <= emp_bound <= risk violated");
    return c;
  });
}

std::pair<double, double> test_errors(const PreparedData& prep, const PipelineConfig& cfg, const ProbNetwork& net,
                                      const std::string& stream, int threads) {
  const Dataset test = subset(prep.data, prep.partition.test);
  SeededRng r = SeededRng(cfg.seed).child(stream);
  return {mean_error(net, test), mc_empirical_error(net, test.x, test.y, cfg.test_draws, r, threads)};
}

RunRecord run_pipeline(const Dataset& ds, const PipelineConfig& cfg, const PipelineHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const PreparedData prep = prepare_data(ds, cfg);

  RunRecord rec;
  rec.config = cfg;
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.seed;

  TrainHooks train_hooks;
  train_hooks.threads = hooks.threads;
  if (cfg.timeout_seconds > 0.0) {
    train_hooks.deadline = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(cfg.timeout_seconds));
  }
  auto hooks_for = [&](const std::string& stage) {
    TrainHooks h = train_hooks;
    if (hooks.on_epoch) h.on_epoch = [&hooks, stage](const EpochMetrics& m) { hooks.on_epoch(stage, m); };
    return h;
  };

  const Partition& part = prep.partition;
  rec.n_test = static_cast<Index>(part.test.size());
  rec.n_prior_train = static_cast<Index>(part.prior_train.size());
  rec.n_prior_val = static_cast<Index>(part.prior_val.size());
  rec.n_cert = static_cast<Index>(part.cert.size());
  rec.n_s = static_cast<Index>(part.learner().size());

  const PriorStage prior = build_prior(prep, cfg, hooks_for("prior"));
  rec.prior_val_error = prior.val_error;
  const ProbNetwork prior_net = prior.prior.to_network();
  rec.parameter_count = prior_net.distribution_parameter_count();
  std::tie(rec.prior_mean_error, rec.prior_stoch_error) =
      in_stage("prior evaluation", [&] { return test_errors(prep, cfg, prior_net, "prior-test", hooks.threads); });

  const PosteriorTrainResult post = fit_posterior(prep, cfg, prior.prior, hooks_for("posterior"));
  rec.selected_epoch = post.selected_epoch;
  rec.certificate = certify_posterior(prep, cfg, post.net, prior.prior, hooks.threads);
  std::tie(rec.mean_test_error, rec.stoch_test_error) =
      in_stage("test evaluation", [&] { return test_errors(prep, cfg, post.net, "test", hooks.threads); });

  if (hooks.artifacts) {
    hooks.artifacts->prior = prior_net;
    hooks.artifacts->posterior = post.net;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<PipelineConfig> GridSpec::expand(const PipelineConfig& base) const {
  std::vector<PipelineConfig> cells{base};
  auto axis = [&cells](const auto& values, auto&& apply) {
    if (values.empty()) return;
    std::vector<PipelineConfig> next;
    for (const auto& c : cells) {
      bool relevant = false;
      for (const auto& v : values) {
        PipelineConfig copy = c;
        if (apply(copy, v)) {
          relevant = true;
          next.push_back(std::move(copy));
        }
      }
      if (!relevant) next.push_back(c);
    }
    cells = std::move(next);
  };

  axis(prior_objective, [](PipelineConfig& c, const std::string& name) {
    if (name == "none") {
      c.prior.reset();
    } else {
      TrainConfig t = c.prior.value_or(TrainConfig{});
      t.objective = objective_from_string(name);
      c.prior = t;
    }
    return true;
  });
  axis(prior_fraction, [](PipelineConfig& c, double f) {
    c.plan.prior_fraction = f;
    return true;
  });
  axis(sigma0, [](PipelineConfig& c, double v) {
    c.posterior.sigma0 = v;
    if (c.prior) c.prior->sigma0 = v;
    return true;
  });
  axis(lr, [](PipelineConfig& c, double v) {
    c.posterior.lr = v;
    return true;
  });
  axis(momentum, [](PipelineConfig& c, double v) {
    c.posterior.momentum = v;
    return true;
  });
  axis(prior_lr, [](PipelineConfig& c, double v) {
    if (!c.prior) return false;
    c.prior->lr = v;
    return true;
  });
  axis(prior_momentum, [](PipelineConfig& c, double v) {
    if (!c.prior) return false;
    c.prior->momentum = v;
    return true;
  });
  axis(dropout_rate, [](PipelineConfig& c, double v) {
    if (!c.prior || c.prior->objective != Objective::erm_dropout) return false;
    c.prior->dropout_rate = v;
    return true;
  });
  axis(kl_coeff, [](PipelineConfig& c, double v) {
    if (!c.prior || (c.prior->objective != Objective::bbb && c.prior->objective != Objective::quad_prior)) return false;
    c.prior->kl_coeff = v;
    return true;
  });
  axis(mixup_alpha, [](PipelineConfig& c, double v) {
    if (!c.prior || c.prior->objective != Objective::mixup) return false;
    c.prior->mixup_alpha = v;
    return true;
  });
  axis(hidden_units, [](PipelineConfig& c, Index v) {
    c.arch.hidden_units = v;
    return true;
  });
  axis(depth, [](PipelineConfig& c, Index v) {
    c.arch.depth = v;
    return true;
  });
  axis(seeds, [](PipelineConfig& c, std::uint64_t v) {
    c.seed = v;
    return true;
  });

  // A zero prior fraction always means a data-free prior, and a positive one
  // needs a prior objective; contradictory cells are dropped, duplicates merged.
  std::vector<PipelineConfig> out;
  std::set<std::string> seen;
  for (auto& c : cells) {
    if (c.plan.prior_fraction == 0.0) c.prior.reset();
    if (c.plan.prior_fraction > 0.0 && !c.prior) continue;
    if (seen.insert(config_hash(c)).second) out.push_back(std::move(c));
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> read_axis(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<T>>();
}

}  // namespace

GridSpec grid_spec_from_json(const nlohmann::json& j) {
  try {
    GridSpec g;
    g.sigma0 = read_axis<double>(j, "sigma0");
    g.lr = read_axis<double>(j, "lr");
    g.momentum = read_axis<double>(j, "momentum");
    g.prior_lr = read_axis<double>(j, "prior_lr");
    g.prior_momentum = read_axis<double>(j, "prior_momentum");
    g.dropout_rate = read_axis<double>(j, "dropout_rate");
    g.kl_coeff = read_axis<double>(j, "kl_coeff");
    g.mixup_alpha = read_axis<double>(j, "mixup_alpha");
    g.prior_fraction = read_axis<double>(j, "prior_fraction");
    g.prior_objective = read_axis<std::string>(j, "prior_objective");
    g.hidden_units = read_axis<Index>(j, "hidden_units");
    g.depth = read_axis<Index>(j, "depth");
    g.seeds = read_axis<std::uint64_t>(j, "seeds");
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid spec: ") + e.what());
  }
}

nlohmann::json to_json(const GridSpec& g) {
  return {{"sigma0", g.sigma0},
          {"lr", g.lr},
          {"momentum", g.momentum},
          {"prior_lr", g.prior_lr},
          {"prior_momentum", g.prior_momentum},
          {"dropout_rate", g.dropout_rate},
          {"kl_coeff", g.kl_coeff},
          {"mixup_alpha", g.mixup_alpha},
          {"prior_fraction", g.prior_fraction},
          {"prior_objective", g.prior_objective},
          {"hidden_units", g.hidden_units},
          {"depth", g.depth},
          {"seeds", g.seeds}};
}

std::optional<std::size_t> select_best(const std::vector<RunRecord>& records) {
  std::optional<std::size_t> best;
  std::string best_key;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.failed || !std::isfinite(r.certificate.risk_bound)) continue;
    const std::string key = to_json(r.config).dump();
    if (!best) {
      best = i;
      best_key = key;
      continue;
    }
    const double a = r.certificate.risk_bound;
    const double b = records[*best].certificate.risk_bound;
    if (a < b || (a == b && key < best_key)) {
      best = i;
      best_key = key;
    }
  }
  return best;
}

GridResult run_grid(const Dataset& ds, const GridSpec& grid, const PipelineConfig& base, int parallelism,
                    const std::function<void(const RunRecord&)>& on_record) {
  const std::vector<PipelineConfig> cells = grid.expand(base);
  if (cells.empty()) throw ConfigError("grid expands to no cells");
  GridResult result;
  result.records.resize(cells.size());
  std::mutex report_mutex;
  parallel_for(cells.size(), parallelism, [&](std::size_t i) {
    RunRecord rec;
    try {
      rec = run_pipeline(ds, cells[i]);
    } catch (const std::exception& e) {
      rec = RunRecord{};
      rec.config = cells[i];
      rec.config_hash = config_hash(cells[i]);
      rec.seed = cells[i].seed;
      rec.failed = true;
      rec.error = e.what();
      if (const auto* se = dynamic_cast<const StageError*>(&e)) rec.failed_stage = se->stage();
    }
    result.records[i] = rec;
    if (on_record) {
      std::lock_guard lock(report_mutex);
      on_record(rec);
    }
  });
  result.best = select_best(result.records);
  return result;
}

nlohmann::json to_json(const ErmBaselineRecord& r) {
  return {{"dataset", r.dataset}, {"config", r.config},   {"seed", r.seed},           {"n_train", r.n_train},
          {"n_val", r.n_val},     {"n_test", r.n_test},   {"val_error", r.val_error}, {"test_error", r.test_error}};
}

ErmBaselineRecord run_erm_baseline(const Dataset& ds, const PartitionPlan& plan, const ArchSpec& arch,
                                   const TrainConfig& cfg, std::uint64_t seed, double val_fraction) {
  if (!is_deterministic(cfg.objective)) throw ConfigError("ERM baseline needs a deterministic objective");
  ds.validate();
  plan.validate();
  const SeededRng rng(seed);
  // Same test rows as run_pipeline for this seed.
  SeededRng test_rng = rng.child("partition").child("partition/test");
  IndexList test, s;
  if (plan.standard_split) {
    if (ds.predefined_test.empty()) throw ConfigError("standard split requested but dataset has none");
    test = ds.predefined_test;
    std::sort(test.begin(), test.end());
    std::vector<char> is_test(static_cast<std::size_t>(ds.size()), 0);
    for (Index i : test) is_test[static_cast<std::size_t>(i)] = 1;
    for (Index i = 0; i < ds.size(); ++i) {
      if (!is_test[static_cast<std::size_t>(i)]) s.push_back(i);
    }
  } else {
    std::tie(test, s) = stratified_split(ds, plan.test_fraction, test_rng);
  }
  SeededRng val_rng = rng.child("baseline/val");
  auto [val, train] = stratified_split(ds, s, val_fraction, val_rng);

  const Standardizer st = fit_standardizer(subset(ds, s).x);
  Dataset z = ds;
  z.x = apply_standardizer(st, ds.x);
  TrainConfig c = cfg;
  c.validate = true;
  SeededRng init_rng = rng.child("init");
  SeededRng train_rng = rng.child("prior");
  ProbNetwork init = init_network(network_dims(ds.features(), arch, ds.num_classes), c.sigma0, init_rng, Center::random);
  const PriorTrainResult res = train_prior_deterministic(subset(z, train), subset(z, val), std::move(init), c, train_rng);

  ErmBaselineRecord r;
  r.dataset = ds.name;
  r.config = to_json(c);
  r.config["arch"] = {{"hidden_units", arch.hidden_units}, {"depth", arch.depth}};
  r.seed = seed;
  r.n_train = static_cast<Index>(train.size());
  r.n_val = static_cast<Index>(val.size());
  r.n_test = static_cast<Index>(test.size());
  r.val_error = res.val.best_val_loss;
  r.test_error = mean_error(res.net, subset(z, test));
  return r;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "table_csv") return ReportFormat::table_csv;
  if (s == "records_json") return ReportFormat::records_json;
  if (s == "scatter_csv") return ReportFormat::scatter_csv;
  throw ConfigError("unknown report format '" + s + "'");
}

std::string prior_row_label(const PipelineConfig& c) {
  const long pct = std::lround(c.plan.prior_fraction * 100.0);
  if (pct == 0) return "Data-free (0%)";
  return "Data-depend. (" + std::to_string(pct) + "%)";
}

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string render_report(const std::vector<RunRecord>& records, ReportFormat format) {
  if (records.empty()) throw DataError("report: no records");
  std::ostringstream out;
  switch (format) {
    case ReportFormat::records_json: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : records) arr.push_back(to_json(r));
      out << arr.dump(2) << "\n";
      break;
    }
    case ReportFormat::scatter_csv: {
      out << "risk_cert,stoch_01,prior_mean_01,kl_per_n\n";
      for (const auto& r : records) {
        if (r.failed) continue;
        out << num(r.certificate.risk_bound) << "," << num(r.stoch_test_error) << "," << num(r.prior_mean_error) << ","
            << num(r.certificate.kl_per_n) << "\n";
      }
      break;
    }
    case ReportFormat::table_csv: {
      // One row per (dataset, prior fraction): the best certificate in the group.
      std::map<std::pair<std::string, double>, std::vector<RunRecord>> groups;
      for (const auto& r : records) groups[{r.config.dataset, r.config.plan.prior_fraction}].push_back(r);
      out << "setup,dataset,prior_objective,validated,n_cert,prior_mean_01,prior_stoch_01,stoch_01,mean_01,kl_per_n,"
             "risk_cert\n";
      for (const auto& [key, group] : groups) {
        const auto best = select_best(group);
        if (!best) continue;
        const RunRecord& r = group[*best];
        const std::string objective = r.config.prior ? to_string(r.config.prior->objective) : "none";
        const bool validated = r.config.posterior.validate && (!r.config.prior || r.config.prior->validate);
        out << csv_field(prior_row_label(r.config)) << "," << csv_field(r.config.dataset) << "," << objective << ","
            << (validated ? "yes" : "no") << "," << r.n_cert << "," << num(r.prior_mean_error) << ","
            << num(r.prior_stoch_error) << "," << num(r.stoch_test_error) << "," << num(r.mean_test_error) << ","
            << num(r.certificate.kl_per_n) << "," << num(r.certificate.risk_bound) << "\n";
      }
      break;
    }
  }
  return out.str();
}

void emit_report(const std::vector<RunRecord>& records, ReportFormat format, const std::string& path) {
  const std::string text = render_report(records, format);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path);
}

std::vector<RunRecord> load_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  std::vector<RunRecord> out;
  if (j.is_array()) {
    for (const auto& r : j) out.push_back(run_record_from_json(r));
  } else {
    out.push_back(run_record_from_json(j));
  }
  return out;
}

}  // namespace pacbayes
