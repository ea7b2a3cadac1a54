// Command-line front end: single stages, full runs, sweeps, the ERM
// baseline and report emission.
//
// Layout under --out: runs/<config-hash>/record.json,
// runs/<config-hash>/checkpoints/{prior,posterior}.ckpt, reports/.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pacbayes/experiment.hpp"

using namespace pacbayes;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kStage = 4, kOther = 5 };

// Every flag is optional; only the ones given override the defaults.
struct Flags {
  std::string data, label = "label", dataset, config_path, out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> prior_fraction, test_fraction, prior_val_fraction, subsample;
  std::optional<bool> standard_split;
  std::optional<Index> hidden, depth;
  std::optional<std::string> prior_objective;
  std::optional<double> prior_lr, prior_momentum, dropout, mixup_alpha, kl_coeff, prior_sigma0;
  std::optional<int> prior_epochs;
  std::optional<double> sigma0, lr, momentum;
  std::optional<int> epochs, checkpoint_interval;
  std::optional<Index> batch, checkpoint_m, m;
  std::optional<double> delta, delta_prime, p_min, timeout;
  std::optional<int> test_draws;
  bool no_validation = false;
};

void add_common(CLI::App* cmd, Flags& f, bool seed_required) {
  cmd->add_option("--data", f.data, "tabular file, or a directory with the MNIST IDX files")->required();
  cmd->add_option("--label", f.label, "label column name for tabular data");
  cmd->add_option("--dataset", f.dataset, "dataset name recorded in outputs (default: file stem)");
  cmd->add_option("--config", f.config_path, "JSON pipeline config; its fields override flags");
  cmd->add_option("--out", f.out, "output root");
  auto* seed = cmd->add_option("--seed", f.seed, "master seed");
  if (seed_required) seed->required();

  cmd->add_option("--prior-fraction", f.prior_fraction);
  cmd->add_option("--test-fraction", f.test_fraction);
  cmd->add_option("--prior-val-fraction", f.prior_val_fraction);
  cmd->add_option("--subsample", f.subsample, "fraction of S kept before partitioning");
  cmd->add_option("--standard-split", f.standard_split, "use the dataset's published test split");
  cmd->add_option("--hidden", f.hidden, "hidden units per layer");
  cmd->add_option("--depth", f.depth, "number of hidden layers");

  cmd->add_option("--prior-objective", f.prior_objective, "erm, erm_dropout, mixup, bbb, quad_prior or none");
  cmd->add_option("--prior-lr", f.prior_lr);
  cmd->add_option("--prior-momentum", f.prior_momentum);
  cmd->add_option("--prior-epochs", f.prior_epochs);
  cmd->add_option("--dropout", f.dropout);
  cmd->add_option("--mixup-alpha", f.mixup_alpha);
  cmd->add_option("--kl-coeff", f.kl_coeff, "KL attenuation for probabilistic priors");
  cmd->add_option("--prior-sigma0", f.prior_sigma0, "pre-prior scale for probabilistic priors");

  cmd->add_option("--sigma0", f.sigma0, "prior scale");
  cmd->add_option("--lr", f.lr);
  cmd->add_option("--momentum", f.momentum);
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch", f.batch, "batch size for both training stages");
  cmd->add_option("--checkpoint-interval", f.checkpoint_interval);
  cmd->add_option("--checkpoint-m", f.checkpoint_m);
  cmd->add_option("--p-min", f.p_min);
  cmd->add_flag("--no-validation", f.no_validation, "disable prior validation and checkpoint selection");

  cmd->add_option("--m", f.m, "Monte-Carlo samples for the final certificate");
  cmd->add_option("--delta", f.delta);
  cmd->add_option("--delta-prime", f.delta_prime);
  cmd->add_option("--test-draws", f.test_draws);
  cmd->add_option("--timeout", f.timeout, "seconds per run, 0 disables");
}

template <typename T, typename U>
void set(const std::optional<T>& v, U& target) {
  if (v) target = *v;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_data(const Flags& f) {
  Dataset ds = fs::is_directory(f.data) ? load_mnist(f.data) : load_tabular(f.data, {f.label, -1, ','});
  ds.name = f.dataset.empty() ? fs::path(f.data).stem().string() : f.dataset;
  return ds;
}

PipelineConfig build_config(const Flags& f, const Dataset& ds) {
  PipelineConfig c;
  c.dataset = ds.name;
  set(f.seed, c.seed);
  set(f.prior_fraction, c.plan.prior_fraction);
  set(f.test_fraction, c.plan.test_fraction);
  set(f.prior_val_fraction, c.plan.prior_val_fraction);
  set(f.subsample, c.plan.subsample_fraction);
  set(f.standard_split, c.plan.standard_split);
  set(f.hidden, c.arch.hidden_units);
  set(f.depth, c.arch.depth);

  TrainConfig prior;
  prior.objective = Objective::erm_dropout;
  prior.dropout_rate = 0.1;
  prior.epochs = 500;
  if (f.prior_objective) {
    if (*f.prior_objective == "none") {
      c.prior.reset();
    } else {
      prior.objective = objective_from_string(*f.prior_objective);
    }
  }
  set(f.prior_lr, prior.lr);
  set(f.prior_momentum, prior.momentum);
  set(f.prior_epochs, prior.epochs);
  set(f.dropout, prior.dropout_rate);
  set(f.mixup_alpha, prior.mixup_alpha);
  set(f.prior_sigma0, prior.sigma0);
  set(f.batch, prior.batch_size);
  if (f.kl_coeff) prior.kl_coeff = *f.kl_coeff;
  prior.validate = !f.no_validation;
  if (!(f.prior_objective && *f.prior_objective == "none")) c.prior = prior;
  if (!c.prior) c.plan.prior_fraction = f.prior_fraction.value_or(0.0);

  set(f.sigma0, c.posterior.sigma0);
  set(f.lr, c.posterior.lr);
  set(f.momentum, c.posterior.momentum);
  set(f.epochs, c.posterior.epochs);
  set(f.batch, c.posterior.batch_size);
  set(f.checkpoint_interval, c.posterior.checkpoint_interval);
  set(f.checkpoint_m, c.posterior.checkpoint_m);
  set(f.p_min, c.posterior.p_min);
  set(f.delta, c.posterior.delta);
  set(f.delta_prime, c.posterior.delta_prime);
  c.posterior.validate = !f.no_validation;
  if (c.prior) {
    set(f.p_min, c.prior->p_min);
    set(f.delta, c.prior->delta);
    set(f.delta_prime, c.prior->delta_prime);
  }

  set(f.m, c.bound.m);
  set(f.delta, c.bound.delta);
  set(f.delta_prime, c.bound.delta_prime);
  set(f.test_draws, c.test_draws);
  set(f.timeout, c.timeout_seconds);
  if (!f.config_path.empty()) c = pipeline_config_from_json(read_json(f.config_path), c);
  if (f.seed) c.seed = *f.seed;
  c.validate(ds);
  return c;
}

int threads_from_env() {
  const char* t = std::getenv("PACBAYES_THREADS");
  return t ? std::max(1, std::atoi(t)) : 1;
}

fs::path run_dir(const Flags& f, const PipelineConfig& c) { return fs::path(f.out) / "runs" / config_hash(c); }

TrainHooks progress_hooks(const std::string& stage, bool verbose) {
  TrainHooks h;
  h.threads = threads_from_env();
  if (verbose) h.on_epoch = [stage](const EpochMetrics& m) { std::cerr << stage << " " << to_json(m).dump() << "\n"; };
  return h;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

int cmd_train_prior(const Flags& f, bool verbose) {
  const Dataset ds = load_data(f);
  const PipelineConfig c = build_config(f, ds);
  const PreparedData prep = prepare_data(ds, c);
  const PriorStage prior = build_prior(prep, c, progress_hooks("prior", verbose));
  const fs::path dir = run_dir(f, c);
  fs::create_directories(dir / "checkpoints");
  save_checkpoint(prior.prior.to_network(), (dir / "checkpoints" / "prior.ckpt").string());
  write_json(dir / "config.json", to_json(c));
  print({{"run_dir", dir.string()}, {"prior_val_error", prior.val_error}, {"sigma0", prior_sigma0(c)}});
  return kOk;
}

PriorRef load_prior(const fs::path& dir, const PipelineConfig& c) {
  return PriorRef(load_checkpoint((dir / "checkpoints" / "prior.ckpt").string()), prior_sigma0(c));
}

int cmd_train_posterior(const Flags& f, bool verbose) {
  const Dataset ds = load_data(f);
  const PipelineConfig c = build_config(f, ds);
  const fs::path dir = run_dir(f, c);
  const PreparedData prep = prepare_data(ds, c);
  const PriorRef prior = load_prior(dir, c);
  const PosteriorTrainResult post = fit_posterior(prep, c, prior, progress_hooks("posterior", verbose));
  save_checkpoint(post.net, (dir / "checkpoints" / "posterior.ckpt").string());
  json checkpoints = json::array();
  for (const auto& cp : post.checkpoints)
    checkpoints.push_back({{"epoch", cp.epoch}, {"risk_bound", cp.certificate.risk_bound}});
  print({{"run_dir", dir.string()}, {"selected_epoch", post.selected_epoch}, {"checkpoints", checkpoints}});
  return kOk;
}

int cmd_certify(const Flags& f) {
  const Dataset ds = load_data(f);
  const PipelineConfig c = build_config(f, ds);
  const fs::path dir = run_dir(f, c);
  const PreparedData prep = prepare_data(ds, c);
  const PriorRef prior = load_prior(dir, c);
  const ProbNetwork post = load_checkpoint((dir / "checkpoints" / "posterior.ckpt").string());
  const Certificate cert = certify_posterior(prep, c, post, prior, threads_from_env());
  const json j = certificate_to_json(cert, config_hash(c), c.seed);
  write_json(dir / "certificate.json", j);
  print(j);
  return kOk;
}

void save_record(const Flags& f, const RunRecord& r, const RunArtifacts* artifacts) {
  const fs::path dir = fs::path(f.out) / "runs" / r.config_hash;
  write_json(dir / "record.json", to_json(r));
  if (artifacts && !r.failed) {
    fs::create_directories(dir / "checkpoints");
    save_checkpoint(artifacts->prior, (dir / "checkpoints" / "prior.ckpt").string());
    save_checkpoint(artifacts->posterior, (dir / "checkpoints" / "posterior.ckpt").string());
  }
}

int cmd_run(const Flags& f, bool verbose) {
  const Dataset ds = load_data(f);
  const PipelineConfig c = build_config(f, ds);
  RunArtifacts artifacts;
  PipelineHooks hooks;
  hooks.threads = threads_from_env();
  hooks.artifacts = &artifacts;
  if (verbose) hooks.on_epoch = [](const std::string& s, const EpochMetrics& m) { std::cerr << s << " " << to_json(m).dump() << "\n"; };
  const RunRecord r = run_pipeline(ds, c, hooks);
  save_record(f, r, &artifacts);
  print(to_json(r));
  return kOk;
}

int cmd_sweep(const Flags& f, const std::string& grid_path, const std::string& report_name) {
  const Dataset ds = load_data(f);
  const PipelineConfig base = build_config(f, ds);
  GridSpec grid = grid_spec_from_json(read_json(grid_path));
  if (grid.seeds.empty()) grid.seeds = {base.seed};
  const GridResult res = run_grid(ds, grid, base, threads_from_env(), [&](const RunRecord& r) {
    save_record(f, r, nullptr);
    std::cerr << (r.failed ? "failed " : "done ") << r.config_hash
              << (r.failed ? " [" + r.failed_stage + "] " + r.error
                           : " risk=" + std::to_string(r.certificate.risk_bound))
              << "\n";
  });
  const fs::path reports = fs::path(f.out) / "reports";
  fs::create_directories(reports);
  emit_report(res.records, ReportFormat::records_json, (reports / (report_name + "-records.json")).string());
  emit_report(res.records, ReportFormat::table_csv, (reports / (report_name + "-table.csv")).string());
  emit_report(res.records, ReportFormat::scatter_csv, (reports / (report_name + "-scatter.csv")).string());
  json summary = {{"cells", res.records.size()}, {"reports", reports.string()}};
  if (res.best) summary["best"] = to_json(res.records[*res.best]);
  print(summary);
  return res.best ? kOk : kStage;
}

int cmd_baseline(const Flags& f, double val_fraction) {
  const Dataset ds = load_data(f);
  PipelineConfig c = build_config(f, ds);
  TrainConfig cfg = c.prior.value_or(TrainConfig{});
  if (!is_deterministic(cfg.objective)) throw ConfigError("baseline needs a deterministic prior objective");
  const ErmBaselineRecord r = run_erm_baseline(ds, c.plan, c.arch, cfg, c.seed, val_fraction);
  const fs::path path =
      fs::path(f.out) / "reports" / ("baseline-" + ds.name + "-" + std::to_string(c.seed) + ".json");
  write_json(path, to_json(r));
  print(to_json(r));
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, const std::string& output) {
  std::vector<RunRecord> records;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.path().filename() == "record.json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& p : files)
        for (auto& r : load_records(p.string())) records.push_back(std::move(r));
    } else {
      for (auto& r : load_records(in)) records.push_back(std::move(r));
    }
  }
  const ReportFormat fmt = report_format_from_string(format);
  if (output.empty()) {
    std::cout << render_report(records, fmt);
  } else {
    fs::create_directories(fs::path(output).parent_path().empty() ? "." : fs::path(output).parent_path());
    emit_report(records, fmt, output);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAC-Bayes training and risk certification for probabilistic neural networks"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "per-epoch metrics on stderr");

  Flags f;
  auto* train_prior = app.add_subcommand("train-prior", "train the prior and save its checkpoint");
  add_common(train_prior, f, true);
  auto* train_post = app.add_subcommand("train-posterior", "train the posterior from a saved prior");
  add_common(train_post, f, true);
  auto* certify = app.add_subcommand("certify", "certify a saved posterior with the full sample count");
  add_common(certify, f, true);
  auto* run = app.add_subcommand("run", "full pipeline: prior, posterior, certificate, test error");
  add_common(run, f, true);

  std::string grid_path, report_name = "sweep";
  auto* sweep = app.add_subcommand("sweep", "grid of pipelines; best cell by certificate");
  add_common(sweep, f, true);
  sweep->add_option("--grid", grid_path, "JSON grid specification")->required();
  sweep->add_option("--name", report_name, "report file prefix under reports/");

  double val_fraction = 0.05;
  auto* baseline = app.add_subcommand("baseline", "deterministic ERM network with a validation carve-out");
  add_common(baseline, f, true);
  baseline->add_option("--val-fraction", val_fraction);

  std::vector<std::string> inputs;
  std::string format = "table_csv", output;
  auto* report = app.add_subcommand("report", "render reports from saved records");
  report->add_option("inputs", inputs, "record files or directories searched for record.json")->required();
  report->add_option("--format", format, "table_csv, records_json or scatter_csv");
  report->add_option("--output", output, "file to write (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_prior) return cmd_train_prior(f, verbose);
    if (*train_post) return cmd_train_posterior(f, verbose);
    if (*certify) return cmd_certify(f);
    if (*run) return cmd_run(f, verbose);
    if (*sweep) return cmd_sweep(f, grid_path, report_name);
    if (*baseline) return cmd_baseline(f, val_fraction);
    if (*report) return cmd_report(inputs, format, output);
  } catch (const StageError& e) {
    std::cerr << "error [stage " << e.stage() << "]: " << e.what() << "\n";
    return kStage;
  } catch (const ConfigError& e) {
    std::cerr << "error [config]: " << e.what() << "\n";
    return kConfig;
  } catch (const ParameterError& e) {
    std::cerr << "error [config]: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "error [data]: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    std::cerr << "error [io]: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "error [format]: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
