#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pacbayes/certify.hpp"
#include "pacbayes/data.hpp"
#include "pacbayes/training.hpp"

namespace pacbayes {

// depth counts hidden layers, so {100, 2} on d inputs gives d-100-100-k.
struct ArchSpec {
  Index hidden_units = 100;
  Index depth = 2;
};

std::vector<Index> network_dims(Index inputs, const ArchSpec& arch, Index classes);

struct PipelineConfig {
  std::string dataset;
  PartitionPlan plan;
  ArchSpec arch;
  // Absent means a data-free prior built from prior_center; requires
  // plan.prior_fraction == 0.
  std::optional<TrainConfig> prior;
  TrainConfig posterior = posterior_defaults();
  BoundInputs bound;  // m, delta, delta_prime; KL and n_cert are filled in
  Center prior_center = Center::random;
  int test_draws = 10;
  std::uint64_t seed = 0;
  double timeout_seconds = 0.0;  // 0 disables the guard

  void validate(const Dataset& ds) const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

// 16 hex digits of FNV-1a over the canonical JSON form (seed included).
std::string config_hash(const PipelineConfig& c);

struct RunRecord {
  PipelineConfig config;
  std::string config_hash;
  std::uint64_t seed = 0;

  Index n_test = 0, n_prior_train = 0, n_prior_val = 0, n_cert = 0, n_s = 0;
  Index parameter_count = 0;

  double prior_val_error = std::numeric_limits<double>::quiet_NaN();
  double prior_stoch_error = std::numeric_limits<double>::quiet_NaN();
  double prior_mean_error = std::numeric_limits<double>::quiet_NaN();
  double stoch_test_error = std::numeric_limits<double>::quiet_NaN();
  double mean_test_error = std::numeric_limits<double>::quiet_NaN();
  Certificate certificate;
  int selected_epoch = 0;
  double wall_seconds = 0.0;

  bool failed = false;
  std::string failed_stage;
  std::string error;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

struct RunArtifacts {
  ProbNetwork prior;
  ProbNetwork posterior;
};

struct PipelineHooks {
  std::function<void(const std::string& stage, const EpochMetrics&)> on_epoch;
  int threads = 1;
  RunArtifacts* artifacts = nullptr;  // filled when non-null
};

// Pipeline stages. Each draws from its own child stream of cfg.seed, so
// running them one by one reproduces run_pipeline exactly.
struct PreparedData {
  Partition partition;
  Dataset data;  // all rows, standardized with statistics of S
};

struct PriorStage {
  PriorRef prior;
  double val_error = std::numeric_limits<double>::quiet_NaN();
};

PreparedData prepare_data(const Dataset& ds, const PipelineConfig& cfg);
// Scale the prior is frozen with: the pre-prior scale for probabilistic
// priors, otherwise the posterior's sigma0.
double prior_sigma0(const PipelineConfig& cfg);
PriorStage build_prior(const PreparedData& prep, const PipelineConfig& cfg, const TrainHooks& hooks = {});
PosteriorTrainResult fit_posterior(const PreparedData& prep, const PipelineConfig& cfg, const PriorRef& prior,
                                   const TrainHooks& hooks = {});
Certificate certify_posterior(const PreparedData& prep, const PipelineConfig& cfg, const ProbNetwork& posterior,
                              const PriorRef& prior, int threads = 1);
// (mean-network, stochastic) 01 error on the test rows.
std::pair<double, double> test_errors(const PreparedData& prep, const PipelineConfig& cfg, const ProbNetwork& net,
                                      const std::string& stream, int threads = 1);

// partition -> standardize on S -> prior -> posterior -> full-m certificate
// -> stochastic test error. Stage failures surface as StageError.
RunRecord run_pipeline(const Dataset& ds, const PipelineConfig& cfg, const PipelineHooks& hooks = {});

struct GridSpec {
  // An empty axis keeps the base configuration's value.
  std::vector<double> sigma0;
  std::vector<double> lr;
  std::vector<double> momentum;
  std::vector<double> prior_lr;
  std::vector<double> prior_momentum;
  std::vector<double> dropout_rate;
  std::vector<double> kl_coeff;
  std::vector<double> mixup_alpha;
  std::vector<double> prior_fraction;
  std::vector<std::string> prior_objective;  // "none" selects a data-free prior
  std::vector<Index> hidden_units;
  std::vector<Index> depth;
  std::vector<std::uint64_t> seeds;

  std::vector<PipelineConfig> expand(const PipelineConfig& base) const;
  std::size_t cardinality(const PipelineConfig& base) const { return expand(base).size(); }
};

GridSpec grid_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridSpec& g);

struct GridResult {
  std::vector<RunRecord> records;  // in expansion order
  std::optional<std::size_t> best;
};

// Lowest risk certificate among successful records; ties go to the
// lexicographically smallest canonical config.
std::optional<std::size_t> select_best(const std::vector<RunRecord>& records);

GridResult run_grid(const Dataset& ds, const GridSpec& grid, const PipelineConfig& base, int parallelism,
                    const std::function<void(const RunRecord&)>& on_record = {});

struct ErmBaselineRecord {
  std::string dataset;
  nlohmann::json config;
  std::uint64_t seed = 0;
  Index n_train = 0, n_val = 0, n_test = 0;
  double val_error = 0.0;
  double test_error = 0.0;
};

nlohmann::json to_json(const ErmBaselineRecord& r);

// Deterministic network on S minus a 5% stratified validation carve-out.
ErmBaselineRecord run_erm_baseline(const Dataset& ds, const PartitionPlan& plan, const ArchSpec& arch,
                                   const TrainConfig& cfg, std::uint64_t seed, double val_fraction = 0.05);

enum class ReportFormat { table_csv, records_json, scatter_csv };

ReportFormat report_format_from_string(const std::string& s);
std::string prior_row_label(const PipelineConfig& c);
std::string render_report(const std::vector<RunRecord>& records, ReportFormat format);
void emit_report(const std::vector<RunRecord>& records, ReportFormat format, const std::string& path);
std::vector<RunRecord> load_records(const std::string& path);

}  // namespace pacbayes
