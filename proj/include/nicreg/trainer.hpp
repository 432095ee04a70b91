#pragma once

// Two-stage training driver: stage one updates the codec on the regularized
// objective with the source model frozen, stage two fits the source model to
// the codec's detached reconstructions. Grids of (lambda, alpha, seed) runs
// are cached on disk under runs/<config hash>/.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nicreg/neural_codec.hpp"
#include "nicreg/source_regularizer.hpp"
#include "nicreg/sources.hpp"

namespace nicreg {

struct SourceModelSettings {
  std::size_t hidden = 32;
  ContextMode context = ContextMode::kFactorized;
};

struct TrainConfig {
  std::vector<double> lambdas{0.0018, 0.0035, 0.0067, 0.0130};
  std::vector<double> alphas{0.0, 0.1, 0.3, 1.0, 3.0};
  std::vector<std::uint64_t> seeds{1};
  std::uint64_t steps = 200000;
  std::size_t batch_size = 256;
  double codec_lr = 1e-4;
  double source_lr = 1e-3;
  std::uint64_t eval_every = 1000;
  std::size_t dataset_size = 40960;  // split 9:1 into train and held-out
  std::uint64_t stage2_period = 1;
  SourceConfig source;
  CodecArchitecture architecture;
  SourceModelSettings source_model;

  void validate() const;
  std::size_t eval_size() const { return dataset_size / 10; }
  std::size_t train_size() const { return dataset_size - eval_size(); }
};

nlohmann::json default_train_config_json();
nlohmann::json to_json(const TrainConfig& config);
// Strict: every key must exist in the default document.
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);
nlohmann::json read_config_file(const std::filesystem::path& path);

// Defaults, then `user` (strictly), then dotted overrides.
nlohmann::json resolve_config_json(const nlohmann::json& user,
                                   const std::vector<std::string>& overrides = {});

// Applies "a.b.c=value" to a config document. The value is parsed as JSON
// when possible and taken as a string otherwise; unknown paths are rejected.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// A single grid cell: the full config narrowed to one lambda, alpha and seed.
nlohmann::json run_config_json(const TrainConfig& config, double lambda, double alpha,
                               std::uint64_t seed);
std::string config_hash(const nlohmann::json& doc);

struct MetricRow {
  std::uint64_t step = 0;
  double rate_bpd = 0.0;
  double mse = 0.0;
  double quality_db = 0.0;
  double reg_bits = 0.0;  // NaN when no source model is trained (alpha == 0)
};

enum class RunStatus { kCompleted, kDiverged, kAborted, kFailed };
std::string to_string(RunStatus status);
RunStatus run_status_from_string(const std::string& s);

struct RunRecord {
  nlohmann::json config;
  std::string hash;
  double lambda = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;
  RunStatus status = RunStatus::kCompleted;
  std::string message;
  std::filesystem::path directory;   // empty when not persisted
  std::filesystem::path checkpoint;  // last good codec checkpoint
  bool cached = false;
  double wall_seconds = 0.0;

  const MetricRow& final_row() const;
  bool ok() const { return status == RunStatus::kCompleted; }
};

struct TrainOptions {
  std::filesystem::path output_root;  // runs go to output_root/runs/<hash>; empty = memory only
  std::string command_line = "nicreg";
  std::size_t jobs = 1;
  bool reuse_cache = true;
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(const RunRecord&)> on_run_done;
};

RunRecord train_one(const TrainConfig& config, double lambda, double alpha, std::uint64_t seed,
                    const TrainOptions& options = {});

std::vector<RunRecord> train_grid(const TrainConfig& config, const TrainOptions& options = {});

// Rebuilds a record from runs/<hash>/ (run.json + metrics.csv).
RunRecord load_run(const std::filesystem::path& run_dir);

std::string metrics_csv(const RunRecord& record, const std::string& command_line);
std::vector<MetricRow> parse_metrics_csv(const std::string& text);

// Shortest round-trip decimal, with NaN spelled "nan".
std::string format_number(double v);

}  // namespace nicreg
