#pragma once

// Experiment configuration and end-to-end orchestration: data, teacher
// pre-training, supernet training, search and report emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmsearch/baselines.hpp"
#include "nmsearch/checkpoint.hpp"
#include "nmsearch/dataset.hpp"
#include "nmsearch/errors.hpp"
#include "nmsearch/evo_search.hpp"
#include "nmsearch/search_space.hpp"
#include "nmsearch/supernet.hpp"

namespace nmsearch {

inline constexpr int kSchemaVersion = 1;

struct DataConfig {
  enum class Source { synthetic, csv };
  Source source = Source::synthetic;
  // synthetic
  std::size_t n = 768;
  double noise = 0.1;
  // csv
  std::string path;
  double feature_max = 1.0;
  // split sizes, drawn without overlap after a seeded shuffle
  std::size_t train = 512;
  std::size_t proxy = 128;
  std::size_t test = 128;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ArchSpec arch;
  std::vector<SparsityLevel> levels;
  double c_upper_fraction = 0.6;
  std::size_t cost_levels = 9;  // interval boundaries; cost_levels - 1 intervals
  DataConfig data;
  DenseTrainConfig pretrain;
  TrainConfig train;
  FilterConfig filter;
  EvoConfig evo;
  std::optional<double> flops_budget_fraction;  // of dense FLOPs
  std::vector<double> er_targets{0.5, 0.625, 0.75};
  std::string output_dir = "out";
  std::size_t threads = 1;

  // Strict parse: schema_version must be 1, seed is required and unknown
  // keys anywhere raise ConfigError. Sub-seeds are derived from `seed`.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Sets the master seed and re-derives every stage seed from it.
  void set_seed(std::uint64_t seed);

  // Canonical form with every default filled in; round-trips through
  // from_json.
  nlohmann::json to_json() const;

  // FNV-1a 64 over the canonical JSON without output_dir and threads,
  // as 16 hex digits.
  std::string hash() const;

  SearchSpace space() const;
  CostIntervals intervals() const;
  void validate() const;
};

struct ExperimentData {
  Dataset train;
  Dataset proxy;
  Dataset test;
};

ExperimentData prepare_data(const ExperimentConfig& cfg);

DenseModel pretrain_teacher(const ExperimentConfig& cfg, const ExperimentData& data);

struct SupernetRun {
  Supernet net;
  TrainingLog log;
};

SupernetRun train_supernet(const ExperimentConfig& cfg, const DenseModel& teacher,
                           const ExperimentData& data, const TrainConfig& train);

// Search with fitness = proxy-set accuracy of inherited subnets.
SearchResult search_supernet(const ExperimentConfig& cfg, const Supernet& net,
                             const ChoiceProbabilityTable& table, const ExperimentData& data);

ChoiceProbabilityTable table_from_json(const SearchSpace& space, const std::string& text);

// An error raised inside a named stage of a run.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string cause_kind, const std::string& what)
      : Error(std::move(cause_kind), "stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

enum class Mode {
  pretrain,
  train_supernet,
  search,
  run,
  ablation_sampling,
  ablation_filter,
  compare_er,
  compare_estimator,
};
Mode parse_mode(const std::string& text);
const char* to_string(Mode mode);

struct RunSummary {
  std::filesystem::path output_dir;
  std::vector<std::string> artifacts;
  std::string config_hash;
};

// Runs `mode`, writing artifacts under cfg.output_dir plus manifest.json.
// Stages that need earlier results reuse teacher.ckpt / supernet.ckpt /
// probability_table.json from the output directory when present. On
// failure the manifest is written with status "failed" and the list of
// partial artifacts, then a StageError is thrown.
RunSummary run_experiment(const ExperimentConfig& cfg, Mode mode);

}  // namespace nmsearch
