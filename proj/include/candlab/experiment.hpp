#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "candlab/noise.hpp"
#include "candlab/trainer.hpp"

namespace candlab {

struct SyntheticSource {
  int num_classes = 10;
  std::size_t clean_per_class = 4;
  std::size_t noisy_per_class = 40;
  std::size_t test_per_class = 10;
  int height = 16;
  int width = 16;
  int channels = 3;
};

enum class StopRule { holdout, clean };

/// Declarative description of an end-to-end run: datasets, noise on the noisy
/// pool, train/test deduplication, featurization, and a (ratio, fraction)
/// mixing sweep whose early-stopped test accuracies go to summary.csv.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::size_t threads = 0;

  // Either all of clean/noisy/test paths, or a synthetic source.
  std::filesystem::path clean_path;
  std::filesystem::path noisy_path;
  std::filesystem::path test_path;
  std::optional<SyntheticSource> synthetic;

  int filters = 64;
  int kernel = 5;
  int pool_grid = 3;

  TrainConfig train;

  std::optional<NoiseSpec> noise;  // empty: noisy pool used as given

  std::vector<double> fractions{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<int> ratios{1, 10};

  int dedup_k = 0;  // 0 disables deduplication

  StopRule stop_rule = StopRule::holdout;
  double tau = 0.99;

  void validate() const;
};

/// Parses the JSON config; relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_to_json(const ExperimentConfig& config);

struct ExperimentRow {
  int ratio = 0;
  double fraction = 0.0;
  std::size_t train_size = 0;
  std::size_t clean_kept = 0;
  std::size_t noisy_added = 0;
  long stop_iteration = 0;
  double stop_test_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  double final_train_accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  std::size_t dedup_removed = 0;
  Eigen::Index feature_dim = 0;
};

/// Runs the pipeline and writes effective_config.json, summary.csv,
/// curves/, and the dedup and noise artifacts into config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

void write_summary_csv(const std::vector<ExperimentRow>& rows, const std::filesystem::path& path);

}  // namespace candlab
