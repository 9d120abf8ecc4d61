#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdsr/data/dataset.hpp"
#include "tdsr/detector/detector.hpp"
#include "tdsr/loss/loss.hpp"
#include "tdsr/models/sr_model.hpp"
#include "tdsr/train/train.hpp"

namespace tdsr::cli {

struct BackendConfig {
  std::string id = "toy";
  /// Empty means freshly initialised parameters (testing only).
  std::filesystem::path weights;
  double confidence_threshold = detector::kDefaultConfidenceThreshold;
};

/// A fully resolved experiment. Every field has a concrete value; to_json()
/// of a resolved config is the run snapshot and parses back to the same config.
struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  models::SrModelConfig model;
  train::TrainRegime regime;
  LossSet enabled_losses;
  loss::DwaConfig dwa;
  data::DatasetSpec data;
  train::OptimizerConfig optimizer;
  BackendConfig backend;
  std::filesystem::path output_dir = "runs";

  std::filesystem::path run_dir() const { return output_dir / name; }
  train::TrainSetup train_setup() const;
  void validate() const;
};

/// Absolute path of the bundled toy detector weights.
std::filesystem::path default_toy_weights();

/// Parses and resolves a config object. Unknown keys and wrongly typed values
/// are errors naming the field, e.g. "config field optimizer.batch_size: ...".
/// `seed_override` replaces the top-level seed before any derived value is resolved.
ExperimentConfig parse_experiment(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {});
nlohmann::json to_json(const ExperimentConfig& cfg);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// Object merge: keys of `patch` replace or recursively merge into `base`.
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch);

/// Matrix file: {"base": {...}, "rows": [{"name": ..., "init_from": ..., <overrides>}]}.
/// A row whose config does not resolve is kept with its error so the matrix can
/// report it while the other rows run.
struct MatrixEntry {
  std::string name;
  std::optional<ExperimentConfig> config;
  std::optional<std::string> init_from;
  std::string error;
};

struct MatrixConfig {
  ExperimentConfig base;
  std::vector<MatrixEntry> rows;
};

MatrixConfig parse_matrix(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {});
bool is_matrix(const nlohmann::json& j);

detector::DetectorBackend make_backend(const BackendConfig& cfg, std::uint64_t seed);

}  // namespace tdsr::cli
