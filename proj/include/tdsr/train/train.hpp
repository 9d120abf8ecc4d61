#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdsr/data/dataset.hpp"
#include "tdsr/detector/detector.hpp"
#include "tdsr/loss/loss.hpp"
#include "tdsr/models/sr_model.hpp"
#include "tdsr/nn/layers.hpp"

namespace tdsr::train {

enum class RegimeKind { FromScratch, FineTune };

const char* to_string(RegimeKind kind);
RegimeKind parse_regime_kind(const std::string& name);

struct TrainRegime {
  static constexpr int kFromScratchEpochs = 60;
  static constexpr int kFineTuneEpochs = 100;

  RegimeKind kind = RegimeKind::FromScratch;
  int epochs = kFromScratchEpochs;
  std::optional<std::filesystem::path> init_checkpoint;

  static TrainRegime from_scratch(int epochs = kFromScratchEpochs);
  static TrainRegime fine_tune(std::filesystem::path checkpoint, int epochs = kFineTuneEpochs);
  void validate() const;
};

/// Adam. `clip_norm` <= 0 disables global-norm clipping.
struct OptimizerConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;

  static constexpr double kFineTuneLearningRate = 1e-5;
  void validate() const;
};

class Adam {
 public:
  Adam(const nn::ParamStore& params, const OptimizerConfig& cfg);
  /// One update from averaged gradients. Returns the gradient norm before clipping.
  /// Parameters are rounded to float32 afterwards.
  double step(nn::ParamStore& params, nn::Grads grads);
  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  nn::Grads m_, v_;
  long t_ = 0;
};

double global_norm(const nn::Grads& grads);

/// Everything that identifies one training run besides data and detector.
struct TrainSetup {
  models::SrModelConfig model;
  TrainRegime regime;
  LossSet enabled;
  loss::DwaConfig dwa;
  OptimizerConfig optimizer;
  /// Seed for model initialisation and batch order.
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::map<LossComponentId, double> means;
  /// Weights in force during the epoch.
  std::map<LossComponentId, double> weights;
  double total = 0.0;
  /// Mean component values on the validation documents (empty without validation data).
  std::map<LossComponentId, double> validation;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  std::string detector_hash;
  long steps = 0;
};

struct RunOptions {
  /// Run directory; empty keeps everything in memory.
  std::filesystem::path run_dir;
  /// Written to run_dir/config.snapshot when non-null.
  nlohmann::json config_snapshot;
  /// Root for the target cache; empty memoises targets in memory.
  std::filesystem::path cache_root;
  bool save_epoch_checkpoints = true;
  /// Stored in checkpoint metadata as "name".
  std::string run_name;
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Documents of `ds.train_ids` used for validation: round(10%) of them, seeded.
std::pair<std::vector<std::string>, std::vector<std::string>> validation_split(
    const std::vector<std::string>& train_ids, std::uint64_t seed);

/// Trains an SR model with the detector frozen. Throws on a non-finite loss
/// (naming the component), on a fine-tune checkpoint that does not match the
/// model config, or if the detector parameters change.
std::pair<models::SrModel, RunLog> train_run(const TrainSetup& setup, const data::PreparedDataset& ds,
                                             const detector::DetectorBackend& backend,
                                             const RunOptions& options = {});

/// Header plus one row per (epoch, component).
void write_metrics_csv(const RunLog& log, const std::filesystem::path& path);

/// One experiment of a matrix. `init_from` names another row whose final
/// checkpoint becomes this row's init_checkpoint.
struct MatrixRow {
  std::string name;
  TrainSetup setup;
  std::optional<std::string> init_from;
  nlohmann::json snapshot;
};

struct MatrixResult {
  std::string name;
  bool ok = false;
  std::string error;
  std::filesystem::path run_dir;
  RunLog log;
};

/// Runs every row under base_dir/<row name>. Rows run in dependency waves;
/// within a wave up to `jobs` rows run concurrently. A failing row is recorded
/// and the remaining rows still run (dependents of a failed row fail).
std::vector<MatrixResult> training_matrix(const std::vector<MatrixRow>& rows, const data::PreparedDataset& ds,
                                          const detector::DetectorBackend& backend,
                                          const std::filesystem::path& base_dir, int jobs = 1);

/// Consolidated matrix summary: name,status,epochs,final_total,error.
void write_matrix_summary(const std::vector<MatrixResult>& results, const std::filesystem::path& path);

}  // namespace tdsr::train
