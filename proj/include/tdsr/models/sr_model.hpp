#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"
#include "tdsr/nn/layers.hpp"

namespace tdsr::models {

enum class Arch { SRCNN, FSRCNN, SRRESNET };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

struct SrModelConfig {
  Arch arch = Arch::SRCNN;
  ScaleFactor scale{};
  int channels = 3;
  /// Shrinks every layer width; each scaled width must stay >= 1.
  double width_multiplier = 1.0;
  /// SRResNet only.
  int n_resblocks = 16;

  void validate() const;
  friend bool operator==(const SrModelConfig&, const SrModelConfig&) = default;
};

nlohmann::json to_json(const SrModelConfig& cfg);
SrModelConfig sr_config_from_json(const nlohmann::json& j);

/// Layer width after applying the multiplier. Throws if it rounds below 1.
int scaled_width(int base, double multiplier);

/// Architectures and their base widths:
///   SRCNN    bicubic pre-upsampling, 9-1-5 kernels, 64/32 filters, predicts a
///            residual on top of the upsampled input.
///   FSRCNN   d=56, s=12, m=4, PReLU, 9x9 transposed convolution at the end.
///   SRRESNET 64 filters, n_resblocks residual blocks, x2 pixel-shuffle stages.
/// Every architecture names its last layer "tail".
class SrModel {
 public:
  SrModel(SrModelConfig config, std::uint64_t seed, nn::Network net)
      : config_(config), seed_(seed), net_(std::move(net)) {}

  const SrModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamStore& params() { return net_.params; }
  const nn::ParamStore& params() const { return net_.params; }
  const nn::Network& network() const { return net_; }

  /// Unclamped super-resolution of an LR image.
  ImageTensor forward(const ImageTensor& lr) const;
  FeatureMap forward(const FeatureMap& lr, nn::Cache* cache) const;
  /// Backpropagates dL/d(output); accumulates parameter gradients and returns dL/d(input).
  FeatureMap backward(const nn::Cache& cache, const FeatureMap& grad_out, nn::Grads* grads) const;

  std::string describe() const { return net_.root->describe(); }

 private:
  SrModelConfig config_;
  std::uint64_t seed_;
  nn::Network net_;
};

/// Parameters are initialised deterministically from `seed`.
SrModel build_model(const SrModelConfig& config, std::uint64_t seed);

/// `meta` is stored alongside the config and seed (e.g. run name, loss set).
void save_checkpoint(const SrModel& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
SrModel load_checkpoint(const std::filesystem::path& path);
/// Reads only the header metadata of a model checkpoint.
nlohmann::json checkpoint_meta(const std::filesystem::path& path);

}  // namespace tdsr::models
