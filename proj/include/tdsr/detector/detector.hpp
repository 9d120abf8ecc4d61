#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"
#include "tdsr/nn/layers.hpp"

namespace tdsr::detector {

inline constexpr int kDeepChannels = 512;
inline constexpr int kAnchors = 10;
inline constexpr int kOutChannels = 2 * kAnchors;
inline constexpr double kDefaultConfidenceThreshold = 0.7;

/// Declared geometry of a backend's taps.
struct FeatureSpec {
  int stride = 4;             ///< input pixels per tap position
  int min_size = 16;          ///< smallest accepted input side
  double anchor_width = 4.0;  ///< width of a fine-scale proposal, in pixels
  std::vector<double> anchor_heights;
};

/// Boxes plus the three differentiable taps. Tap layout is channel-major:
/// deep_features (512, h', w'), out_coords and out_scores (20, h', w').
/// out_coords holds (dy, dlog h) per anchor; out_scores holds the
/// (background, text) softmax pair per anchor.
struct DetectionOutput {
  std::vector<BBox> boxes;
  std::vector<double> confidences;
  FeatureMap deep_features;
  FeatureMap out_coords;
  FeatureMap out_scores;
  /// Targets are constants for the loss: no gradient flows back through them.
  bool is_target = false;
};

/// Activations recorded by a differentiable forward pass.
struct DetectorTape {
  nn::Cache trunk, coords, scores;
  int in_h = 0, in_w = 0, in_c = 0;
};

/// A frozen text detector. Parameters never change after construction except
/// through mutable_params(), which only the fixture trainer uses.
class DetectorBackend {
 public:
  /// Small convolutional CTPN-style detector (stride 4) used at desk scale.
  static DetectorBackend toy(std::uint64_t seed);
  /// VGG16 trunk, 3x3 proposal window, column convolution in place of the
  /// BiLSTM, 512-wide fully connected tap, 10 anchors of width 16.
  static DetectorBackend ctpn_ref(std::uint64_t seed);
  /// Builds the backend named in the weights file and loads its parameters.
  static DetectorBackend load(const std::filesystem::path& path);
  static DetectorBackend by_name(const std::string& id, std::uint64_t seed);

  void save(const std::filesystem::path& path) const;

  const std::string& id() const { return id_; }
  const FeatureSpec& feature_spec() const { return spec_; }
  double confidence_threshold() const { return threshold_; }
  void set_confidence_threshold(double t);

  /// Taps plus decoded boxes.
  DetectionOutput detect(const ImageTensor& img) const;
  /// Taps only; records a tape when `tape` is non-null.
  DetectionOutput forward_taps(const ImageTensor& img, DetectorTape* tape) const;
  /// Maps tap gradients to an input-pixel gradient. Never touches parameters.
  ImageTensor backward_to_input(const DetectorTape& tape, const FeatureMap& grad_deep,
                                const FeatureMap& grad_coords, const FeatureMap& grad_scores) const;
  /// As backward_to_input but also accumulates parameter gradients (fixture training only).
  ImageTensor backward_with_params(const DetectorTape& tape, const FeatureMap& grad_deep,
                                   const FeatureMap& grad_coords, const FeatureMap& grad_scores,
                                   nn::Grads& grads) const;

  /// SHA-256 over parameter names, shapes and float32 values.
  std::string parameter_hash() const;

  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& mutable_params() { return params_; }

 private:
  DetectorBackend() = default;

  std::string id_;
  FeatureSpec spec_;
  double threshold_ = kDefaultConfidenceThreshold;
  std::uint64_t seed_ = 0;
  nn::ParamStore params_;
  nn::LayerPtr trunk_, coords_head_, scores_head_;
};

DetectionOutput detect(const DetectorBackend& backend, const ImageTensor& img);

/// detect() on the HR reference, flagged as a target.
DetectionOutput extract_targets(const DetectorBackend& backend, const ImageTensor& hr);

/// Anchor decoding, per-column suppression and linking of neighbouring strips
/// into text lines. `frame` is (height, width) of the detector input.
/// Confidences are per-line means of the linked strip scores.
std::pair<std::vector<BBox>, std::vector<double>> decode_boxes(const FeatureMap& out_coords,
                                                               const FeatureMap& out_scores,
                                                               double threshold,
                                                               const FeatureSpec& spec,
                                                               std::pair<int, int> frame);

/// Fine-scale proposal produced by one anchor before linking.
struct Proposal {
  BBox box;
  double score = 0.0;
  int column = 0;
};

/// Step 1 of decode_boxes: every anchor whose text score exceeds the threshold.
std::vector<Proposal> anchor_proposals(const FeatureMap& out_coords, const FeatureMap& out_scores,
                                       double threshold, const FeatureSpec& spec,
                                       std::pair<int, int> frame);

/// Strips in columns at most this far apart may be linked.
inline constexpr int kMaxLinkColumnGap = 2;

/// On-disk cache of extract_targets results, one file per sample id under
/// <root>/cache/targets/<backend-id>/. Taps are stored as float32; values
/// returned by get() are always the stored ones, whether freshly computed or
/// read back. Entries written for a different parameter hash or a different
/// HR image are recomputed.
class TargetCache {
 public:
  TargetCache(std::filesystem::path root, const DetectorBackend& backend);

  DetectionOutput get(const std::string& id, const ImageTensor& hr) const;
  std::filesystem::path path_of(const std::string& id) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  const DetectorBackend* backend_;
  std::string backend_hash_;
};

/// Container round trip used by the cache.
void save_detection(const DetectionOutput& det, const std::filesystem::path& path,
                    const nlohmann::json& meta);
DetectionOutput load_detection(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace tdsr::detector
