#pragma once

#include <map>
#include <span>
#include <vector>

#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"
#include "tdsr/detector/detector.hpp"

namespace tdsr::loss {

/// Mean squared error between sr and hr. Writes dL/dsr into `grad` when non-null.
double l2_hr(const ImageTensor& sr, const ImageTensor& hr, ImageTensor* grad = nullptr);

/// MSE between the bicubic reduction of sr and lr. The reduction is the
/// unclamped linear operator so the loss stays differentiable everywhere.
double l2_lr(const ImageTensor& sr, const ImageTensor& lr, ScaleFactor s, ImageTensor* grad = nullptr);

/// Mean absolute difference. `target` is treated as a constant.
/// `grad` (same length, optional) receives sign(sr - target) / n.
double task_l1(std::span<const double> sr, std::span<const double> target, std::span<double> grad = {});
double task_l1(const FeatureMap& sr, const FeatureMap& target, FeatureMap* grad = nullptr);

/// Task distance over the concatenated coordinate and score taps.
double task_out_l1(const detector::DetectionOutput& sr, const detector::DetectionOutput& target,
                   FeatureMap* grad_coords = nullptr, FeatureMap* grad_scores = nullptr);

enum class DwaScope { All, TaskOnly };

struct DwaConfig {
  double temperature = 2.0;
  DwaScope scope = DwaScope::All;
  /// Floors epoch means at kLossFloor instead of rejecting a zero loss.
  bool guard = true;
};

inline constexpr double kLossFloor = 1e-12;

const char* to_string(DwaScope scope);
DwaScope parse_dwa_scope(const std::string& name);

/// Per-component loss history and current weights.
/// Components outside the balanced set (image losses under TaskOnly) keep weight 1.
class DwaState {
 public:
  DwaState() = default;
  DwaState(LossSet enabled, DwaConfig config);

  const LossSet& enabled() const { return enabled_; }
  const DwaConfig& config() const { return config_; }
  /// Components the weighting balances.
  LossSet balanced() const;
  int n_tasks() const { return balanced().size(); }
  double weight(LossComponentId id) const;
  const std::map<LossComponentId, double>& weights() const { return weights_; }
  const std::map<LossComponentId, std::vector<double>>& history() const { return history_; }
  int epochs_seen() const;

  friend DwaState dwa_update(const DwaState& state, const std::map<LossComponentId, double>& epoch_means);

 private:
  LossSet enabled_;
  DwaConfig config_;
  std::map<LossComponentId, std::vector<double>> history_;
  std::map<LossComponentId, double> weights_;
};

/// Appends one epoch of means and recomputes the weights:
///   r_i = L_i(t-1) / L_i(t-2)   (1 until two epochs are recorded)
///   w_i = N exp(r_i / T) / sum_j exp(r_j / T)
DwaState dwa_update(const DwaState& state, const std::map<LossComponentId, double>& epoch_means);

/// The weighting formula on its own.
std::vector<double> dwa_weights(std::span<const double> ratios, double temperature);

struct LossBreakdown {
  std::map<LossComponentId, double> values;
  std::map<LossComponentId, double> weights;
  LossSet enabled;
  double total = 0.0;
};

/// Gradients of the total with respect to sr, split by path: the direct image
/// part and the three detector taps of det_sr. Nothing is produced for targets.
struct LossGrads {
  ImageTensor image;
  FeatureMap deep, coords, scores;
};

/// Evaluates every enabled component and the weighted total.
/// det_target must carry is_target; det_sr must not.
LossBreakdown composite_loss(const ImageTensor& sr, const ImageTensor& hr, const ImageTensor& lr,
                             ScaleFactor s, const detector::DetectionOutput& det_sr,
                             const detector::DetectionOutput& det_target, const DwaState& state,
                             LossSet enabled, LossGrads* grads = nullptr);

/// Folds the tap gradients through the frozen detector and adds the image part.
ImageTensor gradient_wrt_sr(const LossGrads& grads, const detector::DetectorBackend& backend,
                            const detector::DetectorTape& tape);

}  // namespace tdsr::loss
