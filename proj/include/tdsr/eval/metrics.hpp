#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"
#include "tdsr/data/dataset.hpp"
#include "tdsr/detector/detector.hpp"
#include "tdsr/models/sr_model.hpp"

namespace tdsr::eval {

/// Returned by psnr() when the MSE is below kPsnrExactMse.
inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrExactMse = 1e-10;

/// 10 log10(1 / MSE) over all pixels and channels, for images in [0,1].
double psnr(const ImageTensor& a, const ImageTensor& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean local SSIM over the valid window positions. Three-channel input is
/// converted to luminance first.
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opts = {});

/// Feature network for a learned perceptual distance.
class PerceptualPlugin {
 public:
  virtual ~PerceptualPlugin() = default;
  virtual std::string name() const = 0;
  /// One feature map per layer.
  virtual std::vector<FeatureMap> features(const ImageTensor& img) const = 0;
  /// One non-negative weight per layer.
  virtual std::vector<double> layer_weights() const = 0;
};

/// Single layer holding the image itself with weight 1.
class IdentityPlugin : public PerceptualPlugin {
 public:
  std::string name() const override { return "identity"; }
  std::vector<FeatureMap> features(const ImageTensor& img) const override;
  std::vector<double> layer_weights() const override { return {1.0}; }
};

/// Sum over layers of weight x spatial mean of the squared difference between
/// channel-normalised features. nullopt when no plugin is installed.
std::optional<double> perceptual_distance(const ImageTensor& a, const ImageTensor& b,
                                          const PerceptualPlugin* plugin);

enum class IouMode { Mask, Matched };
const char* to_string(IouMode mode);
IouMode parse_iou_mode(const std::string& name);

/// Binary mask of the union of boxes; a pixel belongs to a box when its center does.
std::vector<std::uint8_t> rasterize(const std::vector<BBox>& boxes, std::pair<int, int> frame);

/// Mask mode: IoU of the two rasterised unions. Matched mode: greedy one-to-one
/// matching by box IoU, summed matched IoU divided by the larger box count.
/// Both empty gives 1, exactly one empty gives 0.
double detection_iou(const std::vector<BBox>& boxes_sr, const std::vector<BBox>& boxes_hr,
                     std::pair<int, int> frame, IouMode mode = IouMode::Mask);

/// IoU of two single boxes.
double box_iou(const BBox& a, const BBox& b);

struct FeatureDistances {
  double deep_x100 = 0.0;
  double out_x100 = 0.0;
};

/// The training task distances between SR and HR detections, times 100.
FeatureDistances feature_distance_report(const detector::DetectionOutput& det_sr,
                                         const detector::DetectionOutput& det_hr);

struct ReportRow {
  std::string model;
  LossSet losses;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<double> lpips;
  double iou = 0.0;
  double ctpn_deep_x100 = 0.0;
  double ctpn_out_x100 = 0.0;
};

struct MetricReport {
  std::string dataset;
  IouMode iou_mode = IouMode::Mask;
  std::vector<ReportRow> rows;
};

inline constexpr const char* kReportHeader =
    "model,losses,psnr_db,ssim,lpips,iou,ctpn_deep_x100,ctpn_out_x100,best_flags";

/// Metric names in report column order.
const std::vector<std::string>& metric_columns();

/// For each row, the metric columns in which it attains the best value
/// (max for psnr/ssim/iou, min for lpips and the feature distances). Ties all count.
std::vector<std::vector<std::string>> best_flags(const std::vector<ReportRow>& rows);

std::string report_csv(const MetricReport& report);
std::string report_text(const MetricReport& report);
/// Writes dir/<dataset>.csv and dir/<dataset>.txt.
void render_report(const MetricReport& report, const std::filesystem::path& dir);
/// Reads back a CSV written by report_csv (used to merge per-model rows).
std::vector<ReportRow> parse_report_csv(const std::string& text);

struct SampleResult {
  std::string id;
  double psnr_db = 0.0, ssim = 0.0, iou = 0.0;
  std::optional<double> lpips;
  FeatureDistances distances;
};

struct EvalOptions {
  IouMode iou_mode = IouMode::Mask;
  /// Uses the HR image in place of the SR output.
  bool identity_bypass = false;
  const PerceptualPlugin* plugin = nullptr;
  /// Side-by-side panels are written here when non-empty, one PNG per sample.
  std::filesystem::path panel_dir;
};

/// Super-resolves every test patch, scores it and averages the scores into one row.
ReportRow evaluate_model(const models::SrModel& model, const data::PreparedDataset& ds,
                         const detector::DetectorBackend& backend, const EvalOptions& options,
                         std::vector<SampleResult>* per_sample = nullptr);

/// LR (nearest-neighbour enlarged), SR and HR side by side, with the SR and HR
/// detections outlined in red. Always three channels.
ImageTensor make_panel(const ImageTensor& lr, const ImageTensor& sr, const ImageTensor& hr,
                       const std::vector<BBox>& sr_boxes, const std::vector<BBox>& hr_boxes, ScaleFactor s);

}  // namespace tdsr::eval
