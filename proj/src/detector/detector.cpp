#include "tdsr/detector/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "tdsr/core/error.hpp"
#include "tdsr/core/hash.hpp"
#include "tdsr/io/container.hpp"

namespace tdsr::detector {

namespace {

constexpr const char* kWeightsKind = "detector";

std::vector<double> geometric_heights(double lo, double hi) {
  std::vector<double> h(kAnchors);
  for (int k = 0; k < kAnchors; ++k) h[k] = lo * std::pow(hi / lo, k / static_cast<double>(kAnchors - 1));
  return h;
}

// Vertical IoU of two strips.
double vertical_iou(const BBox& a, const BBox& b) {
  const double inter = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double uni = (a.y1 - a.y0) + (b.y1 - b.y0) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double vertical_overlap_ratio(const BBox& a, const BBox& b) {
  const double inter = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double shorter = std::min(a.y1 - a.y0, b.y1 - b.y0);
  return shorter > 0 ? inter / shorter : 0.0;
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) i = parent[i] = parent[parent[i]];
  return i;
}

void check_tap_shapes(const FeatureMap& coords, const FeatureMap& scores) {
  if (coords.channels() != kOutChannels || scores.channels() != kOutChannels)
    throw Error("output taps must have " + std::to_string(kOutChannels) + " channels");
  if (coords.height() != scores.height() || coords.width() != scores.width())
    throw Error("coordinate and score taps differ in shape");
}

}  // namespace

DetectorBackend DetectorBackend::toy(std::uint64_t seed) {
  DetectorBackend b;
  b.id_ = "toy";
  b.seed_ = seed;
  b.spec_ = {4, 16, 4.0, geometric_heights(4.0, 32.0)};
  auto& p = b.params_;
  b.trunk_ = nn::sequential({
      nn::to_channels(1), nn::subtract_global_mean(),
      nn::conv2d(p, "conv1", 1, 16, 3), nn::relu(), nn::avg_pool2(),
      nn::conv2d(p, "conv2", 16, 32, 3), nn::relu(), nn::avg_pool2(),
      nn::conv2d(p, "conv3", 32, 32, 3), nn::relu(),
      nn::conv2d(p, "rpn_conv", 32, 32, 3), nn::relu(),
      nn::conv2d(p, "column_conv", 32, 64, 1, 7), nn::relu(),
      nn::conv2d(p, "fc", 64, kDeepChannels, 1), nn::relu(),
  });
  b.coords_head_ = nn::conv2d(p, "coords", kDeepChannels, kOutChannels, 1, 0.1);
  b.scores_head_ = nn::sequential({nn::conv2d(p, "scores", kDeepChannels, kOutChannels, 1, 0.1),
                                   nn::pair_softmax()});
  nn::init_params(p, seed);
  return b;
}

DetectorBackend DetectorBackend::ctpn_ref(std::uint64_t seed) {
  DetectorBackend b;
  b.id_ = "ctpn-ref";
  b.seed_ = seed;
  b.spec_ = {16, 16, 16.0, {11, 16, 23, 33, 48, 68, 97, 139, 198, 283}};
  auto& p = b.params_;
  // 8-bit scale and mean subtraction as expected by VGG weights.
  std::vector<nn::LayerPtr> layers = {nn::to_channels(3), nn::affine(255.0, -114.8)};
  const int widths[5] = {64, 128, 256, 512, 512};
  const int depth[5] = {2, 2, 3, 3, 3};
  int in_c = 3;
  for (int stage = 0; stage < 5; ++stage) {
    for (int i = 0; i < depth[stage]; ++i) {
      const std::string name = "conv" + std::to_string(stage + 1) + "_" + std::to_string(i + 1);
      layers.push_back(nn::conv2d(p, name, in_c, widths[stage], 3));
      layers.push_back(nn::relu());
      in_c = widths[stage];
    }
    if (stage < 4) layers.push_back(nn::max_pool2());
  }
  layers.push_back(nn::conv2d(p, "rpn_conv", 512, 512, 3));
  layers.push_back(nn::relu());
  layers.push_back(nn::conv2d(p, "column_conv", 512, 256, 1, 9));
  layers.push_back(nn::relu());
  layers.push_back(nn::conv2d(p, "fc", 256, kDeepChannels, 1));
  layers.push_back(nn::relu());
  b.trunk_ = nn::sequential(std::move(layers));
  b.coords_head_ = nn::conv2d(p, "coords", kDeepChannels, kOutChannels, 1, 0.1);
  b.scores_head_ = nn::sequential({nn::conv2d(p, "scores", kDeepChannels, kOutChannels, 1, 0.1),
                                   nn::pair_softmax()});
  nn::init_params(p, seed);
  return b;
}

DetectorBackend DetectorBackend::by_name(const std::string& id, std::uint64_t seed) {
  if (id == "toy") return toy(seed);
  if (id == "ctpn-ref") return ctpn_ref(seed);
  throw Error("unknown detector backend '" + id + "' (expected toy or ctpn-ref)");
}

DetectorBackend DetectorBackend::load(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path);
  if (c.kind != kWeightsKind) throw Error("not a detector weights file: " + path.string());
  DetectorBackend b = by_name(c.meta.at("backend").get<std::string>(), c.meta.value("seed", 0ULL));
  b.set_confidence_threshold(c.meta.value("confidence_threshold", kDefaultConfidenceThreshold));
  for (auto& param : b.params_.items()) {
    const auto& a = c.get(param.name);
    if (a.shape != param.shape) throw Error("detector weights shape mismatch for " + param.name);
    param.value = a.values;
  }
  if (static_cast<int>(c.arrays.size()) != b.params_.size())
    throw Error("detector weights file has unexpected arrays");
  return b;
}

void DetectorBackend::save(const std::filesystem::path& path) const {
  io::Container c;
  c.kind = kWeightsKind;
  c.meta = {{"backend", id_}, {"confidence_threshold", threshold_}, {"seed", seed_}};
  for (const auto& param : params_.items())
    c.arrays.push_back({param.name, param.shape, io::DType::F32, param.value});
  io::write_container(c, path);
}

void DetectorBackend::set_confidence_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error("confidence threshold must lie in [0,1]");
  threshold_ = t;
}

DetectionOutput DetectorBackend::forward_taps(const ImageTensor& img, DetectorTape* tape) const {
  if (img.height() < spec_.min_size || img.width() < spec_.min_size)
    throw Error("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                " is too small for detector '" + id_ + "': minimum is " +
                std::to_string(spec_.min_size) + "x" + std::to_string(spec_.min_size));
  const FeatureMap x = to_feature_map(img);
  DetectionOutput out;
  out.deep_features = trunk_->forward(params_, x, tape ? &tape->trunk : nullptr);
  out.out_coords = coords_head_->forward(params_, out.deep_features, tape ? &tape->coords : nullptr);
  out.out_scores = scores_head_->forward(params_, out.deep_features, tape ? &tape->scores : nullptr);
  if (tape) {
    tape->in_h = img.height();
    tape->in_w = img.width();
    tape->in_c = img.channels();
  }
  return out;
}

ImageTensor DetectorBackend::backward_with_params(const DetectorTape& tape, const FeatureMap& grad_deep,
                                                  const FeatureMap& grad_coords,
                                                  const FeatureMap& grad_scores, nn::Grads& grads) const {
  FeatureMap g = grad_deep;
  auto add = [&g](FeatureMap part) {
    if (g.size() == 0)
      g = std::move(part);
    else
      g += part;
  };
  if (grad_coords.size() > 0) add(coords_head_->backward(params_, tape.coords, grad_coords, &grads));
  if (grad_scores.size() > 0) add(scores_head_->backward(params_, tape.scores, grad_scores, &grads));
  if (g.size() == 0) return ImageTensor(tape.in_h, tape.in_w, tape.in_c);
  return to_image(trunk_->backward(params_, tape.trunk, g, &grads));
}

ImageTensor DetectorBackend::backward_to_input(const DetectorTape& tape, const FeatureMap& grad_deep,
                                               const FeatureMap& grad_coords,
                                               const FeatureMap& grad_scores) const {
  FeatureMap g = grad_deep;
  auto add = [&g](FeatureMap part) {
    if (g.size() == 0)
      g = std::move(part);
    else
      g += part;
  };
  if (grad_coords.size() > 0) add(coords_head_->backward(params_, tape.coords, grad_coords, nullptr));
  if (grad_scores.size() > 0) add(scores_head_->backward(params_, tape.scores, grad_scores, nullptr));
  if (g.size() == 0) return ImageTensor(tape.in_h, tape.in_w, tape.in_c);
  return to_image(trunk_->backward(params_, tape.trunk, g, nullptr));
}

DetectionOutput DetectorBackend::detect(const ImageTensor& img) const {
  DetectionOutput out = forward_taps(img, nullptr);
  std::tie(out.boxes, out.confidences) =
      decode_boxes(out.out_coords, out.out_scores, threshold_, spec_, {img.height(), img.width()});
  return out;
}

std::string DetectorBackend::parameter_hash() const {
  Sha256 sha;
  sha.update(id_);
  for (const auto& p : params_.items()) {
    sha.update(p.name);
    for (int d : p.shape) sha.update(std::to_string(d) + ",");
    std::vector<unsigned char> bytes;
    bytes.reserve(p.value.size() * 4);
    for (double v : p.value) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
    sha.update(bytes);
  }
  return sha.hex_digest();
}

DetectionOutput detect(const DetectorBackend& backend, const ImageTensor& img) {
  return backend.detect(img);
}

DetectionOutput extract_targets(const DetectorBackend& backend, const ImageTensor& hr) {
  DetectionOutput out = backend.detect(hr);
  out.is_target = true;
  return out;
}

std::vector<Proposal> anchor_proposals(const FeatureMap& out_coords, const FeatureMap& out_scores,
                                       double threshold, const FeatureSpec& spec,
                                       std::pair<int, int> frame) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("confidence threshold must lie in [0,1]");
  check_tap_shapes(out_coords, out_scores);
  if (static_cast<int>(spec.anchor_heights.size()) != kAnchors) throw Error("feature spec needs 10 anchors");
  std::vector<Proposal> props;
  for (int c = 0; c < out_scores.width(); ++c)
    for (int r = 0; r < out_scores.height(); ++r)
      for (int k = 0; k < kAnchors; ++k) {
        const double score = out_scores.at(2 * k + 1, r, c);
        if (!(score > threshold)) continue;
        const double ha = spec.anchor_heights[k];
        const double cy = (r + 0.5) * spec.stride + out_coords.at(2 * k, r, c) * ha;
        const double h = ha * std::exp(std::clamp(out_coords.at(2 * k + 1, r, c), -4.0, 4.0));
        const double x0 = c * spec.stride + 0.5 * (spec.stride - spec.anchor_width);
        BBox box = clip_box({x0, cy - 0.5 * h, x0 + spec.anchor_width, cy + 0.5 * h}, frame.first,
                            frame.second);
        if (!box.valid()) continue;
        props.push_back({box, score, c});
      }
  return props;
}

std::pair<std::vector<BBox>, std::vector<double>> decode_boxes(const FeatureMap& out_coords,
                                                               const FeatureMap& out_scores,
                                                               double threshold,
                                                               const FeatureSpec& spec,
                                                               std::pair<int, int> frame) {
  auto props = anchor_proposals(out_coords, out_scores, threshold, spec, frame);

  // Per-column suppression: strongest strip first, drop strips that mostly repeat it.
  std::stable_sort(props.begin(), props.end(), [](const Proposal& a, const Proposal& b) {
    if (a.column != b.column) return a.column < b.column;
    return a.score > b.score;
  });
  std::vector<Proposal> kept;
  for (const auto& p : props) {
    bool suppressed = false;
    for (auto it = kept.rbegin(); it != kept.rend() && it->column == p.column; ++it)
      if (vertical_iou(it->box, p.box) >= 0.5) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(p);
  }

  // Link strips in nearby columns that share most of their vertical extent.
  std::vector<int> parent(kept.size());
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      const int gap = std::abs(kept[i].column - kept[j].column);
      if (gap == 0 || gap > kMaxLinkColumnGap) continue;
      if (vertical_overlap_ratio(kept[i].box, kept[j].box) < 0.5) continue;
      parent[find_root(parent, static_cast<int>(i))] = find_root(parent, static_cast<int>(j));
    }

  struct Line {
    BBox box;
    double score_sum = 0.0;
    int n = 0;
  };
  std::vector<int> line_of(kept.size(), -1);
  std::vector<Line> lines;
  std::vector<int> root_to_line(kept.size(), -1);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const int root = find_root(parent, static_cast<int>(i));
    if (root_to_line[root] < 0) {
      root_to_line[root] = static_cast<int>(lines.size());
      lines.push_back({kept[i].box, 0.0, 0});
    }
    Line& line = lines[root_to_line[root]];
    line.box.x0 = std::min(line.box.x0, kept[i].box.x0);
    line.box.y0 = std::min(line.box.y0, kept[i].box.y0);
    line.box.x1 = std::max(line.box.x1, kept[i].box.x1);
    line.box.y1 = std::max(line.box.y1, kept[i].box.y1);
    line.score_sum += kept[i].score;
    ++line.n;
  }
  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    return a.box.x0 < b.box.x0;
  });
  std::pair<std::vector<BBox>, std::vector<double>> out;
  for (const auto& l : lines) {
    out.first.push_back(l.box);
    out.second.push_back(l.score_sum / l.n);
  }
  return out;
}

}  // namespace tdsr::detector

namespace tdsr::detector {

namespace {

io::ArrayRecord tap_record(const std::string& name, const FeatureMap& fm) {
  return {name, {fm.channels(), fm.height(), fm.width()}, io::DType::F32, fm.storage()};
}

FeatureMap tap_from(const io::ArrayRecord& a) {
  if (a.shape.size() != 3) throw Error("corrupt checkpoint: tap '" + a.name + "' is not 3-D");
  FeatureMap fm(a.shape[0], a.shape[1], a.shape[2]);
  fm.storage() = a.values;
  return fm;
}

std::string image_digest(const ImageTensor& img) {
  Sha256 sha;
  sha.update(std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
             std::to_string(img.channels()));
  std::vector<unsigned char> bytes;
  bytes.reserve(img.values().size() * 8);
  for (double v : img.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  sha.update(bytes);
  return sha.hex_digest();
}

}  // namespace

void save_detection(const DetectionOutput& det, const std::filesystem::path& path,
                    const nlohmann::json& meta) {
  io::Container c;
  c.kind = "detection_targets";
  c.meta = meta;
  c.arrays.push_back(tap_record("deep_features", det.deep_features));
  c.arrays.push_back(tap_record("out_coords", det.out_coords));
  c.arrays.push_back(tap_record("out_scores", det.out_scores));
  std::vector<double> boxes;
  for (const auto& b : det.boxes) boxes.insert(boxes.end(), {b.x0, b.y0, b.x1, b.y1});
  c.arrays.push_back({"boxes", {static_cast<int>(det.boxes.size()), 4}, io::DType::F64, boxes});
  c.arrays.push_back(
      {"confidences", {static_cast<int>(det.confidences.size())}, io::DType::F64, det.confidences});
  io::write_container(c, path);
}

DetectionOutput load_detection(const std::filesystem::path& path, nlohmann::json* meta) {
  const io::Container c = io::read_container(path);
  if (c.kind != "detection_targets") throw Error("not a detection targets file: " + path.string());
  DetectionOutput d;
  d.deep_features = tap_from(c.get("deep_features"));
  d.out_coords = tap_from(c.get("out_coords"));
  d.out_scores = tap_from(c.get("out_scores"));
  const auto& b = c.get("boxes").values;
  for (std::size_t i = 0; i + 3 < b.size(); i += 4) d.boxes.push_back({b[i], b[i + 1], b[i + 2], b[i + 3]});
  d.confidences = c.get("confidences").values;
  if (d.boxes.size() != d.confidences.size()) throw Error("corrupt checkpoint: box count mismatch");
  d.is_target = true;
  if (meta) *meta = c.meta;
  return d;
}

TargetCache::TargetCache(std::filesystem::path root, const DetectorBackend& backend)
    : dir_(std::move(root) / "cache" / "targets" / backend.id()),
      backend_(&backend),
      backend_hash_(backend.parameter_hash()) {}

std::filesystem::path TargetCache::path_of(const std::string& id) const { return dir_ / (id + ".ckpt"); }

DetectionOutput TargetCache::get(const std::string& id, const ImageTensor& hr) const {
  const auto path = path_of(id);
  const std::string digest = image_digest(hr);
  if (std::filesystem::exists(path)) {
    try {
      nlohmann::json meta;
      DetectionOutput d = load_detection(path, &meta);
      if (meta.value("backend_hash", "") == backend_hash_ && meta.value("hr_digest", "") == digest)
        return d;
    } catch (const Error&) {
      // Unreadable entry: fall through and rewrite it.
    }
  }
  DetectionOutput d = extract_targets(*backend_, hr);
  std::filesystem::create_directories(dir_);
  save_detection(d, path, {{"backend", backend_->id()}, {"backend_hash", backend_hash_},
                           {"hr_digest", digest}, {"sample", id}});
  return load_detection(path);
}

}  // namespace tdsr::detector
