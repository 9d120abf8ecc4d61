#include "tdsr/loss/loss.hpp"

#include <algorithm>
#include <cmath>

#include "tdsr/core/error.hpp"
#include "tdsr/data/resample.hpp"

namespace tdsr::loss {

namespace {

std::string shape_str(const ImageTensor& a) {
  return std::to_string(a.height()) + "x" + std::to_string(a.width()) + "x" + std::to_string(a.channels());
}

double mse(std::span<const double> a, std::span<const double> b, std::span<double> grad) {
  const double n = static_cast<double>(a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
    if (!grad.empty()) grad[i] = 2.0 * d / n;
  }
  return sum / n;
}

}  // namespace

double l2_hr(const ImageTensor& sr, const ImageTensor& hr, ImageTensor* grad) {
  if (!sr.same_shape(hr)) throw Error("l2_hr: shape mismatch " + shape_str(sr) + " vs " + shape_str(hr));
  if (sr.empty()) throw Error("l2_hr: empty image");
  if (grad) *grad = ImageTensor(sr.height(), sr.width(), sr.channels());
  return mse(sr.values(), hr.values(), grad ? grad->values() : std::span<double>{});
}

double l2_lr(const ImageTensor& sr, const ImageTensor& lr, ScaleFactor s, ImageTensor* grad) {
  const int f = s.value();
  if (sr.height() != lr.height() * f || sr.width() != lr.width() * f || sr.channels() != lr.channels())
    throw Error("l2_lr: sr " + shape_str(sr) + " is not lr " + shape_str(lr) + " times " +
                std::to_string(f));
  if (lr.empty()) throw Error("l2_lr: empty image");
  const ImageTensor down = data::bicubic_downsample(sr, s);
  ImageTensor g_lr;
  if (grad) g_lr = ImageTensor(lr.height(), lr.width(), lr.channels());
  const double v = mse(down.values(), lr.values(), grad ? g_lr.values() : std::span<double>{});
  if (grad) *grad = data::bicubic_downsample_adjoint(g_lr, s);
  return v;
}

double task_l1(std::span<const double> sr, std::span<const double> target, std::span<double> grad) {
  if (sr.size() != target.size()) throw Error("task_l1: shape mismatch");
  if (sr.empty()) throw Error("task_l1: empty features");
  if (!grad.empty() && grad.size() != sr.size()) throw Error("task_l1: gradient buffer size mismatch");
  const double n = static_cast<double>(sr.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    const double d = sr[i] - target[i];
    sum += std::abs(d);
    if (!grad.empty()) grad[i] = d > 0 ? 1.0 / n : (d < 0 ? -1.0 / n : 0.0);
  }
  return sum / n;
}

double task_l1(const FeatureMap& sr, const FeatureMap& target, FeatureMap* grad) {
  if (!sr.same_shape(target)) throw Error("task_l1: shape mismatch");
  if (grad) *grad = sr.zeros_like();
  return task_l1(sr.values(), target.values(), grad ? grad->values() : std::span<double>{});
}

double task_out_l1(const detector::DetectionOutput& sr, const detector::DetectionOutput& target,
                   FeatureMap* grad_coords, FeatureMap* grad_scores) {
  if (!sr.out_coords.same_shape(target.out_coords) || !sr.out_scores.same_shape(target.out_scores))
    throw Error("task_l1: output tap shape mismatch");
  std::vector<double> a(sr.out_coords.storage());
  a.insert(a.end(), sr.out_scores.storage().begin(), sr.out_scores.storage().end());
  std::vector<double> b(target.out_coords.storage());
  b.insert(b.end(), target.out_scores.storage().begin(), target.out_scores.storage().end());
  std::vector<double> g(grad_coords || grad_scores ? a.size() : 0);
  const double v = task_l1(a, b, g);
  if (!g.empty()) {
    const auto split = g.begin() + static_cast<std::ptrdiff_t>(sr.out_coords.size());
    if (grad_coords) {
      *grad_coords = sr.out_coords.zeros_like();
      std::copy(g.begin(), split, grad_coords->storage().begin());
    }
    if (grad_scores) {
      *grad_scores = sr.out_scores.zeros_like();
      std::copy(split, g.end(), grad_scores->storage().begin());
    }
  }
  return v;
}

const char* to_string(DwaScope scope) { return scope == DwaScope::All ? "all" : "task_only"; }

DwaScope parse_dwa_scope(const std::string& name) {
  if (name == "all") return DwaScope::All;
  if (name == "task_only") return DwaScope::TaskOnly;
  throw Error("unknown dwa scope '" + name + "' (expected all or task_only)");
}

DwaState::DwaState(LossSet enabled, DwaConfig config) : enabled_(enabled), config_(config) {
  if (enabled_.empty()) throw Error("no loss components enabled");
  if (!(config_.temperature > 0.0) || !std::isfinite(config_.temperature))
    throw Error("dwa temperature must be positive");
  for (auto id : enabled_.items()) {
    history_[id] = {};
    weights_[id] = 1.0;
  }
}

LossSet DwaState::balanced() const {
  if (config_.scope == DwaScope::All) return enabled_;
  LossSet out;
  for (auto id : enabled_.items())
    if (is_task_component(id)) out.insert(id);
  return out;
}

double DwaState::weight(LossComponentId id) const {
  auto it = weights_.find(id);
  if (it == weights_.end()) throw Error("loss component " + std::string(to_string(id)) + " is not enabled");
  return it->second;
}

int DwaState::epochs_seen() const {
  return history_.empty() ? 0 : static_cast<int>(history_.begin()->second.size());
}

std::vector<double> dwa_weights(std::span<const double> ratios, double temperature) {
  if (ratios.empty()) return {};
  const double top = *std::max_element(ratios.begin(), ratios.end());
  std::vector<double> e(ratios.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) sum += e[i] = std::exp((ratios[i] - top) / temperature);
  const double n = static_cast<double>(ratios.size());
  for (auto& v : e) v = n * v / sum;
  return e;
}

DwaState dwa_update(const DwaState& state, const std::map<LossComponentId, double>& epoch_means) {
  DwaState next = state;
  for (auto id : state.enabled_.items()) {
    auto it = epoch_means.find(id);
    if (it == epoch_means.end())
      throw Error("epoch means missing component " + std::string(to_string(id)));
    double v = it->second;
    if (!std::isfinite(v) || v < 0.0 || (v == 0.0 && !state.config_.guard))
      throw Error("degenerate loss history for " + std::string(to_string(id)));
    if (state.config_.guard) v = std::max(v, kLossFloor);
    next.history_[id].push_back(v);
  }
  const auto ids = next.balanced().items();
  std::vector<double> ratios;
  for (auto id : ids) {
    const auto& h = next.history_[id];
    ratios.push_back(h.size() < 2 ? 1.0 : h[h.size() - 1] / h[h.size() - 2]);
  }
  const auto w = dwa_weights(ratios, state.config_.temperature);
  for (std::size_t i = 0; i < ids.size(); ++i) next.weights_[ids[i]] = w[i];
  return next;
}

LossBreakdown composite_loss(const ImageTensor& sr, const ImageTensor& hr, const ImageTensor& lr,
                             ScaleFactor s, const detector::DetectionOutput& det_sr,
                             const detector::DetectionOutput& det_target, const DwaState& state,
                             LossSet enabled, LossGrads* grads) {
  using enum LossComponentId;
  if (enabled.empty()) throw Error("no loss components enabled");
  if (enabled != state.enabled()) throw Error("enabled losses differ from the weighting state");
  LossBreakdown out;
  out.enabled = enabled;
  if (grads) *grads = LossGrads{};
  ImageTensor g;
  auto add_image_grad = [&](const ImageTensor& part, double w) {
    if (grads->image.empty()) grads->image = ImageTensor(sr.height(), sr.width(), sr.channels());
    auto dst = grads->image.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * part.values()[i];
  };
  auto scale = [](FeatureMap& fm, double w) {
    for (auto& v : fm.values()) v *= w;
  };
  if (enabled.any_task()) {
    if (!det_target.is_target) throw Error("detection targets must be flagged as targets");
    if (det_sr.is_target) throw Error("detections of the SR image must not be flagged as targets");
  }
  for (auto id : enabled.items()) {
    const double w = state.weight(id);
    double v = 0.0;
    switch (id) {
      case L2_HR:
        v = l2_hr(sr, hr, grads ? &g : nullptr);
        if (grads) add_image_grad(g, w);
        break;
      case L2_LR:
        v = l2_lr(sr, lr, s, grads ? &g : nullptr);
        if (grads) add_image_grad(g, w);
        break;
      case TASK_DEEP:
        v = task_l1(det_sr.deep_features, det_target.deep_features, grads ? &grads->deep : nullptr);
        if (grads) scale(grads->deep, w);
        break;
      case TASK_OUT:
        v = task_out_l1(det_sr, det_target, grads ? &grads->coords : nullptr,
                        grads ? &grads->scores : nullptr);
        if (grads) {
          scale(grads->coords, w);
          scale(grads->scores, w);
        }
        break;
    }
    out.values[id] = v;
    out.weights[id] = w;
    out.total += w * v;
  }
  return out;
}

ImageTensor gradient_wrt_sr(const LossGrads& grads, const detector::DetectorBackend& backend,
                            const detector::DetectorTape& tape) {
  ImageTensor g = grads.image;
  if (grads.deep.size() > 0 || grads.coords.size() > 0 || grads.scores.size() > 0) {
    const ImageTensor t = backend.backward_to_input(tape, grads.deep, grads.coords, grads.scores);
    if (g.empty()) return t;
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += t.values()[i];
  }
  return g;
}

}  // namespace tdsr::loss
