#include "tdsr/core/types.hpp"

#include <algorithm>
#include <bit>

#include "tdsr/core/error.hpp"

namespace tdsr {

BBox clip_box(const BBox& box, int height, int width) {
  BBox b;
  b.x0 = std::clamp(box.x0, 0.0, static_cast<double>(width));
  b.x1 = std::clamp(box.x1, 0.0, static_cast<double>(width));
  b.y0 = std::clamp(box.y0, 0.0, static_cast<double>(height));
  b.y1 = std::clamp(box.y1, 0.0, static_cast<double>(height));
  return b;
}

ScaleFactor::ScaleFactor(int s) : s_(s) {
  if (s < 2) throw Error("scale factor must be >= 2, got " + std::to_string(s));
}

std::string_view to_string(LossComponentId id) {
  switch (id) {
    case LossComponentId::L2_HR: return "L2_HR";
    case LossComponentId::L2_LR: return "L2_LR";
    case LossComponentId::TASK_DEEP: return "TASK_DEEP";
    case LossComponentId::TASK_OUT: return "TASK_OUT";
  }
  return "?";
}

std::optional<LossComponentId> parse_loss_component(std::string_view name) {
  for (auto id : kAllLossComponents)
    if (to_string(id) == name) return id;
  return std::nullopt;
}

LossSet::LossSet(std::initializer_list<LossComponentId> ids) {
  for (auto id : ids) insert(id);
}

int LossSet::size() const { return std::popcount(bits_); }

std::vector<LossComponentId> LossSet::items() const {
  std::vector<LossComponentId> out;
  for (auto id : kAllLossComponents)
    if (contains(id)) out.push_back(id);
  return out;
}

std::string LossSet::label() const {
  std::string out;
  for (auto id : items()) {
    if (!out.empty()) out += '+';
    out += to_string(id);
  }
  return out;
}

LossSet LossSet::parse_label(std::string_view label) {
  LossSet set;
  while (!label.empty()) {
    const auto cut = label.find('+');
    const auto token = label.substr(0, cut);
    const auto id = parse_loss_component(token);
    if (!id) throw Error("unknown loss component '" + std::string(token) + "'");
    set.insert(*id);
    if (cut == std::string_view::npos) break;
    label.remove_prefix(cut + 1);
  }
  return set;
}

}  // namespace tdsr
