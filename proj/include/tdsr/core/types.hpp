#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tdsr {

/// Axis-aligned box in pixel coordinates, corner form: [x0,x1) x [y0,y1).
struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  bool valid() const { return x0 < x1 && y0 < y1; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Clips to the [0,width) x [0,height) frame. The result may be degenerate.
BBox clip_box(const BBox& box, int height, int width);

/// Integer magnification ratio, at least 2.
class ScaleFactor {
 public:
  static constexpr int kDefault = 4;

  ScaleFactor() = default;
  explicit ScaleFactor(int s);

  int value() const { return s_; }
  friend bool operator==(ScaleFactor, ScaleFactor) = default;

 private:
  int s_ = kDefault;
};

enum class LossComponentId { L2_HR = 0, L2_LR = 1, TASK_DEEP = 2, TASK_OUT = 3 };

inline constexpr std::array<LossComponentId, 4> kAllLossComponents = {
    LossComponentId::L2_HR, LossComponentId::L2_LR, LossComponentId::TASK_DEEP,
    LossComponentId::TASK_OUT};

std::string_view to_string(LossComponentId id);
std::optional<LossComponentId> parse_loss_component(std::string_view name);

inline bool is_task_component(LossComponentId id) {
  return id == LossComponentId::TASK_DEEP || id == LossComponentId::TASK_OUT;
}

/// Sorted, duplicate-free set of loss components. Ordering follows the enum.
class LossSet {
 public:
  LossSet() = default;
  LossSet(std::initializer_list<LossComponentId> ids);

  void insert(LossComponentId id) { bits_ |= bit(id); }
  bool contains(LossComponentId id) const { return (bits_ & bit(id)) != 0; }
  bool empty() const { return bits_ == 0; }
  int size() const;
  bool any_task() const {
    return contains(LossComponentId::TASK_DEEP) || contains(LossComponentId::TASK_OUT);
  }
  std::vector<LossComponentId> items() const;

  /// "L2_HR+TASK_DEEP" style label; empty set gives "".
  std::string label() const;
  static LossSet parse_label(std::string_view label);

  friend bool operator==(LossSet, LossSet) = default;

 private:
  static unsigned bit(LossComponentId id) { return 1u << static_cast<unsigned>(id); }
  unsigned bits_ = 0;
};

}  // namespace tdsr
