#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tdsr/core/image.hpp"

namespace tdsr {

/// Channel-major C x H x W real array: network activations, detector taps and
/// their gradients.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width, double fill = 0.0)
      : c_(channels), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }

  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> channel(int c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const { return {data_.data() + c * plane(), plane()}; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const FeatureMap& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  FeatureMap zeros_like() const { return FeatureMap(c_, h_, w_); }

  FeatureMap& operator+=(const FeatureMap& o);

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

FeatureMap to_feature_map(const ImageTensor& img);
ImageTensor to_image(const FeatureMap& fm);

}  // namespace tdsr
