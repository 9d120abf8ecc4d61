#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tdsr {

/// H x W x C intensity image, interleaved channels, values nominally in [0,1].
///
/// Model outputs may leave [0,1] during training; clamp_image() is applied at
/// the I/O and evaluation boundaries.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, double fill = 0.0);
  ImageTensor(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Saturates every value into [0,1]. Throws on NaN or infinity ("non-finite pixel").
ImageTensor clamp_image(const ImageTensor& img);

/// BT.601 luminance (0.299 R + 0.587 G + 0.114 B). Identity for single-channel input.
ImageTensor to_grayscale(const ImageTensor& img);

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

}  // namespace tdsr
