#include "tdsr/core/image.hpp"

#include <algorithm>
#include <cmath>

#include "tdsr/core/error.hpp"

namespace tdsr {

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1) throw Error("image dimensions must be at least 1x1");
  if (channels < 1) throw Error("image must have at least one channel");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 1 || width < 1) throw Error("image dimensions must be at least 1x1");
  if (channels < 1) throw Error("image must have at least one channel");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels)
    throw Error("image data size does not match its shape");
}

ImageTensor clamp_image(const ImageTensor& img) {
  ImageTensor out = img;
  for (double& v : out.values()) {
    if (!std::isfinite(v)) throw Error("non-finite pixel");
    v = std::min(std::max(v, 0.0), 1.0);
  }
  return out;
}

ImageTensor to_grayscale(const ImageTensor& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3)
    throw Error("to_grayscale expects 1 or 3 channels, got " + std::to_string(img.channels()));
  ImageTensor out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(y, x, 0) =
          kLumaR * img.at(y, x, 0) + kLumaG * img.at(y, x, 1) + kLumaB * img.at(y, x, 2);
  return out;
}

}  // namespace tdsr
