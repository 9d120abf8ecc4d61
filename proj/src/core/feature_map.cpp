#include "tdsr/core/feature_map.hpp"

#include "tdsr/core/error.hpp"

namespace tdsr {

FeatureMap& FeatureMap::operator+=(const FeatureMap& o) {
  if (!same_shape(o)) throw Error("feature map shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

FeatureMap to_feature_map(const ImageTensor& img) {
  FeatureMap fm(img.channels(), img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) fm.at(c, y, x) = img.at(y, x, c);
  return fm;
}

ImageTensor to_image(const FeatureMap& fm) {
  ImageTensor img(fm.height(), fm.width(), fm.channels());
  for (int y = 0; y < fm.height(); ++y)
    for (int x = 0; x < fm.width(); ++x)
      for (int c = 0; c < fm.channels(); ++c) img.at(y, x, c) = fm.at(c, y, x);
  return img;
}

}  // namespace tdsr
