#pragma once

#include <utility>
#include <vector>

#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"

namespace tdsr::data {

/// Catmull-Rom cubic (a = -0.5).
double cubic_kernel(double x);

/// One axis of a separable resampling operator: each output sample is a
/// normalized weighted sum of input samples. Out-of-range taps are folded onto
/// the nearest edge sample (replicate border).
class Resampler1D {
 public:
  struct Tap {
    int index;
    double weight;
  };

  /// Antialiased reduction by an integer factor: the kernel is stretched by `factor`.
  static Resampler1D downsample(int n_in, int factor);
  /// Enlargement by an integer factor.
  static Resampler1D upsample(int n_in, int factor);

  int n_in() const { return n_in_; }
  int n_out() const { return static_cast<int>(taps_.size()); }
  const std::vector<Tap>& taps(int out_index) const { return taps_[out_index]; }

 private:
  static Resampler1D build(int n_in, int n_out, double ratio, double support_scale);

  int n_in_ = 0;
  std::vector<std::vector<Tap>> taps_;
};

/// Separable linear map applied channel plane by channel plane.
FeatureMap apply_separable(const FeatureMap& in, const Resampler1D& rows, const Resampler1D& cols);
/// Adjoint of apply_separable; used to backpropagate through the resampler.
FeatureMap apply_separable_transpose(const FeatureMap& grad_out, const Resampler1D& rows,
                                     const Resampler1D& cols);

/// Unclamped bicubic reduction by s. Dimensions must be divisible by s.
FeatureMap bicubic_downsample(const FeatureMap& in, ScaleFactor s);
ImageTensor bicubic_downsample(const ImageTensor& in, ScaleFactor s);
/// Adjoint of bicubic_downsample, for gradient flow from LR space back to HR space.
FeatureMap bicubic_downsample_adjoint(const FeatureMap& grad_lr, ScaleFactor s);
ImageTensor bicubic_downsample_adjoint(const ImageTensor& grad_lr, ScaleFactor s);

/// Unclamped bicubic enlargement by s.
FeatureMap bicubic_upsample(const FeatureMap& in, ScaleFactor s);
ImageTensor bicubic_upsample(const ImageTensor& in, ScaleFactor s);
FeatureMap bicubic_upsample_adjoint(const FeatureMap& grad_hr, ScaleFactor s);

/// HR -> LR simulated degradation: bicubic reduction followed by a [0,1] clamp.
/// Throws "pad or crop first" unless both dimensions are divisible by s.
ImageTensor degrade(const ImageTensor& hr, ScaleFactor s);

/// Centered crop to the largest dimensions divisible by s.
ImageTensor center_crop_to_multiple(const ImageTensor& img, ScaleFactor s);

}  // namespace tdsr::data
