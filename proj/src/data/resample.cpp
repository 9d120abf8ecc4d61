#include "tdsr/data/resample.hpp"

#include <algorithm>
#include <cmath>

#include "tdsr/core/error.hpp"

namespace tdsr::data {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

Resampler1D Resampler1D::build(int n_in, int n_out, double ratio, double support_scale) {
  // ratio = input samples per output sample; pixel centers sit at i + 0.5.
  Resampler1D r;
  r.n_in_ = n_in;
  r.taps_.resize(n_out);
  const double support = 2.0 * support_scale;
  for (int i = 0; i < n_out; ++i) {
    const double center = (i + 0.5) * ratio;
    const int lo = static_cast<int>(std::floor(center - support - 0.5));
    const int hi = static_cast<int>(std::ceil(center + support - 0.5));
    std::vector<Tap> taps;
    double total = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double wgt = cubic_kernel((j + 0.5 - center) / support_scale);
      if (wgt == 0.0) continue;
      const int idx = std::clamp(j, 0, n_in - 1);
      auto it = std::find_if(taps.begin(), taps.end(), [&](const Tap& t) { return t.index == idx; });
      if (it == taps.end())
        taps.push_back({idx, wgt});
      else
        it->weight += wgt;
      total += wgt;
    }
    for (auto& t : taps) t.weight /= total;
    r.taps_[i] = std::move(taps);
  }
  return r;
}

Resampler1D Resampler1D::downsample(int n_in, int factor) {
  if (factor < 1 || n_in % factor != 0) throw Error("pad or crop first");
  return build(n_in, n_in / factor, factor, factor);
}

Resampler1D Resampler1D::upsample(int n_in, int factor) {
  if (factor < 1 || n_in < 1) throw Error("invalid upsampling request");
  return build(n_in, n_in * factor, 1.0 / factor, 1.0);
}

FeatureMap apply_separable(const FeatureMap& in, const Resampler1D& rows, const Resampler1D& cols) {
  if (in.height() != rows.n_in() || in.width() != cols.n_in())
    throw Error("resampler does not match input shape");
  const int oh = rows.n_out(), ow = cols.n_out(), h = in.height();
  FeatureMap out(in.channels(), oh, ow);
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const auto& t : cols.taps(x)) acc += t.weight * in.at(c, y, t.index);
        tmp[static_cast<std::size_t>(y) * ow + x] = acc;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const auto& t : rows.taps(y)) acc += t.weight * tmp[static_cast<std::size_t>(t.index) * ow + x];
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

FeatureMap apply_separable_transpose(const FeatureMap& grad_out, const Resampler1D& rows,
                                     const Resampler1D& cols) {
  if (grad_out.height() != rows.n_out() || grad_out.width() != cols.n_out())
    throw Error("resampler does not match gradient shape");
  const int h = rows.n_in(), w = cols.n_in(), oh = rows.n_out(), ow = cols.n_out();
  FeatureMap grad_in(grad_out.channels(), h, w);
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int c = 0; c < grad_out.channels(); ++c) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (int y = 0; y < oh; ++y)
      for (const auto& t : rows.taps(y))
        for (int x = 0; x < ow; ++x)
          tmp[static_cast<std::size_t>(t.index) * ow + x] += t.weight * grad_out.at(c, y, x);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x)
        for (const auto& t : cols.taps(x))
          grad_in.at(c, y, t.index) += t.weight * tmp[static_cast<std::size_t>(y) * ow + x];
  }
  return grad_in;
}

FeatureMap bicubic_downsample(const FeatureMap& in, ScaleFactor s) {
  const int f = s.value();
  if (in.height() % f != 0 || in.width() % f != 0) throw Error("pad or crop first");
  return apply_separable(in, Resampler1D::downsample(in.height(), f),
                         Resampler1D::downsample(in.width(), f));
}

ImageTensor bicubic_downsample(const ImageTensor& in, ScaleFactor s) {
  return to_image(bicubic_downsample(to_feature_map(in), s));
}

FeatureMap bicubic_downsample_adjoint(const FeatureMap& grad_lr, ScaleFactor s) {
  const int f = s.value();
  return apply_separable_transpose(grad_lr, Resampler1D::downsample(grad_lr.height() * f, f),
                                   Resampler1D::downsample(grad_lr.width() * f, f));
}

ImageTensor bicubic_downsample_adjoint(const ImageTensor& grad_lr, ScaleFactor s) {
  return to_image(bicubic_downsample_adjoint(to_feature_map(grad_lr), s));
}

FeatureMap bicubic_upsample(const FeatureMap& in, ScaleFactor s) {
  return apply_separable(in, Resampler1D::upsample(in.height(), s.value()),
                         Resampler1D::upsample(in.width(), s.value()));
}

ImageTensor bicubic_upsample(const ImageTensor& in, ScaleFactor s) {
  return to_image(bicubic_upsample(to_feature_map(in), s));
}

FeatureMap bicubic_upsample_adjoint(const FeatureMap& grad_hr, ScaleFactor s) {
  const int f = s.value();
  if (grad_hr.height() % f != 0 || grad_hr.width() % f != 0)
    throw Error("upsample gradient shape is not a multiple of the scale");
  return apply_separable_transpose(grad_hr, Resampler1D::upsample(grad_hr.height() / f, f),
                                   Resampler1D::upsample(grad_hr.width() / f, f));
}

ImageTensor degrade(const ImageTensor& hr, ScaleFactor s) {
  if (hr.height() % s.value() != 0 || hr.width() % s.value() != 0)
    throw Error("degrade: " + std::to_string(hr.height()) + "x" + std::to_string(hr.width()) +
                " is not divisible by " + std::to_string(s.value()) + "; pad or crop first");
  return clamp_image(bicubic_downsample(hr, s));
}

ImageTensor center_crop_to_multiple(const ImageTensor& img, ScaleFactor s) {
  const int f = s.value();
  const int h = img.height() / f * f, w = img.width() / f * f;
  if (h < 1 || w < 1) throw Error("image is smaller than the scale factor");
  if (h == img.height() && w == img.width()) return img;
  const int oy = (img.height() - h) / 2, ox = (img.width() - w) / 2;
  ImageTensor out(h, w, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y + oy, x + ox, c);
  return out;
}

}  // namespace tdsr::data
