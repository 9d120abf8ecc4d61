// OpenMP kernels. Work is split over whole channel planes so each output
// element has a single owner and a fixed accumulation order.
#include <algorithm>

#include "conv_impl.hpp"

namespace tdsr::kernels::parallel {

void conv2d_forward(const ConvShape& s, int h, int w, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  const long plane_out = static_cast<long>(oh) * ow, plane_in = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < s.out_c; ++oc) {
    double* dst = out.data() + oc * plane_out;
    std::fill(dst, dst + plane_out, bias.empty() ? 0.0 : bias[oc]);
    for (int ic = 0; ic < s.in_c; ++ic) {
      const double* src = in.data() + ic * plane_in;
      const double* wk = weight.data() + (static_cast<long>(oc) * s.in_c + ic) * s.kh * s.kw;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int oy_lo = std::max(0, s.pad_h - ky), oy_hi = std::min(oh, h + s.pad_h - ky);
        for (int kx = 0; kx < s.kw; ++kx) {
          const double wv = wk[ky * s.kw + kx];
          const int ox_lo = std::max(0, s.pad_w - kx), ox_hi = std::min(ow, w + s.pad_w - kx);
          const int shift = kx - s.pad_w;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            double* drow = dst + static_cast<long>(oy) * ow;
            const double* srow = src + static_cast<long>(oy + ky - s.pad_h) * w + shift;
            for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox] += wv * srow[ox];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, int h, int w, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  const long plane_out = static_cast<long>(oh) * ow, plane_in = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < s.in_c; ++ic) {
    double* dst = grad_in.data() + ic * plane_in;
    for (int oc = 0; oc < s.out_c; ++oc) {
      const double* g = grad_out.data() + oc * plane_out;
      const double* wk = weight.data() + (static_cast<long>(oc) * s.in_c + ic) * s.kh * s.kw;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int oy_lo = std::max(0, s.pad_h - ky), oy_hi = std::min(oh, h + s.pad_h - ky);
        for (int kx = 0; kx < s.kw; ++kx) {
          const double wv = wk[ky * s.kw + kx];
          const int ox_lo = std::max(0, s.pad_w - kx), ox_hi = std::min(ow, w + s.pad_w - kx);
          const int shift = kx - s.pad_w;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            double* drow = dst + static_cast<long>(oy + ky - s.pad_h) * w + shift;
            const double* grow = g + static_cast<long>(oy) * ow;
            for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox] += wv * grow[ox];
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvShape& s, int h, int w, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  const long plane_out = static_cast<long>(oh) * ow, plane_in = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < s.out_c; ++oc) {
    const double* g = grad_out.data() + oc * plane_out;
    for (int ic = 0; ic < s.in_c; ++ic) {
      const double* src = in.data() + ic * plane_in;
      double* gw = grad_weight.data() + (static_cast<long>(oc) * s.in_c + ic) * s.kh * s.kw;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int oy_lo = std::max(0, s.pad_h - ky), oy_hi = std::min(oh, h + s.pad_h - ky);
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ox_lo = std::max(0, s.pad_w - kx), ox_hi = std::min(ow, w + s.pad_w - kx);
          const int shift = kx - s.pad_w;
          double acc = 0.0;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const double* grow = g + static_cast<long>(oy) * ow;
            const double* srow = src + static_cast<long>(oy + ky - s.pad_h) * w + shift;
            for (int ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * srow[ox];
          }
          gw[ky * s.kw + kx] += acc;
        }
      }
    }
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (long i = 0; i < plane_out; ++i) acc += g[i];
      grad_bias[oc] += acc;
    }
  }
}

void conv_transpose2d_forward(const ConvTransposeShape& s, int h, int w, std::span<const double> in,
                              std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  const long plane_out = static_cast<long>(oh) * ow, plane_in = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < s.out_c; ++oc) {
    double* dst = out.data() + oc * plane_out;
    std::fill(dst, dst + plane_out, bias.empty() ? 0.0 : bias[oc]);
    for (int ic = 0; ic < s.in_c; ++ic) {
      const double* src = in.data() + ic * plane_in;
      const double* wk = weight.data() + (static_cast<long>(ic) * s.out_c + oc) * s.k * s.k;
      for (int ky = 0; ky < s.k; ++ky)
        for (int iy = 0; iy < h; ++iy) {
          const int oy = iy * s.stride - s.pad + ky;
          if (oy < 0 || oy >= oh) continue;
          double* drow = dst + static_cast<long>(oy) * ow;
          const double* srow = src + static_cast<long>(iy) * w;
          for (int kx = 0; kx < s.k; ++kx) {
            const double wv = wk[ky * s.k + kx];
            for (int ix = 0; ix < w; ++ix) {
              const int ox = ix * s.stride - s.pad + kx;
              if (ox >= 0 && ox < ow) drow[ox] += wv * srow[ix];
            }
          }
        }
    }
  }
}

void conv_transpose2d_backward_input(const ConvTransposeShape& s, int h, int w,
                                     std::span<const double> grad_out, std::span<const double> weight,
                                     std::span<double> grad_in) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  const long plane_out = static_cast<long>(oh) * ow, plane_in = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < s.in_c; ++ic) {
    double* dst = grad_in.data() + ic * plane_in;
    for (int oc = 0; oc < s.out_c; ++oc) {
      const double* g = grad_out.data() + oc * plane_out;
      const double* wk = weight.data() + (static_cast<long>(ic) * s.out_c + oc) * s.k * s.k;
      for (int ky = 0; ky < s.k; ++ky)
        for (int iy = 0; iy < h; ++iy) {
          const int oy = iy * s.stride - s.pad + ky;
          if (oy < 0 || oy >= oh) continue;
          const double* grow = g + static_cast<long>(oy) * ow;
          double* drow = dst + static_cast<long>(iy) * w;
          for (int kx = 0; kx < s.k; ++kx) {
            const double wv = wk[ky * s.k + kx];
            for (int ix = 0; ix < w; ++ix) {
              const int ox = ix * s.stride - s.pad + kx;
              if (ox >= 0 && ox < ow) drow[ix] += wv * grow[ox];
            }
          }
        }
    }
  }
}

void conv_transpose2d_backward_weight(const ConvTransposeShape& s, int h, int w,
                                      std::span<const double> in, std::span<const double> grad_out,
                                      std::span<double> grad_weight, std::span<double> grad_bias) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  const long plane_out = static_cast<long>(oh) * ow, plane_in = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < s.in_c; ++ic) {
    const double* src = in.data() + ic * plane_in;
    for (int oc = 0; oc < s.out_c; ++oc) {
      const double* g = grad_out.data() + oc * plane_out;
      double* gw = grad_weight.data() + (static_cast<long>(ic) * s.out_c + oc) * s.k * s.k;
      for (int ky = 0; ky < s.k; ++ky)
        for (int kx = 0; kx < s.k; ++kx) {
          double acc = 0.0;
          for (int iy = 0; iy < h; ++iy) {
            const int oy = iy * s.stride - s.pad + ky;
            if (oy < 0 || oy >= oh) continue;
            const double* grow = g + static_cast<long>(oy) * ow;
            const double* srow = src + static_cast<long>(iy) * w;
            for (int ix = 0; ix < w; ++ix) {
              const int ox = ix * s.stride - s.pad + kx;
              if (ox >= 0 && ox < ow) acc += srow[ix] * grow[ox];
            }
          }
          gw[ky * s.k + kx] += acc;
        }
    }
  }
  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < s.out_c; ++oc) {
      const double* g = grad_out.data() + oc * plane_out;
      double acc = 0.0;
      for (long i = 0; i < plane_out; ++i) acc += g[i];
      grad_bias[oc] += acc;
    }
  }
}

}  // namespace tdsr::kernels::parallel
