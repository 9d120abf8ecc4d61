// Reference loops. Written for clarity, one output element at a time; the
// parallel kernels are checked against these in tests/test_kernels.cpp.
#include "conv_impl.hpp"

namespace tdsr::kernels::serial {

void conv2d_forward(const ConvShape& s, int h, int w, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int oc = 0; oc < s.out_c; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < s.in_c; ++ic)
          for (int ky = 0; ky < s.kh; ++ky)
            for (int kx = 0; kx < s.kw; ++kx) {
              const int iy = oy + ky - s.pad_h, ix = ox + kx - s.pad_w;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += weight[((static_cast<long>(oc) * s.in_c + ic) * s.kh + ky) * s.kw + kx] *
                     in[(static_cast<long>(ic) * h + iy) * w + ix];
            }
        out[(static_cast<long>(oc) * oh + oy) * ow + ox] = acc;
      }
}

void conv2d_backward_input(const ConvShape& s, int h, int w, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int ic = 0; ic < s.in_c; ++ic)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < s.out_c; ++oc)
          for (int ky = 0; ky < s.kh; ++ky)
            for (int kx = 0; kx < s.kw; ++kx) {
              const int oy = iy - ky + s.pad_h, ox = ix - kx + s.pad_w;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              acc += weight[((static_cast<long>(oc) * s.in_c + ic) * s.kh + ky) * s.kw + kx] *
                     grad_out[(static_cast<long>(oc) * oh + oy) * ow + ox];
            }
        grad_in[(static_cast<long>(ic) * h + iy) * w + ix] += acc;
      }
}

void conv2d_backward_weight(const ConvShape& s, int h, int w, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int oc = 0; oc < s.out_c; ++oc) {
    for (int ic = 0; ic < s.in_c; ++ic)
      for (int ky = 0; ky < s.kh; ++ky)
        for (int kx = 0; kx < s.kw; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const int iy = oy + ky - s.pad_h, ix = ox + kx - s.pad_w;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += grad_out[(static_cast<long>(oc) * oh + oy) * ow + ox] *
                     in[(static_cast<long>(ic) * h + iy) * w + ix];
            }
          grad_weight[((static_cast<long>(oc) * s.in_c + ic) * s.kh + ky) * s.kw + kx] += acc;
        }
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (long i = 0; i < static_cast<long>(oh) * ow; ++i) acc += grad_out[oc * static_cast<long>(oh) * ow + i];
      grad_bias[oc] += acc;
    }
  }
}

namespace {

// Input index that lands on output coordinate `o` through kernel tap `k`, or -1.
int transposed_source(int o, int k, const ConvTransposeShape& s, int n) {
  const int t = o + s.pad - k;
  if (t < 0 || t % s.stride != 0) return -1;
  const int i = t / s.stride;
  return i < n ? i : -1;
}

}  // namespace

void conv_transpose2d_forward(const ConvTransposeShape& s, int h, int w, std::span<const double> in,
                              std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int oc = 0; oc < s.out_c; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < s.in_c; ++ic)
          for (int ky = 0; ky < s.k; ++ky) {
            const int iy = transposed_source(oy, ky, s, h);
            if (iy < 0) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ix = transposed_source(ox, kx, s, w);
              if (ix < 0) continue;
              acc += weight[((static_cast<long>(ic) * s.out_c + oc) * s.k + ky) * s.k + kx] *
                     in[(static_cast<long>(ic) * h + iy) * w + ix];
            }
          }
        out[(static_cast<long>(oc) * oh + oy) * ow + ox] = acc;
      }
}

void conv_transpose2d_backward_input(const ConvTransposeShape& s, int h, int w,
                                     std::span<const double> grad_out, std::span<const double> weight,
                                     std::span<double> grad_in) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int ic = 0; ic < s.in_c; ++ic)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < s.out_c; ++oc)
          for (int ky = 0; ky < s.k; ++ky)
            for (int kx = 0; kx < s.k; ++kx) {
              const int oy = iy * s.stride - s.pad + ky, ox = ix * s.stride - s.pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              acc += weight[((static_cast<long>(ic) * s.out_c + oc) * s.k + ky) * s.k + kx] *
                     grad_out[(static_cast<long>(oc) * oh + oy) * ow + ox];
            }
        grad_in[(static_cast<long>(ic) * h + iy) * w + ix] += acc;
      }
}

void conv_transpose2d_backward_weight(const ConvTransposeShape& s, int h, int w,
                                      std::span<const double> in, std::span<const double> grad_out,
                                      std::span<double> grad_weight, std::span<double> grad_bias) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  for (int ic = 0; ic < s.in_c; ++ic)
    for (int oc = 0; oc < s.out_c; ++oc)
      for (int ky = 0; ky < s.k; ++ky)
        for (int kx = 0; kx < s.k; ++kx) {
          double acc = 0.0;
          for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
              const int oy = iy * s.stride - s.pad + ky, ox = ix * s.stride - s.pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              acc += in[(static_cast<long>(ic) * h + iy) * w + ix] *
                     grad_out[(static_cast<long>(oc) * oh + oy) * ow + ox];
            }
          grad_weight[((static_cast<long>(ic) * s.out_c + oc) * s.k + ky) * s.k + kx] += acc;
        }
  if (!grad_bias.empty())
    for (int oc = 0; oc < s.out_c; ++oc) {
      double acc = 0.0;
      for (long i = 0; i < static_cast<long>(oh) * ow; ++i) acc += grad_out[oc * static_cast<long>(oh) * ow + i];
      grad_bias[oc] += acc;
    }
}

}  // namespace tdsr::kernels::serial
