#pragma once

#include <span>

namespace tdsr::kernels {

/// Selects between the OpenMP kernels and the serial reference loops.
/// Both produce the same values up to floating-point summation order; the
/// parallel kernels are deterministic regardless of thread count because every
/// output element is owned by one thread and accumulated in a fixed order.
enum class Policy { Serial, Parallel };

Policy default_policy();
void set_default_policy(Policy policy);

/// Stride-1 2-D convolution on channel-major (C x H x W) planes with zero padding.
/// Weights are laid out (out_c, in_c, kh, kw).
struct ConvShape {
  int in_c = 1, out_c = 1;
  int kh = 3, kw = 3;
  int pad_h = 1, pad_w = 1;

  int out_h(int h) const { return h + 2 * pad_h - kh + 1; }
  int out_w(int w) const { return w + 2 * pad_w - kw + 1; }
  long weight_size() const { return static_cast<long>(out_c) * in_c * kh * kw; }
};

/// out = conv(in) + bias. `out` is overwritten.
void conv2d_forward(const ConvShape& s, int h, int w, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out, Policy policy = default_policy());
/// grad_in += conv^T(grad_out).
void conv2d_backward_input(const ConvShape& s, int h, int w, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in,
                           Policy policy = default_policy());
/// grad_weight += in (x) grad_out, grad_bias += sum(grad_out).
void conv2d_backward_weight(const ConvShape& s, int h, int w, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias, Policy policy = default_policy());

/// Strided transposed convolution (square kernel). Weights are laid out
/// (in_c, out_c, k, k). Output size is (h-1)*stride - 2*pad + k + out_pad.
struct ConvTransposeShape {
  int in_c = 1, out_c = 1;
  int k = 9, stride = 2, pad = 4, out_pad = 1;

  int out_h(int h) const { return (h - 1) * stride - 2 * pad + k + out_pad; }
  int out_w(int w) const { return (w - 1) * stride - 2 * pad + k + out_pad; }
  long weight_size() const { return static_cast<long>(in_c) * out_c * k * k; }
};

void conv_transpose2d_forward(const ConvTransposeShape& s, int h, int w, std::span<const double> in,
                              std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out, Policy policy = default_policy());
void conv_transpose2d_backward_input(const ConvTransposeShape& s, int h, int w,
                                     std::span<const double> grad_out, std::span<const double> weight,
                                     std::span<double> grad_in, Policy policy = default_policy());
void conv_transpose2d_backward_weight(const ConvTransposeShape& s, int h, int w,
                                      std::span<const double> in, std::span<const double> grad_out,
                                      std::span<double> grad_weight, std::span<double> grad_bias,
                                      Policy policy = default_policy());

}  // namespace tdsr::kernels
