#include "tdsr/kernels/conv.hpp"

#include <atomic>

#include "conv_impl.hpp"
#include "tdsr/core/error.hpp"

namespace tdsr::kernels {

namespace {

std::atomic<Policy> g_policy{Policy::Parallel};

void check(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

void check_conv(const ConvShape& s, int h, int w, std::size_t in, std::size_t weight,
                std::size_t out) {
  check(s.out_h(h) >= 1 && s.out_w(w) >= 1, "convolution output would be empty");
  check(in == static_cast<std::size_t>(s.in_c) * h * w, "convolution input size mismatch");
  check(weight == static_cast<std::size_t>(s.weight_size()), "convolution weight size mismatch");
  check(out == static_cast<std::size_t>(s.out_c) * s.out_h(h) * s.out_w(w),
        "convolution output size mismatch");
}

void check_tconv(const ConvTransposeShape& s, int h, int w, std::size_t in, std::size_t weight,
                 std::size_t out) {
  check(s.out_h(h) >= 1 && s.out_w(w) >= 1, "transposed convolution output would be empty");
  check(in == static_cast<std::size_t>(s.in_c) * h * w, "transposed convolution input size mismatch");
  check(weight == static_cast<std::size_t>(s.weight_size()),
        "transposed convolution weight size mismatch");
  check(out == static_cast<std::size_t>(s.out_c) * s.out_h(h) * s.out_w(w),
        "transposed convolution output size mismatch");
}

}  // namespace

Policy default_policy() { return g_policy.load(std::memory_order_relaxed); }
void set_default_policy(Policy policy) { g_policy.store(policy, std::memory_order_relaxed); }

void conv2d_forward(const ConvShape& s, int h, int w, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out, Policy policy) {
  check_conv(s, h, w, in.size(), weight.size(), out.size());
  if (policy == Policy::Serial)
    serial::conv2d_forward(s, h, w, in, weight, bias, out);
  else
    parallel::conv2d_forward(s, h, w, in, weight, bias, out);
}

void conv2d_backward_input(const ConvShape& s, int h, int w, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in,
                           Policy policy) {
  check_conv(s, h, w, grad_in.size(), weight.size(), grad_out.size());
  if (policy == Policy::Serial)
    serial::conv2d_backward_input(s, h, w, grad_out, weight, grad_in);
  else
    parallel::conv2d_backward_input(s, h, w, grad_out, weight, grad_in);
}

void conv2d_backward_weight(const ConvShape& s, int h, int w, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias, Policy policy) {
  check_conv(s, h, w, in.size(), grad_weight.size(), grad_out.size());
  if (policy == Policy::Serial)
    serial::conv2d_backward_weight(s, h, w, in, grad_out, grad_weight, grad_bias);
  else
    parallel::conv2d_backward_weight(s, h, w, in, grad_out, grad_weight, grad_bias);
}

void conv_transpose2d_forward(const ConvTransposeShape& s, int h, int w, std::span<const double> in,
                              std::span<const double> weight, std::span<const double> bias,
                              std::span<double> out, Policy policy) {
  check_tconv(s, h, w, in.size(), weight.size(), out.size());
  if (policy == Policy::Serial)
    serial::conv_transpose2d_forward(s, h, w, in, weight, bias, out);
  else
    parallel::conv_transpose2d_forward(s, h, w, in, weight, bias, out);
}

void conv_transpose2d_backward_input(const ConvTransposeShape& s, int h, int w,
                                     std::span<const double> grad_out, std::span<const double> weight,
                                     std::span<double> grad_in, Policy policy) {
  check_tconv(s, h, w, grad_in.size(), weight.size(), grad_out.size());
  if (policy == Policy::Serial)
    serial::conv_transpose2d_backward_input(s, h, w, grad_out, weight, grad_in);
  else
    parallel::conv_transpose2d_backward_input(s, h, w, grad_out, weight, grad_in);
}

void conv_transpose2d_backward_weight(const ConvTransposeShape& s, int h, int w,
                                      std::span<const double> in, std::span<const double> grad_out,
                                      std::span<double> grad_weight, std::span<double> grad_bias,
                                      Policy policy) {
  check_tconv(s, h, w, in.size(), grad_weight.size(), grad_out.size());
  if (policy == Policy::Serial)
    serial::conv_transpose2d_backward_weight(s, h, w, in, grad_out, grad_weight, grad_bias);
  else
    parallel::conv_transpose2d_backward_weight(s, h, w, in, grad_out, grad_weight, grad_bias);
}

}  // namespace tdsr::kernels
