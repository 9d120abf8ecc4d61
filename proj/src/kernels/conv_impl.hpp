#pragma once

#include "tdsr/kernels/conv.hpp"

namespace tdsr::kernels {

namespace serial {
void conv2d_forward(const ConvShape&, int, int, std::span<const double>, std::span<const double>,
                    std::span<const double>, std::span<double>);
void conv2d_backward_input(const ConvShape&, int, int, std::span<const double>,
                           std::span<const double>, std::span<double>);
void conv2d_backward_weight(const ConvShape&, int, int, std::span<const double>,
                            std::span<const double>, std::span<double>, std::span<double>);
void conv_transpose2d_forward(const ConvTransposeShape&, int, int, std::span<const double>,
                              std::span<const double>, std::span<const double>, std::span<double>);
void conv_transpose2d_backward_input(const ConvTransposeShape&, int, int, std::span<const double>,
                                     std::span<const double>, std::span<double>);
void conv_transpose2d_backward_weight(const ConvTransposeShape&, int, int, std::span<const double>,
                                      std::span<const double>, std::span<double>, std::span<double>);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvShape&, int, int, std::span<const double>, std::span<const double>,
                    std::span<const double>, std::span<double>);
void conv2d_backward_input(const ConvShape&, int, int, std::span<const double>,
                           std::span<const double>, std::span<double>);
void conv2d_backward_weight(const ConvShape&, int, int, std::span<const double>,
                            std::span<const double>, std::span<double>, std::span<double>);
void conv_transpose2d_forward(const ConvTransposeShape&, int, int, std::span<const double>,
                              std::span<const double>, std::span<const double>, std::span<double>);
void conv_transpose2d_backward_input(const ConvTransposeShape&, int, int, std::span<const double>,
                                     std::span<const double>, std::span<double>);
void conv_transpose2d_backward_weight(const ConvTransposeShape&, int, int, std::span<const double>,
                                      std::span<const double>, std::span<double>, std::span<double>);
}  // namespace parallel

}  // namespace tdsr::kernels
