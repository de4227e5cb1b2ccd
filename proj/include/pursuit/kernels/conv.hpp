#pragma once

#include <cstddef>
#include <span>

// Causal depthwise 1-D convolution over time.
//   y[b, t, c] = bias[c] + sum_k w[c, k] * x[b, t - (width - 1) + k, c]
// with x treated as zero before t = 0.
//
// Layouts: x, y [batch, time, channels]; w [channels, width]; bias [channels].

namespace pursuit::kernels {

struct ConvDims {
  std::size_t batch = 1;
  std::size_t time = 1;
  std::size_t channels = 1;
  std::size_t width = 1;
};

void causal_conv_forward(const ConvDims& dims, std::span<const double> x,
                         std::span<const double> w, std::span<const double> bias,
                         std::span<double> y);

/// Accumulates into grad_x, grad_w and grad_bias (any may be empty to skip).
void causal_conv_backward(const ConvDims& dims, std::span<const double> x,
                          std::span<const double> w, std::span<const double> grad_y,
                          std::span<double> grad_x, std::span<double> grad_w,
                          std::span<double> grad_bias);

}  // namespace pursuit::kernels
