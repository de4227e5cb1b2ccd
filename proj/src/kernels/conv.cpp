#include "pursuit/kernels/conv.hpp"

#include <cstdint>

namespace pursuit::kernels {

void causal_conv_forward(const ConvDims& dims, std::span<const double> x,
                         std::span<const double> w, std::span<const double> bias,
                         std::span<double> y) {
  const std::size_t C = dims.channels;
  const std::size_t K = dims.width;
  const auto rows = static_cast<std::int64_t>(dims.batch * dims.time);
#pragma omp parallel for schedule(static) if (rows * C * K > (1 << 15))
  for (std::int64_t row = 0; row < rows; ++row) {
    const std::size_t b = static_cast<std::size_t>(row) / dims.time;
    const std::size_t t = static_cast<std::size_t>(row) % dims.time;
    double* yr = y.data() + static_cast<std::size_t>(row) * C;
    for (std::size_t c = 0; c < C; ++c) yr[c] = bias[c];
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t lag = K - 1 - k;
      if (lag > t) continue;
      const double* xr = x.data() + (b * dims.time + t - lag) * C;
      for (std::size_t c = 0; c < C; ++c) yr[c] += w[c * K + k] * xr[c];
    }
  }
}

void causal_conv_backward(const ConvDims& dims, std::span<const double> x,
                          std::span<const double> w, std::span<const double> grad_y,
                          std::span<double> grad_x, std::span<double> grad_w,
                          std::span<double> grad_bias) {
  const std::size_t C = dims.channels;
  const std::size_t K = dims.width;
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t t = 0; t < dims.time; ++t) {
      const double* gy = grad_y.data() + (b * dims.time + t) * C;
      if (!grad_bias.empty())
        for (std::size_t c = 0; c < C; ++c) grad_bias[c] += gy[c];
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t lag = K - 1 - k;
        if (lag > t) continue;
        const std::size_t src = (b * dims.time + t - lag) * C;
        if (!grad_w.empty())
          for (std::size_t c = 0; c < C; ++c) grad_w[c * K + k] += gy[c] * x[src + c];
        if (!grad_x.empty())
          for (std::size_t c = 0; c < C; ++c) grad_x[src + c] += gy[c] * w[c * K + k];
      }
    }
}

}  // namespace pursuit::kernels
