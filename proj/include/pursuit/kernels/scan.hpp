#pragma once

#include <cstddef>
#include <span>

// Scalar-decay selective scan, batched over sequences and heads.
//
//   h_t = exp(dt_t * a) * h_{t-1} + dt_t * (x_t outer B_t),   h_0 = 0
//   y_t = h_t C_t + D * x_t
//
// Layouts (row-major):
//   x, y   [batch, time, heads, head_dim]
//   dt     [batch, time, heads]
//   a      [heads]
//   B, C   [batch, time, heads, state]
//   D      [heads, head_dim]
//   states [batch, time, heads, head_dim, state]

namespace pursuit::kernels {

struct ScanDims {
  std::size_t batch = 1;
  std::size_t time = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t state = 1;

  std::size_t x_size() const { return batch * time * heads * head_dim; }
  std::size_t dt_size() const { return batch * time * heads; }
  std::size_t bc_size() const { return batch * time * heads * state; }
  std::size_t d_size() const { return heads * head_dim; }
  std::size_t states_size() const { return x_size() * state; }
};

struct ScanInputs {
  std::span<const double> x;
  std::span<const double> dt;
  std::span<const double> a;
  std::span<const double> b;
  std::span<const double> c;
  std::span<const double> d;
};

struct ScanGrads {
  std::span<double> x;
  std::span<double> dt;
  std::span<double> a;
  std::span<double> b;
  std::span<double> c;
  std::span<double> d;
};

/// Sequential recurrence, parallel over (batch, head). Writes every hidden
/// state into `states` when it is non-empty.
void scan_recurrent(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                    std::span<double> states);

/// Segmented form: inside each chunk the output is the masked quadratic
/// (attention-like) sum; the hidden state is carried between chunks.
void scan_chunked(const ScanDims& dims, std::size_t chunk, const ScanInputs& in,
                  std::span<double> y);

/// Accumulates input gradients given dL/dy.
void scan_backward(const ScanDims& dims, const ScanInputs& in, std::span<const double> grad_y,
                   const ScanGrads& grads);

namespace reference {
// One element at a time, one sequence at a time.
void scan_naive(const ScanDims& dims, const ScanInputs& in, std::span<double> y);
}  // namespace reference

}  // namespace pursuit::kernels
