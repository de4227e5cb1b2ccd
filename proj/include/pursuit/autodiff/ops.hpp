#pragma once

#include <cstddef>
#include <vector>

#include "pursuit/autodiff/diff_array.hpp"

// Differentiable array operations.
//
// Binary elementwise ops broadcast only over leading axes: the shape of one
// operand must equal, or be a trailing suffix of, the shape of the other
// (e.g. a bias [n] against activations [b, t, n]). Anything else throws
// ShapeError naming both shapes.

namespace pursuit::ad {

DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray div(const DiffArray& a, const DiffArray& b);
DiffArray minimum(const DiffArray& a, const DiffArray& b);

DiffArray neg(const DiffArray& x);
DiffArray scale(const DiffArray& x, double factor);
DiffArray add_scalar(const DiffArray& x, double offset);
DiffArray clamp(const DiffArray& x, double lo, double hi);

DiffArray tanh(const DiffArray& x);
DiffArray softplus(const DiffArray& x);
DiffArray exp(const DiffArray& x);
DiffArray log(const DiffArray& x);
DiffArray square(const DiffArray& x);
DiffArray sigmoid(const DiffArray& x);
DiffArray silu(const DiffArray& x);

/// a [..., m, k] times b [k, n], or batched a [..., m, k] times b [..., k, n]
/// with identical leading axes.
DiffArray matmul(const DiffArray& a, const DiffArray& b);
/// a [..., m, k] times transpose(b) where b is [n, k] or [..., n, k].
DiffArray matmul_nt(const DiffArray& a, const DiffArray& b);

DiffArray reshape(const DiffArray& x, Shape shape);
DiffArray permute(const DiffArray& x, const std::vector<std::size_t>& axes);
DiffArray concat(const std::vector<DiffArray>& parts, std::size_t axis);
DiffArray slice(const DiffArray& x, std::size_t axis, std::size_t begin, std::size_t end);
DiffArray flip(const DiffArray& x, std::size_t axis);

DiffArray sum(const DiffArray& x, std::size_t axis);
DiffArray mean(const DiffArray& x, std::size_t axis);
DiffArray sum_all(const DiffArray& x);
DiffArray mean_all(const DiffArray& x);

/// Softmax along `axis`. With a mask (same shape as x), masked entries get
/// probability exactly 0; a slice with no valid entry is rejected.
DiffArray softmax(const DiffArray& x, std::size_t axis, const Mask* mask = nullptr);

/// Replaces entries where mask is false by `value`. The mask shape must equal
/// x's shape or a leading prefix of it (a row mask).
DiffArray masked_fill(const DiffArray& x, const Mask& mask, double value);

/// Normalises the last axis to zero mean and unit variance (no affine part).
DiffArray layer_norm(const DiffArray& x, double eps = 1e-5);

inline DiffArray operator+(const DiffArray& a, const DiffArray& b) { return add(a, b); }
inline DiffArray operator-(const DiffArray& a, const DiffArray& b) { return sub(a, b); }
inline DiffArray operator*(const DiffArray& a, const DiffArray& b) { return mul(a, b); }
inline DiffArray operator/(const DiffArray& a, const DiffArray& b) { return div(a, b); }
inline DiffArray operator-(const DiffArray& x) { return neg(x); }

/// Numerically stable softplus on plain doubles, shared with non-graph code.
double softplus_value(double x);

}  // namespace pursuit::ad
