#include "pursuit/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pursuit/kernels/gemm.hpp"

namespace pursuit::ad {
namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b || is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast shapes " + to_string(a) + " and " +
                   to_string(b));
}

// Grad accumulation target of parent `i`, or an empty span when the parent
// does not need one.
std::span<double> parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return {};
  return p.grad_buffer();
}

template <typename Fwd, typename Bwd>
DiffArray unary(const char* op, const DiffArray& x, Fwd f, Bwd dfdx) {
  check_finite(op, {&x});
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    const auto& xin = self.parents[0]->value;
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xin[i], self.value[i]);
  });
}

// Elementwise binary op with leading-axis broadcasting. `da`/`db` give the
// partial derivatives as functions of (a, b, out).
template <typename Fwd, typename Da, typename Db>
DiffArray binary(const char* op, const DiffArray& a, const DiffArray& b, Fwd f, Da da, Db db) {
  check_finite(op, {&a, &b});
  Shape shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = numel(shape);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  }
  return make_result(op, std::move(shape), std::move(out), {a, b}, [da, db](Node& self) {
    const auto& ain = self.parents[0]->value;
    const auto& bin = self.parents[1]->value;
    const std::size_t na = ain.size();
    const std::size_t nb = bin.size();
    auto ga = parent_grad(self, 0);
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const double g = self.grad[i];
      const double x = ain[i % na];
      const double y = bin[i % nb];
      if (!ga.empty()) ga[i % na] += g * da(x, y, self.value[i]);
      if (!gb.empty()) gb[i % nb] += g * db(x, y, self.value[i]);
    }
  });
}

// Branch-free so mixed-sign inputs do not mispredict; exp never overflows.
double sigmoid_value(double x) {
  const double e = std::exp(-std::abs(x));
  const double r = 1.0 / (1.0 + e);
  return x >= 0.0 ? r : e * r;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Shared by permute and flip: out[i] = in[src[i]].
DiffArray gather(const char* op, const DiffArray& x, Shape shape, std::vector<std::size_t> src) {
  const auto xv = x.values();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return make_result(op, std::move(shape), std::move(out), {x},
                     [src = std::move(src)](Node& self) {
                       auto g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                     });
}

DiffArray matmul_impl(const char* op, const DiffArray& a, const DiffArray& b, bool trans_b) {
  check_finite(op, {&a, &b});
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return ShapeError(std::string(op) + ": incompatible shapes " + to_string(as) + " and " +
                      to_string(bs));
  };
  if (as.empty() || bs.size() < 2) throw mismatch();
  const std::size_t k = as.back();
  const std::size_t bk = trans_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
  const std::size_t n = trans_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
  if (bk != k) throw mismatch();

  std::size_t batch = 1;
  std::size_t m = 0;
  if (bs.size() == 2) {
    m = a.size() / std::max<std::size_t>(k, 1);
  } else {
    if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) throw mismatch();
    m = as[as.size() - 2];
    batch = numel(Shape(as.begin(), as.end() - 2));
  }
  Shape shape(as.begin(), as.end() - 1);
  shape.push_back(n);

  const std::size_t a_stride = m * k;
  const std::size_t b_stride = bs.size() == 2 ? 0 : k * n;
  const std::size_t c_stride = m * n;
  std::vector<double> out(batch * c_stride);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < batch; ++i) {
    auto ai = av.subspan(i * a_stride, a_stride);
    auto bi = bv.subspan(i * b_stride, k * n);
    std::span<double> ci(out.data() + i * c_stride, c_stride);
    if (trans_b)
      kernels::gemm_nt(m, n, k, ai, bi, ci, false);
    else
      kernels::gemm_nn(m, n, k, ai, bi, ci, false);
  }

  return make_result(op, std::move(shape), std::move(out), {a, b},
                     [=](Node& self) {
                       const std::span<const double> av = self.parents[0]->value;
                       const std::span<const double> bv = self.parents[1]->value;
                       const std::span<const double> gc = self.grad;
                       auto ga = parent_grad(self, 0);
                       auto gb = parent_grad(self, 1);
                       for (std::size_t i = 0; i < batch; ++i) {
                         auto gci = gc.subspan(i * c_stride, c_stride);
                         auto ai = av.subspan(i * a_stride, a_stride);
                         auto bi = bv.subspan(i * b_stride, k * n);
                         if (!ga.empty()) {
                           auto gai = ga.subspan(i * a_stride, a_stride);
                           if (trans_b)
                             kernels::gemm_nn(m, k, n, gci, bi, gai, true);
                           else
                             kernels::gemm_nt(m, k, n, gci, bi, gai, true);
                         }
                         if (!gb.empty()) {
                           auto gbi = gb.subspan(i * b_stride, k * n);
                           if (trans_b)
                             kernels::gemm_tn(n, k, m, gci, ai, gbi, true);
                           else
                             kernels::gemm_tn(k, n, m, ai, gci, gbi, true);
                         }
                       }
                     });
}

}  // namespace

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

DiffArray add(const DiffArray& a, const DiffArray& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

DiffArray div(const DiffArray& a, const DiffArray& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

DiffArray minimum(const DiffArray& a, const DiffArray& b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

DiffArray neg(const DiffArray& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

DiffArray scale(const DiffArray& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

DiffArray add_scalar(const DiffArray& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

DiffArray clamp(const DiffArray& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

DiffArray tanh(const DiffArray& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

DiffArray softplus(const DiffArray& x) {
  return unary("softplus", x, softplus_value, [](double v, double) { return sigmoid_value(v); });
}

DiffArray exp(const DiffArray& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

DiffArray log(const DiffArray& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

DiffArray square(const DiffArray& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

DiffArray sigmoid(const DiffArray& x) {
  return unary("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

DiffArray silu(const DiffArray& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid_value(v); },
      [](double v, double) {
        const double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

DiffArray matmul(const DiffArray& a, const DiffArray& b) { return matmul_impl("matmul", a, b, false); }

DiffArray matmul_nt(const DiffArray& a, const DiffArray& b) {
  return matmul_impl("matmul_nt", a, b, true);
}

DiffArray reshape(const DiffArray& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

DiffArray permute(const DiffArray& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.size())
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes given for shape " + to_string(in));
  std::vector<bool> seen(in.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in.size() || seen[ax]) throw ShapeError("permute: invalid axis order for shape " + to_string(in));
    seen[ax] = true;
  }
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    shape[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = x.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offset += stride[d];
      if (idx[d] < shape[d]) break;
      offset -= stride[d] * shape[d];
      idx[d] = 0;
    }
  }
  return gather("permute", x, std::move(shape), std::move(src));
}

DiffArray concat(const std::vector<DiffArray>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const AxisSplit base = split_at("concat", first, axis);
  Shape shape = first;
  shape[axis] = 0;
  for (const DiffArray& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape " + to_string(s) + " does not match " + to_string(first));
    shape[axis] += s[axis];
  }
  const std::size_t outer = base.outer;
  const std::size_t inner = base.inner;
  const std::size_t row = shape[axis] * inner;
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> widths;
  std::size_t col = 0;
  for (const DiffArray& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    const auto v = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    widths.push_back(w);
    col += w;
  }
  return make_result("concat", std::move(shape), std::move(out), parts,
                     [outer, row, widths = std::move(widths)](Node& self) {
                       std::size_t col = 0;
                       for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                         const std::size_t w = widths[pi];
                         auto g = parent_grad(self, pi);
                         if (!g.empty())
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * row + col + j];
                         col += w;
                       }
                     });
}

DiffArray slice(const DiffArray& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_at("slice", x.shape(), axis);
  if (begin > end || end > s.extent)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for axis " + std::to_string(axis) + " of shape " + to_string(x.shape()));
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t w = (end - begin) * s.inner;
  const std::size_t row = s.extent * s.inner;
  const std::size_t start = begin * s.inner;
  const std::size_t outer = s.outer;
  const auto v = x.values();
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * row + start), w,
                out.begin() + static_cast<std::ptrdiff_t>(o * w));
  return make_result("slice", std::move(shape), std::move(out), {x}, [=](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w; ++j) g[o * row + start + j] += self.grad[o * w + j];
  });
}

DiffArray flip(const DiffArray& x, std::size_t axis) {
  const AxisSplit s = split_at("flip", x.shape(), axis);
  std::vector<std::size_t> src(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        src[(o * s.extent + e) * s.inner + i] = (o * s.extent + (s.extent - 1 - e)) * s.inner + i;
  return gather("flip", x, x.shape(), std::move(src));
}

DiffArray sum(const DiffArray& x, std::size_t axis) {
  const AxisSplit s = split_at("sum", x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto v = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += v[(o * s.extent + e) * s.inner + i];
  return make_result("sum", std::move(shape), std::move(out), {x}, [s](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

DiffArray mean(const DiffArray& x, std::size_t axis) {
  const std::size_t extent = split_at("mean", x.shape(), axis).extent;
  return scale(sum(x, axis), 1.0 / static_cast<double>(extent));
}

DiffArray sum_all(const DiffArray& x) {
  const auto v = x.values();
  double total = 0.0;
  for (double e : v) total += e;
  return make_result("sum_all", {}, {total}, {x}, [](Node& self) {
    auto g = parent_grad(self, 0);
    const double gy = self.grad[0];
    for (double& e : g) e += gy;
  });
}

DiffArray mean_all(const DiffArray& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
}

DiffArray softmax(const DiffArray& x, std::size_t axis, const Mask* mask) {
  check_finite("softmax", {&x});
  const AxisSplit s = split_at("softmax", x.shape(), axis);
  if (mask != nullptr && (mask->shape != x.shape() || mask->values.size() != x.size()))
    throw ShapeError("softmax: mask shape " + to_string(mask->shape) + " does not match " +
                     to_string(x.shape()));
  const auto v = x.values();
  std::vector<double> out(x.size(), 0.0);
  auto valid = [&](std::size_t i) { return mask == nullptr || mask->values[i] != 0; };
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t i = base + e * s.inner;
        if (valid(i)) top = std::max(top, v[i]);
      }
      if (top == -std::numeric_limits<double>::infinity())
        throw std::invalid_argument("softmax: every entry of a slice is masked");
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t i = base + e * s.inner;
        if (valid(i)) {
          out[i] = std::exp(v[i] - top);
          z += out[i];
        }
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  return make_result("softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += y[base + e * s.inner] * gy[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          g[i] += y[i] * (gy[i] - dot);
        }
      }
  });
}

DiffArray masked_fill(const DiffArray& x, const Mask& mask, double value) {
  const Shape& xs = x.shape();
  const bool prefix = mask.shape.size() <= xs.size() &&
                      std::equal(mask.shape.begin(), mask.shape.end(), xs.begin());
  if (!prefix || mask.values.size() != numel(mask.shape))
    throw ShapeError("masked_fill: mask shape " + to_string(mask.shape) + " is not a prefix of " +
                     to_string(xs));
  const std::size_t per = x.size() / std::max<std::size_t>(mask.values.size(), 1);
  const auto v = x.values();
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask.values[i / per] == 0) out[i] = value;
  return make_result("masked_fill", xs, std::move(out), {x}, [keep = mask.values, per](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (keep[i / per] != 0) g[i] += self.grad[i];
  });
}

DiffArray layer_norm(const DiffArray& x, double eps) {
  check_finite("layer_norm", {&x});
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(width, 1);
  const auto v = x.values();
  std::vector<double> out(x.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += xr[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(width);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (xr[j] - mu) * inv[r];
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x},
                     [width, rows, inv = std::move(inv)](Node& self) {
                       auto g = parent_grad(self, 0);
                       const double n = static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * width;
                         const double* gy = self.grad.data() + r * width;
                         double mg = 0.0;
                         double mgy = 0.0;
                         for (std::size_t j = 0; j < width; ++j) {
                           mg += gy[j];
                           mgy += gy[j] * y[j];
                         }
                         mg /= n;
                         mgy /= n;
                         for (std::size_t j = 0; j < width; ++j)
                           g[r * width + j] += inv[r] * (gy[j] - mg - y[j] * mgy);
                       }
                     });
}

}  // namespace pursuit::ad
