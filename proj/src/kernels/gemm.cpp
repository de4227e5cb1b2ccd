#include "pursuit/kernels/gemm.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace pursuit::kernels {
namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 32;
// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

// C tile [R, W] held in registers while it accumulates coef(r, kk) * B[kk, j0 + w]
// for kk = 0..k-1 in order, so each element sees the same sequence of
// operations as the plain triple loop.
template <std::size_t R, std::size_t W, typename Coef>
inline void tile(std::size_t n, std::size_t k, Coef coef, const double* b, double* c, std::size_t j0) {
  double acc[R][W];
  for (std::size_t r = 0; r < R; ++r)
#pragma omp simd
    for (std::size_t w = 0; w < W; ++w) acc[r][w] = c[r * n + j0 + w];
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* brow = b + kk * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const double ar = coef(r, kk);
#pragma omp simd
      for (std::size_t w = 0; w < W; ++w) acc[r][w] += ar * brow[w];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
#pragma omp simd
    for (std::size_t w = 0; w < W; ++w) c[r * n + j0 + w] = acc[r][w];
}

template <std::size_t R, typename Coef>
inline void row_block(std::size_t n, std::size_t k, Coef coef, const double* b, double* c) {
  std::size_t j0 = 0;
  for (; j0 + kColBlock <= n; j0 += kColBlock) tile<R, kColBlock>(n, k, coef, b, c, j0);
  for (; j0 + 8 <= n; j0 += 8) tile<R, 8>(n, k, coef, b, c, j0);
  for (; j0 < n; ++j0) tile<R, 1>(n, k, coef, b, c, j0);
}

// Rows [i0, i0+rows) of C accumulate coef(r, kk) * B[kk, :].
template <typename Coef>
inline void accumulate_rows(std::size_t rows, std::size_t n, std::size_t k, Coef coef, const double* b,
                            double* c) {
  switch (rows) {
    case 4: row_block<4>(n, k, coef, b, c); break;
    case 3: row_block<3>(n, k, coef, b, c); break;
    case 2: row_block<2>(n, k, coef, b, c); break;
    default: row_block<1>(n, k, coef, b, c); break;
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), 0.0);
  const auto blocks = static_cast<std::int64_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    const double* arow = ap + i0 * k;
    accumulate_rows(
        rows, n, k, [arow, k](std::size_t r, std::size_t kk) { return arow[r * k + kk]; }, bp,
        cp + i0 * n);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = b[j * k + kk];
  gemm_nn(m, n, k, a, bt, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), 0.0);
  const auto blocks = static_cast<std::int64_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    accumulate_rows(
        rows, n, k, [ap, m, i0](std::size_t r, std::size_t kk) { return ap[kk * m + i0 + r]; },
        bp, cp + i0 * n);
  }
}

namespace reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = s;
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[j * k + kk];
      c[i * n + j] = s;
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[kk * m + i] * b[kk * n + j];
      c[i * n + j] = s;
    }
}

}  // namespace reference
}  // namespace pursuit::kernels
