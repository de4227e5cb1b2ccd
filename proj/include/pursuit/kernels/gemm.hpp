#pragma once

#include <cstddef>
#include <span>

// Dense row-major matrix products used by the autodiff engine.
//
// Every output element is accumulated over the inner dimension in ascending
// order, independent of the number of rows and of the thread count. This makes
// a row's result bit-identical no matter which batch it was computed in, which
// the trainer relies on when it re-evaluates rollout log-probabilities.

namespace pursuit::kernels {

/// C[M,N] (+)= A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

/// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

/// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

namespace reference {

// Serial triple loops. Kept for tests and the kernel benchmark.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

}  // namespace reference
}  // namespace pursuit::kernels
