// Wall-clock comparison of the serial reference kernels against the tuned
// OpenMP versions at the sizes one training update uses.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "pursuit/autodiff/diff_array.hpp"
#include "pursuit/kernels/conv.hpp"
#include "pursuit/kernels/gemm.hpp"
#include "pursuit/kernels/scan.hpp"

namespace {

using namespace pursuit::kernels;

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Best of `reps` timings, in milliseconds.
double time_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Runs both sides before comparing; argument evaluation order is unspecified.
void compare(const std::string& name, int reps, const std::function<void()>& ref, const std::function<void()>& fast,
             const std::vector<double>& ref_out, const std::vector<double>& fast_out) {
  const double ref_ms = time_ms(reps, ref);
  const double fast_ms = time_ms(reps, fast);
  const double diff = max_abs_diff(ref_out, fast_out);
  std::printf("%-28s ref %9.3f ms  fast %9.3f ms  speedup %6.2fx  max|diff| %.3g\n", name.c_str(), ref_ms,
              fast_ms, ref_ms / fast_ms, diff);
}

// Direct transcription of the convolution definition.
void conv_serial(const ConvDims& d, const std::vector<double>& x, const std::vector<double>& w,
                 const std::vector<double>& bias, std::vector<double>& y) {
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t t = 0; t < d.time; ++t)
      for (std::size_t c = 0; c < d.channels; ++c) {
        double acc = bias[c];
        for (std::size_t k = 0; k < d.width; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(d.width - 1);
          if (src >= 0) acc += w[c * d.width + k] * x[(b * d.time + static_cast<std::size_t>(src)) * d.channels + c];
        }
        y[(b * d.time + t) * d.channels + c] = acc;
      }
}

void bench_gemm(std::mt19937_64& rng, int reps) {
  // Rows: one update batch of 250 sequences of length 8; widths from the in-projection.
  const std::size_t m = 2000, k = 64, n = 264;
  const auto a = random_vector(m * k, rng), b = random_vector(k * n, rng), bt = random_vector(n * k, rng);
  std::vector<double> c_ref(m * n), c_fast(m * n);
  compare("gemm_nn 2000x64 * 64x264", reps, [&] { reference::gemm_nn(m, n, k, a, b, c_ref, false); },
          [&] { gemm_nn(m, n, k, a, b, c_fast, false); }, c_ref, c_fast);
  compare("gemm_nt 2000x64 * 264x64^T", reps, [&] { reference::gemm_nt(m, n, k, a, bt, c_ref, false); },
          [&] { gemm_nt(m, n, k, a, bt, c_fast, false); }, c_ref, c_fast);
  std::vector<double> w_ref(k * n), w_fast(k * n);
  const auto g = random_vector(m * n, rng);
  compare("gemm_tn 64x2000 * 2000x264", reps, [&] { reference::gemm_tn(k, n, m, a, g, w_ref, false); },
          [&] { gemm_tn(k, n, m, a, g, w_fast, false); }, w_ref, w_fast);
}

void bench_scan(std::mt19937_64& rng, int reps) {
  ScanDims d{250, 8, 4, 32, 16};
  const auto x = random_vector(d.x_size(), rng), dt = random_vector(d.dt_size(), rng, 0.001, 0.1);
  const auto a = random_vector(d.heads, rng, -4.0, -1.0), b = random_vector(d.bc_size(), rng);
  const auto c = random_vector(d.bc_size(), rng), dd = random_vector(d.d_size(), rng);
  const ScanInputs in{x, dt, a, b, c, dd};
  std::vector<double> y_ref(d.x_size()), y_fast(d.x_size()), y_chunk(d.x_size());
  const auto naive = [&] { reference::scan_naive(d, in, y_ref); };
  compare("scan recurrent 250x8", reps, naive, [&] { scan_recurrent(d, in, y_fast, {}); }, y_ref, y_fast);
  compare("scan chunked(4) 250x8", reps, naive, [&] { scan_chunked(d, 4, in, y_chunk); }, y_ref, y_chunk);

  std::vector<double> gx(d.x_size()), gdt(d.dt_size()), ga(d.heads), gb(d.bc_size()), gc(d.bc_size()),
      gd(d.d_size());
  const auto gy = random_vector(d.x_size(), rng);
  const double bwd = time_ms(reps, [&] { scan_backward(d, in, gy, ScanGrads{gx, gdt, ga, gb, gc, gd}); });
  std::printf("%-28s           %9.3f ms\n", "scan backward 250x8", bwd);
}

void bench_conv(std::mt19937_64& rng, int reps) {
  ConvDims d{250, 8, 128, 4};
  const auto x = random_vector(d.batch * d.time * d.channels, rng), w = random_vector(d.channels * d.width, rng);
  const auto bias = random_vector(d.channels, rng);
  std::vector<double> y_ref(x.size()), y_fast(x.size());
  compare("causal conv 250x8x128", reps, [&] { conv_serial(d, x, w, bias, y_ref); },
          [&] { causal_conv_forward(d, x, w, bias, y_fast); }, y_ref, y_fast);
}

}  // namespace

int main(int argc, char** argv) {
  pursuit::ad::tune_allocator();
  const int reps = argc > 1 ? std::max(1, std::stoi(argv[1])) : 20;
  std::printf("threads %d, best of %d\n", omp_get_max_threads(), reps);
  std::mt19937_64 rng(7);
  bench_gemm(rng, reps);
  bench_scan(rng, reps);
  bench_conv(rng, reps);
  return 0;
}
