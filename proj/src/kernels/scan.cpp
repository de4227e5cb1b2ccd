#include "pursuit/kernels/scan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace pursuit::kernels {
namespace {

struct Offsets {
  std::size_t x;   // into x/y, start of (b, t, h, :)
  std::size_t dt;  // into dt
  std::size_t bc;  // into B/C
};

inline Offsets offsets(const ScanDims& d, std::size_t b, std::size_t t, std::size_t h) {
  const std::size_t bth = (b * d.time + t) * d.heads + h;
  return {bth * d.head_dim, bth, bth * d.state};
}

}  // namespace

void scan_recurrent(const ScanDims& dims, const ScanInputs& in, std::span<double> y,
                    std::span<double> states) {
  const std::size_t P = dims.head_dim;
  const std::size_t S = dims.state;
  const bool keep = !states.empty();
  const auto pairs = static_cast<std::int64_t>(dims.batch * dims.heads);
#pragma omp parallel
  {
    std::vector<double> hidden(P * S);
#pragma omp for schedule(static)
    for (std::int64_t bh = 0; bh < pairs; ++bh) {
      const std::size_t b = static_cast<std::size_t>(bh) / dims.heads;
      const std::size_t h = static_cast<std::size_t>(bh) % dims.heads;
      std::fill(hidden.begin(), hidden.end(), 0.0);
      const double* dskip = in.d.data() + h * P;
      for (std::size_t t = 0; t < dims.time; ++t) {
        const Offsets o = offsets(dims, b, t, h);
        const double step = in.dt[o.dt];
        const double decay = std::exp(step * in.a[h]);
        const double* xt = in.x.data() + o.x;
        const double* bt = in.b.data() + o.bc;
        const double* ct = in.c.data() + o.bc;
        double* yt = y.data() + o.x;
        for (std::size_t p = 0; p < P; ++p) {
          double* hp = hidden.data() + p * S;
          const double u = step * xt[p];
          double acc = 0.0;
          for (std::size_t s = 0; s < S; ++s) {
            hp[s] = decay * hp[s] + u * bt[s];
            acc += hp[s] * ct[s];
          }
          yt[p] = acc + dskip[p] * xt[p];
        }
        if (keep) std::copy(hidden.begin(), hidden.end(), states.begin() + static_cast<std::ptrdiff_t>(o.x * S));
      }
    }
  }
}

void scan_chunked(const ScanDims& dims, std::size_t chunk, const ScanInputs& in,
                  std::span<double> y) {
  const std::size_t P = dims.head_dim;
  const std::size_t S = dims.state;
  const std::size_t T = dims.time;
  chunk = std::clamp<std::size_t>(chunk, 1, std::max<std::size_t>(T, 1));
  const auto pairs = static_cast<std::int64_t>(dims.batch * dims.heads);
#pragma omp parallel
  {
    std::vector<double> carried(P * S);
    std::vector<double> next(P * S);
    std::vector<double> cum(chunk);
#pragma omp for schedule(static)
    for (std::int64_t bh = 0; bh < pairs; ++bh) {
      const std::size_t b = static_cast<std::size_t>(bh) / dims.heads;
      const std::size_t h = static_cast<std::size_t>(bh) % dims.heads;
      const double ah = in.a[h];
      const double* dskip = in.d.data() + h * P;
      std::fill(carried.begin(), carried.end(), 0.0);
      for (std::size_t c0 = 0; c0 < T; c0 += chunk) {
        const std::size_t c1 = std::min(c0 + chunk, T);
        double running = 0.0;
        for (std::size_t t = c0; t < c1; ++t) {
          running += in.dt[offsets(dims, b, t, h).dt] * ah;
          cum[t - c0] = running;
        }
        for (std::size_t t = c0; t < c1; ++t) {
          const Offsets ot = offsets(dims, b, t, h);
          const double* ct = in.c.data() + ot.bc;
          const double* xt = in.x.data() + ot.x;
          double* yt = y.data() + ot.x;
          const double from_carry = std::exp(cum[t - c0]);
          for (std::size_t p = 0; p < P; ++p) {
            double acc = 0.0;
            for (std::size_t s = 0; s < S; ++s) acc += carried[p * S + s] * ct[s];
            yt[p] = dskip[p] * xt[p] + from_carry * acc;
          }
          for (std::size_t r = c0; r <= t; ++r) {
            const Offsets orr = offsets(dims, b, r, h);
            const double* br = in.b.data() + orr.bc;
            double cb = 0.0;
            for (std::size_t s = 0; s < S; ++s) cb += ct[s] * br[s];
            const double weight = cb * std::exp(cum[t - c0] - cum[r - c0]) * in.dt[orr.dt];
            const double* xr = in.x.data() + orr.x;
            for (std::size_t p = 0; p < P; ++p) yt[p] += weight * xr[p];
          }
        }
        const double last = cum[c1 - 1 - c0];
        const double carry_decay = std::exp(last);
        for (std::size_t i = 0; i < P * S; ++i) next[i] = carry_decay * carried[i];
        for (std::size_t r = c0; r < c1; ++r) {
          const Offsets orr = offsets(dims, b, r, h);
          const double w = std::exp(last - cum[r - c0]) * in.dt[orr.dt];
          const double* br = in.b.data() + orr.bc;
          const double* xr = in.x.data() + orr.x;
          for (std::size_t p = 0; p < P; ++p)
            for (std::size_t s = 0; s < S; ++s) next[p * S + s] += w * br[s] * xr[p];
        }
        carried.swap(next);
      }
    }
  }
}

void scan_backward(const ScanDims& dims, const ScanInputs& in, std::span<const double> grad_y,
                   const ScanGrads& grads) {
  const std::size_t P = dims.head_dim;
  const std::size_t S = dims.state;
  const auto heads = static_cast<std::int64_t>(dims.heads);
  // Parallel over heads only: gradients of a and D are shared across the batch
  // and are accumulated in batch order for reproducibility. Hidden states are
  // recomputed one sequence at a time rather than stored by the forward pass.
#pragma omp parallel
  {
    std::vector<double> gh(P * S);
    std::vector<double> states(dims.time * P * S);
#pragma omp for schedule(static)
    for (std::int64_t hi = 0; hi < heads; ++hi) {
      const auto h = static_cast<std::size_t>(hi);
      const double ah = in.a[h];
      const double* dskip = in.d.data() + h * P;
      double* gdskip = grads.d.data() + h * P;
      for (std::size_t b = 0; b < dims.batch; ++b) {
        std::fill(gh.begin(), gh.end(), 0.0);
        for (std::size_t t = 0; t < dims.time; ++t) {
          const Offsets o = offsets(dims, b, t, h);
          const double step = in.dt[o.dt];
          const double decay = std::exp(step * ah);
          const double* xt = in.x.data() + o.x;
          const double* bt = in.b.data() + o.bc;
          double* cur = states.data() + t * P * S;
          const double* prev = t > 0 ? cur - P * S : nullptr;
          for (std::size_t p = 0; p < P; ++p) {
            const double u = step * xt[p];
            for (std::size_t s = 0; s < S; ++s)
              cur[p * S + s] = (prev != nullptr ? decay * prev[p * S + s] : decay * 0.0) + u * bt[s];
          }
        }
        for (std::size_t tt = dims.time; tt-- > 0;) {
          const Offsets o = offsets(dims, b, tt, h);
          const double step = in.dt[o.dt];
          const double decay = std::exp(step * ah);
          const double* xt = in.x.data() + o.x;
          const double* bt = in.b.data() + o.bc;
          const double* ct = in.c.data() + o.bc;
          const double* gy = grad_y.data() + o.x;
          const double* ht = states.data() + tt * P * S;
          const double* hprev = tt > 0 ? ht - P * S : nullptr;
          double* gx = grads.x.data() + o.x;
          double* gb = grads.b.data() + o.bc;
          double* gc = grads.c.data() + o.bc;

          double gdecay = 0.0;
          double gstep = 0.0;
          for (std::size_t p = 0; p < P; ++p) {
            const double gyp = gy[p];
            double* ghp = gh.data() + p * S;
            const double* htp = ht + p * S;
            gdskip[p] += gyp * xt[p];
            double gxp = gyp * dskip[p];
            double gx_from_h = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
              gc[s] += gyp * htp[s];
              ghp[s] += gyp * ct[s];
              const double g = ghp[s];
              if (hprev != nullptr) gdecay += g * hprev[p * S + s];
              gstep += g * bt[s] * xt[p];
              gb[s] += step * g * xt[p];
              gx_from_h += g * bt[s];
              ghp[s] = g * decay;
            }
            gx[p] += gxp + step * gx_from_h;
          }
          grads.dt[o.dt] += gstep + gdecay * decay * ah;
          grads.a[h] += gdecay * decay * step;
        }
      }
    }
  }
}

namespace reference {

void scan_naive(const ScanDims& dims, const ScanInputs& in, std::span<double> y) {
  const std::size_t P = dims.head_dim;
  const std::size_t S = dims.state;
  std::vector<double> hidden(dims.batch * dims.heads * P * S, 0.0);
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t t = 0; t < dims.time; ++t)
      for (std::size_t h = 0; h < dims.heads; ++h) {
        const Offsets o = offsets(dims, b, t, h);
        const double decay = std::exp(in.dt[o.dt] * in.a[h]);
        for (std::size_t p = 0; p < P; ++p) {
          double out = in.d[h * P + p] * in.x[o.x + p];
          for (std::size_t s = 0; s < S; ++s) {
            double& hv = hidden[((b * dims.heads + h) * P + p) * S + s];
            hv = decay * hv + in.dt[o.dt] * in.b[o.bc + s] * in.x[o.x + p];
            out += in.c[o.bc + s] * hv;
          }
          y[o.x + p] = out;
        }
      }
}

}  // namespace reference
}  // namespace pursuit::kernels
