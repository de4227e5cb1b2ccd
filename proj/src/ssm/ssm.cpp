#include "pursuit/ssm/ssm.hpp"

#include <cmath>
#include <stdexcept>

#include "pursuit/autodiff/init.hpp"
#include "pursuit/autodiff/ops.hpp"
#include "pursuit/kernels/conv.hpp"
#include "pursuit/kernels/scan.hpp"

namespace pursuit::ssm {

using ad::DiffArray;
using ad::Shape;

void SsmConfig::validate() const {
  if (d_model == 0 || expand == 0 || n_heads == 0 || d_state == 0 || conv_width == 0)
    throw std::invalid_argument("SsmConfig: all sizes must be positive");
  if (d_inner() % n_heads != 0)
    throw std::invalid_argument("SsmConfig: d_inner " + std::to_string(d_inner()) +
                                " is not divisible by n_heads " + std::to_string(n_heads));
  if (!(dt_init > 0.0)) throw std::invalid_argument("SsmConfig: dt_init must be positive");
}

PaddingMask::PaddingMask(std::size_t batch, std::size_t time, std::vector<std::uint8_t> valid)
    : batch_(batch), time_(time), valid_(std::move(valid)) {
  if (valid_.size() != batch_ * time_) throw std::invalid_argument("PaddingMask: flag count does not match shape");
  for (std::size_t b = 0; b < batch_; ++b) {
    bool seen_valid = false;
    for (std::size_t t = 0; t < time_; ++t) {
      if (valid_[b * time_ + t] != 0) {
        seen_valid = true;
      } else if (seen_valid) {
        throw std::invalid_argument("PaddingMask: row " + std::to_string(b) +
                                    " is not left-padded (valid positions must be a suffix)");
      }
    }
  }
}

PaddingMask PaddingMask::all_valid(std::size_t batch, std::size_t time) {
  return PaddingMask(batch, time, std::vector<std::uint8_t>(batch * time, 1));
}

PaddingMask PaddingMask::from_counts(std::size_t time, const std::vector<std::size_t>& counts) {
  std::vector<std::uint8_t> flags(counts.size() * time, 0);
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] > time) throw std::invalid_argument("PaddingMask: count exceeds sequence length");
    for (std::size_t t = time - counts[b]; t < time; ++t) flags[b * time + t] = 1;
  }
  return PaddingMask(counts.size(), time, std::move(flags));
}

std::size_t PaddingMask::count(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < time_; ++t) n += valid_[b * time_ + t] != 0;
  return n;
}

SsmBlockParams SsmBlockParams::from_store(const ad::ParamStore& store, const std::string& prefix) {
  auto get = [&](const char* leaf) { return store.get(prefix + "/" + leaf); };
  return {get("norm/g"),   get("norm/b"),   get("in_proj/w"), get("conv/w"), get("conv/b"),
          get("dt_proj/w"), get("dt_proj/b"), get("b_proj/w"),  get("c_proj/w"), get("a_raw"),
          get("d_skip"),   get("out_proj/w")};
}

void init_block(ad::ParamStore& store, const std::string& prefix, const SsmConfig& config,
                std::mt19937_64& rng) {
  config.validate();
  const std::size_t dm = config.d_model;
  const std::size_t di = config.d_inner();
  const std::size_t H = config.n_heads;
  const std::size_t S = config.d_state;
  const std::size_t K = config.conv_width;
  auto name = [&](const char* leaf) { return prefix + "/" + leaf; };
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(dm));
  const double inner_bound = 1.0 / std::sqrt(static_cast<double>(di));

  store.add(name("norm/g"), {dm}, std::vector<double>(dm, 1.0));
  store.add(name("norm/b"), {dm}, std::vector<double>(dm, 0.0));
  store.add(name("in_proj/w"), {dm, 2 * di}, ad::uniform_values(dm * 2 * di, in_bound, rng));
  store.add(name("conv/w"), {di, K}, ad::uniform_values(di * K, 1.0 / std::sqrt(static_cast<double>(K)), rng));
  store.add(name("conv/b"), {di}, std::vector<double>(di, 0.0));
  store.add(name("dt_proj/w"), {di, H}, ad::uniform_values(di * H, inner_bound, rng));
  // softplus(dt_bias) == dt_init
  const double dt_bias = std::log(std::expm1(config.dt_init));
  store.add(name("dt_proj/b"), {H}, std::vector<double>(H, dt_bias));
  store.add(name("b_proj/w"), {di, H * S}, ad::uniform_values(di * H * S, inner_bound, rng));
  store.add(name("c_proj/w"), {di, H * S}, ad::uniform_values(di * H * S, inner_bound, rng));
  // Decay rates 1..H per head: a_h = -(h + 1).
  std::vector<double> a_raw(H);
  for (std::size_t h = 0; h < H; ++h) a_raw[h] = std::log(std::expm1(static_cast<double>(h + 1)));
  store.add(name("a_raw"), {H}, std::move(a_raw));
  store.add(name("d_skip"), {H, config.head_dim()}, std::vector<double>(di, 1.0));
  store.add(name("out_proj/w"), {di, dm}, ad::uniform_values(di * dm, inner_bound, rng));
}

namespace {

kernels::ScanInputs inputs_of(const ScanProblem& p) { return {p.x, p.dt, p.a, p.b, p.c, p.d}; }

kernels::ScanDims dims_of(const ScanProblem& p) { return {1, p.time, p.heads, p.head_dim, p.state}; }

void check_problem(const ScanProblem& p) {
  const auto d = dims_of(p);
  if (p.x.size() != d.x_size() || p.dt.size() != d.dt_size() || p.a.size() != p.heads ||
      p.b.size() != d.bc_size() || p.c.size() != d.bc_size() || p.d.size() != d.d_size())
    throw ad::ShapeError("selective scan: array sizes do not match the declared dimensions");
}

}  // namespace

std::vector<double> selective_scan_naive(const ScanProblem& problem) {
  check_problem(problem);
  std::vector<double> y(problem.x.size());
  kernels::reference::scan_naive(dims_of(problem), inputs_of(problem), y);
  return y;
}

std::vector<double> selective_scan_chunked(const ScanProblem& problem, std::size_t chunk) {
  check_problem(problem);
  if (chunk == 0) throw std::invalid_argument("selective_scan_chunked: chunk must be at least 1");
  std::vector<double> y(problem.x.size());
  kernels::scan_chunked(dims_of(problem), chunk, inputs_of(problem), y);
  return y;
}

DiffArray selective_scan(const DiffArray& x, const DiffArray& dt, const DiffArray& a, const DiffArray& b,
                         const DiffArray& c, const DiffArray& d, std::size_t chunk) {
  ad::check_finite("selective_scan", {&x, &dt, &a, &b, &c, &d});
  if (x.rank() != 4 || dt.rank() != 3 || a.rank() != 1 || b.rank() != 4 || c.rank() != 4 || d.rank() != 2)
    throw ad::ShapeError("selective_scan: expected x [B,T,H,P], dt [B,T,H], a [H], b/c [B,T,H,S], d [H,P]; got x " +
                         ad::to_string(x.shape()) + ", b " + ad::to_string(b.shape()));
  const kernels::ScanDims dims{x.dim(0), x.dim(1), x.dim(2), x.dim(3), b.dim(3)};
  const Shape dt_shape{dims.batch, dims.time, dims.heads};
  const Shape bc_shape{dims.batch, dims.time, dims.heads, dims.state};
  if (dt.shape() != dt_shape || a.shape() != Shape{dims.heads} || b.shape() != bc_shape ||
      c.shape() != bc_shape || d.shape() != Shape{dims.heads, dims.head_dim})
    throw ad::ShapeError("selective_scan: inconsistent shapes, x " + ad::to_string(x.shape()) + " vs dt " +
                         ad::to_string(dt.shape()) + ", b " + ad::to_string(b.shape()) + ", c " +
                         ad::to_string(c.shape()) + ", d " + ad::to_string(d.shape()));

  const kernels::ScanInputs in{x.values(), dt.values(), a.values(), b.values(), c.values(), d.values()};
  std::vector<double> y(dims.x_size());
  if (chunk == 0) {
    kernels::scan_recurrent(dims, in, y, {});
  } else {
    kernels::scan_chunked(dims, chunk, in, y);
  }

  return ad::make_result("selective_scan", x.shape(), std::move(y), {x, dt, a, b, c, d},
                         [dims](ad::Node& self) {
                           auto val = [&](std::size_t i) -> std::span<const double> { return self.parents[i]->value; };
                           const kernels::ScanInputs in{val(0), val(1), val(2), val(3), val(4), val(5)};
                           // Every input receives a buffer; constants simply discard it.
                           std::vector<std::vector<double>> tmp(6);
                           auto grad_of = [&](std::size_t i) -> std::span<double> {
                             ad::Node& p = *self.parents[i];
                             if (p.requires_grad) return p.grad_buffer();
                             tmp[i].assign(p.value.size(), 0.0);
                             return tmp[i];
                           };
                           const kernels::ScanGrads grads{grad_of(0), grad_of(1), grad_of(2),
                                                          grad_of(3), grad_of(4), grad_of(5)};
                           kernels::scan_backward(dims, in, self.grad, grads);
                         });
}

DiffArray causal_conv(const DiffArray& x, const DiffArray& w, const DiffArray& bias) {
  ad::check_finite("causal_conv", {&x, &w, &bias});
  if (x.rank() != 3 || w.rank() != 2 || w.dim(0) != x.dim(2) || bias.shape() != Shape{x.dim(2)})
    throw ad::ShapeError("causal_conv: expected x [B,T,C], w [C,K], bias [C]; got " + ad::to_string(x.shape()) +
                         ", " + ad::to_string(w.shape()) + ", " + ad::to_string(bias.shape()));
  const kernels::ConvDims dims{x.dim(0), x.dim(1), x.dim(2), w.dim(1)};
  std::vector<double> y(x.size());
  kernels::causal_conv_forward(dims, x.values(), w.values(), bias.values(), y);
  return ad::make_result("causal_conv", x.shape(), std::move(y), {x, w, bias}, [dims](ad::Node& self) {
    auto grad_of = [&](std::size_t i) -> std::span<double> {
      ad::Node& p = *self.parents[i];
      return p.requires_grad ? p.grad_buffer() : std::span<double>{};
    };
    kernels::causal_conv_backward(dims, self.parents[0]->value, self.parents[1]->value, self.grad, grad_of(0),
                                  grad_of(1), grad_of(2));
  });
}

DiffArray mamba2_forward(const SsmBlockParams& p, const SsmConfig& config, const DiffArray& seq,
                         const PaddingMask* mask) {
  if (seq.rank() != 3 || seq.dim(2) != config.d_model)
    throw ad::ShapeError("mamba2_forward: expected [B, T, " + std::to_string(config.d_model) + "], got " +
                         ad::to_string(seq.shape()));
  const std::size_t B = seq.dim(0);
  const std::size_t T = seq.dim(1);
  if (mask != nullptr && (mask->batch() != B || mask->time() != T))
    throw ad::ShapeError("mamba2_forward: mask [" + std::to_string(mask->batch()) + ", " +
                         std::to_string(mask->time()) + "] does not match sequence " + ad::to_string(seq.shape()));
  const std::size_t di = config.d_inner();
  const std::size_t H = config.n_heads;
  const std::size_t P = config.head_dim();
  const std::size_t S = config.d_state;
  const ad::Mask rows = mask != nullptr ? mask->row_mask() : ad::Mask{};
  auto apply_mask = [&](const DiffArray& v) { return mask != nullptr ? ad::masked_fill(v, rows, 0.0) : v; };

  const DiffArray normed = ad::add(ad::mul(ad::layer_norm(seq, config.norm_eps), p.norm_g), p.norm_b);
  const DiffArray projected = ad::matmul(normed, p.in_proj_w);
  const DiffArray x = apply_mask(ad::slice(projected, 2, 0, di));
  const DiffArray gate = ad::slice(projected, 2, di, 2 * di);
  const DiffArray xc = apply_mask(ad::silu(causal_conv(x, p.conv_w, p.conv_b)));

  const DiffArray dt = apply_mask(ad::softplus(ad::add(ad::matmul(xc, p.dt_w), p.dt_b)));
  const DiffArray bm = ad::reshape(ad::matmul(xc, p.b_w), {B, T, H, S});
  const DiffArray cm = ad::reshape(ad::matmul(xc, p.c_w), {B, T, H, S});
  const DiffArray a = ad::neg(ad::softplus(p.a_raw));

  const DiffArray y = selective_scan(ad::reshape(xc, {B, T, H, P}), dt, a, bm, cm, p.d_skip, config.scan_chunk);
  const DiffArray gated = ad::mul(ad::reshape(y, {B, T, di}), ad::silu(gate));
  return apply_mask(ad::add(seq, ad::matmul(gated, p.out_proj_w)));
}

DiffArray bimamba2_forward(const SsmBlockParams& forward, const SsmBlockParams& backward, const SsmConfig& config,
                           const DiffArray& seq) {
  const DiffArray ahead = mamba2_forward(forward, config, seq, nullptr);
  const DiffArray behind = ad::flip(mamba2_forward(backward, config, ad::flip(seq, 1), nullptr), 1);
  return ad::add(ahead, behind);
}

}  // namespace pursuit::ssm
