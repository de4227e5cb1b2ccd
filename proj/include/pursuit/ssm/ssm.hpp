#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pursuit/autodiff/diff_array.hpp"
#include "pursuit/autodiff/param_store.hpp"

namespace pursuit::ssm {

struct SsmConfig {
  std::size_t d_model = 64;
  std::size_t expand = 2;
  std::size_t n_heads = 4;
  std::size_t d_state = 16;
  std::size_t conv_width = 4;
  double dt_init = 0.1;       // initial step size after softplus
  std::size_t scan_chunk = 0;  // 0 = plain recurrence, otherwise segmented scan
  double norm_eps = 1e-5;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t head_dim() const { return d_inner() / n_heads; }
  void validate() const;
};

/// Per-(batch, time) validity flags. Valid positions of each row form a
/// contiguous suffix (sequences are left-padded).
class PaddingMask {
 public:
  PaddingMask() = default;
  PaddingMask(std::size_t batch, std::size_t time, std::vector<std::uint8_t> valid);

  static PaddingMask all_valid(std::size_t batch, std::size_t time);
  /// Row b has its last counts[b] positions valid.
  static PaddingMask from_counts(std::size_t time, const std::vector<std::size_t>& counts);

  std::size_t batch() const { return batch_; }
  std::size_t time() const { return time_; }
  bool valid(std::size_t b, std::size_t t) const { return valid_[b * time_ + t] != 0; }
  std::size_t count(std::size_t b) const;
  const std::vector<std::uint8_t>& flags() const { return valid_; }
  ad::Mask row_mask() const { return {{batch_, time_}, valid_}; }

 private:
  std::size_t batch_ = 0;
  std::size_t time_ = 0;
  std::vector<std::uint8_t> valid_;
};

/// Leaf handles of one selective-SSM block.
///
/// Store layout under `prefix`:
///   norm/g, norm/b        [d_model]
///   in_proj/w             [d_model, 2*d_inner]   (x branch, then gate)
///   conv/w, conv/b        [d_inner, conv_width], [d_inner]
///   dt_proj/w, dt_proj/b  [d_inner, n_heads], [n_heads]
///   b_proj/w, c_proj/w    [d_inner, n_heads*d_state]
///   a_raw                 [n_heads]     decay a = -softplus(a_raw) < 0
///   d_skip                [n_heads, head_dim]
///   out_proj/w            [d_inner, d_model]
struct SsmBlockParams {
  ad::DiffArray norm_g, norm_b;
  ad::DiffArray in_proj_w;
  ad::DiffArray conv_w, conv_b;
  ad::DiffArray dt_w, dt_b;
  ad::DiffArray b_w, c_w;
  ad::DiffArray a_raw;
  ad::DiffArray d_skip;
  ad::DiffArray out_proj_w;

  static SsmBlockParams from_store(const ad::ParamStore& store, const std::string& prefix);
};

void init_block(ad::ParamStore& store, const std::string& prefix, const SsmConfig& config,
                std::mt19937_64& rng);

/// Unbatched scan problem: x [T,H,P], dt [T,H], a [H], B/C [T,H,S], D [H,P].
struct ScanProblem {
  std::size_t time = 0, heads = 0, head_dim = 0, state = 0;
  std::vector<double> x, dt, a, b, c, d;
};

/// Reference recurrence, one step at a time.
std::vector<double> selective_scan_naive(const ScanProblem& problem);
/// Segmented scan carrying the hidden state across chunks of `chunk` steps.
std::vector<double> selective_scan_chunked(const ScanProblem& problem, std::size_t chunk);

/// Differentiable batched scan. x [B,T,H,P], dt [B,T,H], a [H], b/c [B,T,H,S],
/// d [H,P] -> y [B,T,H,P].
ad::DiffArray selective_scan(const ad::DiffArray& x, const ad::DiffArray& dt, const ad::DiffArray& a,
                             const ad::DiffArray& b, const ad::DiffArray& c, const ad::DiffArray& d,
                             std::size_t chunk = 0);

/// Differentiable causal depthwise convolution: x [B,T,C], w [C,K], bias [C].
ad::DiffArray causal_conv(const ad::DiffArray& x, const ad::DiffArray& w, const ad::DiffArray& bias);

/// Causal pre-norm residual block over seq [B,T,d_model]. Masked positions
/// are zeroed on entry, get step size 0 (the state skips them) and are zeroed
/// on exit. `mask` may be null for unpadded input.
ad::DiffArray mamba2_forward(const SsmBlockParams& params, const SsmConfig& config, const ad::DiffArray& seq,
                             const PaddingMask* mask = nullptr);

/// Forward block plus the time-reversed output of the backward block run on
/// the time-reversed sequence.
ad::DiffArray bimamba2_forward(const SsmBlockParams& forward, const SsmBlockParams& backward,
                               const SsmConfig& config, const ad::DiffArray& seq);

}  // namespace pursuit::ssm
