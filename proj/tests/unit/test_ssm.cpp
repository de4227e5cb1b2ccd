#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "../support/reference_block.hpp"
#include "pursuit/autodiff/grad_check.hpp"
#include "pursuit/autodiff/ops.hpp"
#include "pursuit/kernels/scan.hpp"
#include "pursuit/ssm/ssm.hpp"

using namespace pursuit;
using ad::DiffArray;
using ad::Shape;

namespace {

std::vector<double> draw(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& e : v) e = dist(rng);
  return v;
}

ssm::ScanProblem random_problem(std::size_t T, std::size_t H, std::size_t P, std::size_t S, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ssm::ScanProblem p{T, H, P, S, {}, {}, {}, {}, {}, {}};
  p.x = draw(T * H * P, rng, -1, 1);
  p.dt = draw(T * H, rng, 0.01, 0.8);
  p.a = draw(H, rng, -2.0, -0.1);
  p.b = draw(T * H * S, rng, -1, 1);
  p.c = draw(T * H * S, rng, -1, 1);
  p.d = draw(H * P, rng, -1, 1);
  return p;
}

// Direct per-element recurrence with an explicit state array.
std::vector<double> element_oracle(const ssm::ScanProblem& p) {
  const std::size_t T = p.time, H = p.heads, P = p.head_dim, S = p.state;
  std::vector<double> y(T * H * P, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t q = 0; q < P; ++q) {
      std::vector<double> state(S, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double dt = p.dt[t * H + h];
        const double x = p.x[(t * H + h) * P + q];
        double out = p.d[h * P + q] * x;
        for (std::size_t s = 0; s < S; ++s) {
          state[s] = std::exp(dt * p.a[h]) * state[s] + dt * p.b[(t * H + h) * S + s] * x;
          out += p.c[(t * H + h) * S + s] * state[s];
        }
        y[(t * H + h) * P + q] = out;
      }
    }
  return y;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ssm::SsmConfig small_config() {
  ssm::SsmConfig c;
  c.d_model = 8;
  c.expand = 2;
  c.n_heads = 2;
  c.d_state = 4;
  c.conv_width = 4;
  return c;
}

DiffArray seq_array(std::size_t B, std::size_t T, std::size_t D, std::mt19937_64& rng) {
  return DiffArray::constant({B, T, D}, draw(B * T * D, rng, -1.5, 1.5));
}

// Loss that touches every output with distinct weights.
DiffArray weighted_sum(const DiffArray& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  return ad::sum_all(ad::mul(y, DiffArray::constant(y.shape(), w)));
}

}  // namespace

TEST_CASE("scan with zero step size reduces to the skip term") {
  auto p = random_problem(7, 2, 3, 4, 11);
  std::fill(p.dt.begin(), p.dt.end(), 0.0);
  const auto y = ssm::selective_scan_naive(p);
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t q = 0; q < 3; ++q) {
        const std::size_t i = (t * 2 + h) * 3 + q;
        CHECK(y[i] == doctest::Approx(p.d[h * 3 + q] * p.x[i]).epsilon(1e-15));
      }
}

TEST_CASE("single-step scan matches the closed form") {
  const auto p = random_problem(1, 3, 2, 5, 12);
  const auto y = ssm::selective_scan_naive(p);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t q = 0; q < 2; ++q) {
      double cb = 0.0;
      for (std::size_t s = 0; s < 5; ++s) cb += p.c[h * 5 + s] * p.b[h * 5 + s];
      const double x = p.x[h * 2 + q];
      const double expect = p.dt[h] * x * cb + p.d[h * 2 + q] * x;
      CHECK(std::abs(y[h * 2 + q] - expect) < 1e-14);
    }
}

TEST_CASE("naive scan matches an element-loop oracle") {
  const auto p = random_problem(12, 4, 8, 16, 13);
  CHECK(max_abs_diff(ssm::selective_scan_naive(p), element_oracle(p)) < 1e-12);
}

TEST_CASE("segmented scan matches the recurrence for every chunk size") {
  const auto p = random_problem(25, 4, 8, 16, 14);
  const auto ref = ssm::selective_scan_naive(p);
  for (std::size_t chunk : {1u, 2u, 3u, 5u, 8u, 25u, 40u}) {
    CAPTURE(chunk);
    CHECK(max_abs_diff(ssm::selective_scan_chunked(p, chunk), ref) < 1e-10);
  }
  CHECK_THROWS_AS(ssm::selective_scan_chunked(p, 0), std::invalid_argument);
}

TEST_CASE("scan rejects inconsistent sizes") {
  auto p = random_problem(4, 2, 2, 3, 15);
  p.b.pop_back();
  CHECK_THROWS_AS(ssm::selective_scan_naive(p), ad::ShapeError);
}

TEST_CASE("hidden state is bounded by the accumulated input") {
  // With a < 0 and dt >= 0 the decay factor is in (0, 1], so each state
  // component is bounded by the running sum of |dt * b * x|.
  const auto p = random_problem(30, 2, 3, 4, 16);
  const kernels::ScanDims dims{1, p.time, p.heads, p.head_dim, p.state};
  std::vector<double> y(dims.x_size()), states(dims.batch * dims.time * dims.heads * dims.head_dim * dims.state);
  kernels::scan_recurrent(dims, {p.x, p.dt, p.a, p.b, p.c, p.d}, y, states);
  for (std::size_t h = 0; h < p.heads; ++h)
    for (std::size_t q = 0; q < p.head_dim; ++q)
      for (std::size_t s = 0; s < p.state; ++s) {
        double bound = 0.0;
        for (std::size_t t = 0; t < p.time; ++t) {
          bound += std::abs(p.dt[t * p.heads + h] * p.b[(t * p.heads + h) * p.state + s] *
                            p.x[(t * p.heads + h) * p.head_dim + q]);
          const double st = states[((t * p.heads + h) * p.head_dim + q) * p.state + s];
          CHECK(std::abs(st) <= bound + 1e-15);
        }
      }
}

TEST_CASE("batched differentiable scan agrees with the per-row recurrence") {
  const std::size_t B = 3, T = 9, H = 2, P = 3, S = 4;
  std::vector<ssm::ScanProblem> rows;
  for (std::size_t b = 0; b < B; ++b) rows.push_back(random_problem(T, H, P, S, 100 + b));
  auto stack = [&](auto member) {
    std::vector<double> out;
    for (const auto& r : rows) out.insert(out.end(), (r.*member).begin(), (r.*member).end());
    return out;
  };
  const DiffArray x = DiffArray::constant({B, T, H, P}, stack(&ssm::ScanProblem::x));
  const DiffArray dt = DiffArray::constant({B, T, H}, stack(&ssm::ScanProblem::dt));
  const DiffArray bm = DiffArray::constant({B, T, H, S}, stack(&ssm::ScanProblem::b));
  const DiffArray cm = DiffArray::constant({B, T, H, S}, stack(&ssm::ScanProblem::c));
  // a and d are shared across the batch.
  for (auto& r : rows) {
    r.a = rows[0].a;
    r.d = rows[0].d;
  }
  const DiffArray a = DiffArray::constant({H}, rows[0].a);
  const DiffArray d = DiffArray::constant({H, P}, rows[0].d);
  for (std::size_t chunk : {0u, 4u}) {
    const DiffArray y = ssm::selective_scan(x, dt, a, bm, cm, d, chunk);
    for (std::size_t b = 0; b < B; ++b) {
      const auto ref = ssm::selective_scan_naive(rows[b]);
      CHECK(max_abs_diff(y.values().subspan(b * T * H * P, T * H * P), ref) < 1e-12);
    }
  }
}

TEST_CASE("scan op gradients match central differences") {
  std::mt19937_64 rng(17);
  const std::size_t B = 2, T = 6, H = 2, P = 2, S = 3;
  const DiffArray x = DiffArray::constant({B, T, H, P}, draw(B * T * H * P, rng, -1, 1));
  const DiffArray dt = DiffArray::constant({B, T, H}, draw(B * T * H, rng, 0.05, 0.6));
  const DiffArray a = DiffArray::constant({H}, draw(H, rng, -1.5, -0.2));
  const DiffArray bm = DiffArray::constant({B, T, H, S}, draw(B * T * H * S, rng, -1, 1));
  const DiffArray cm = DiffArray::constant({B, T, H, S}, draw(B * T * H * S, rng, -1, 1));
  const DiffArray d = DiffArray::constant({H, P}, draw(H * P, rng, -1, 1));
  for (std::size_t chunk : {0u, 4u}) {
    CAPTURE(chunk);
    auto f = [&](int which) {
      return [=](const DiffArray& v) {
        return weighted_sum(ssm::selective_scan(which == 0 ? v : x, which == 1 ? v : dt, which == 2 ? v : a,
                                                which == 3 ? v : bm, which == 4 ? v : cm, which == 5 ? v : d,
                                                chunk));
      };
    };
    CHECK(ad::grad_check(f(0), x) < 1e-7);
    CHECK(ad::grad_check(f(1), dt) < 1e-7);
    CHECK(ad::grad_check(f(2), a) < 1e-7);
    CHECK(ad::grad_check(f(3), bm) < 1e-7);
    CHECK(ad::grad_check(f(4), cm) < 1e-7);
    CHECK(ad::grad_check(f(5), d) < 1e-7);
  }
}

TEST_CASE("causal convolution gradients and causality") {
  std::mt19937_64 rng(18);
  const DiffArray x = DiffArray::constant({2, 7, 3}, draw(42, rng, -1, 1));
  const DiffArray w = DiffArray::constant({3, 4}, draw(12, rng, -1, 1));
  const DiffArray bias = DiffArray::constant({3}, draw(3, rng, -1, 1));
  CHECK(ad::grad_check([&](const DiffArray& v) { return weighted_sum(ssm::causal_conv(v, w, bias)); }, x) < 1e-8);
  CHECK(ad::grad_check([&](const DiffArray& v) { return weighted_sum(ssm::causal_conv(x, v, bias)); }, w) < 1e-8);
  CHECK(ad::grad_check([&](const DiffArray& v) { return weighted_sum(ssm::causal_conv(x, w, v)); }, bias) < 1e-8);

  // Tap k = width-1 multiplies the current step.
  const DiffArray y = ssm::causal_conv(x, w, bias);
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t c = 0; c < 3; ++c) {
    const double expect = bias.values()[c] + wv[c * 4 + 3] * xv[c];
    CHECK(std::abs(y.values()[c] - expect) < 1e-15);
  }
}

TEST_CASE("padding masks require a valid suffix") {
  CHECK_NOTHROW(ssm::PaddingMask(1, 4, {0, 0, 1, 1}));
  CHECK_NOTHROW(ssm::PaddingMask(1, 3, {0, 0, 0}));
  CHECK_THROWS_AS(ssm::PaddingMask(1, 4, {0, 1, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(ssm::PaddingMask(1, 3, {1, 1}), std::invalid_argument);
  const auto m = ssm::PaddingMask::from_counts(5, {5, 2, 0});
  CHECK(m.count(0) == 5);
  CHECK(m.count(1) == 2);
  CHECK(m.count(2) == 0);
  CHECK_FALSE(m.valid(1, 2));
  CHECK(m.valid(1, 3));
}

TEST_CASE("config validation") {
  ssm::SsmConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ssm::SsmConfig{};
  c.d_state = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("block forward matches the plain-loop reference") {
  for (const auto& [config, B, T] : {std::tuple{ssm::SsmConfig{}, std::size_t{2}, std::size_t{8}},
                                     std::tuple{small_config(), std::size_t{3}, std::size_t{11}}}) {
    std::mt19937_64 rng(19);
    ad::ParamStore store;
    ssm::init_block(store, "blk", config, rng);
    // Perturb the norm affine so it is exercised.
    for (const char* leaf : {"norm/g", "norm/b", "conv/b", "dt_proj/b"}) {
      auto v = store.get(std::string("blk/") + leaf).mutable_values();
      for (double& e : v) e += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
    const DiffArray seq = seq_array(B, T, config.d_model, rng);
    const auto expect = testing::reference_block(store, "blk", config, {seq.values().begin(), seq.values().end()}, B, T);
    for (std::size_t chunk : {0u, 3u}) {
      auto cfg = config;
      cfg.scan_chunk = chunk;
      const auto params = ssm::SsmBlockParams::from_store(store, "blk");
      CHECK(max_abs_diff(ssm::mamba2_forward(params, cfg, seq).values(), expect) < 1e-12);
    }
  }
}

TEST_CASE("block initialisation") {
  std::mt19937_64 rng(20);
  ad::ParamStore store;
  const ssm::SsmConfig config;
  ssm::init_block(store, "t", config, rng);
  CHECK(store.get("t/in_proj/w").shape() == Shape{64, 256});
  CHECK(store.get("t/conv/w").shape() == Shape{128, 4});
  CHECK(store.get("t/b_proj/w").shape() == Shape{128, 64});
  CHECK(store.get("t/d_skip").shape() == Shape{4, 32});
  for (std::size_t h = 0; h < 4; ++h) {
    const double a = -ad::softplus_value(store.get("t/a_raw").values()[h]);
    CHECK(a == doctest::Approx(-static_cast<double>(h + 1)).epsilon(1e-12));
  }
  CHECK(ad::softplus_value(store.get("t/dt_proj/b").values()[0]) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(ssm::init_block(store, "t", config, rng), std::invalid_argument);
}

TEST_CASE("left padding does not change the valid outputs") {
  const auto config = small_config();
  std::mt19937_64 rng(21);
  ad::ParamStore store;
  ssm::init_block(store, "blk", config, rng);
  const auto params = ssm::SsmBlockParams::from_store(store, "blk");
  const std::size_t T = 8, D = config.d_model;
  for (std::size_t valid = 1; valid <= T; ++valid) {
    CAPTURE(valid);
    const DiffArray padded = seq_array(1, T, D, rng);  // padding rows hold arbitrary values
    const auto pv = padded.values();
    const DiffArray tail = DiffArray::constant({1, valid, D}, {pv.begin() + (T - valid) * D, pv.end()});
    const auto mask = ssm::PaddingMask::from_counts(T, {valid});
    const DiffArray y = ssm::mamba2_forward(params, config, padded, &mask);
    const DiffArray ref = ssm::mamba2_forward(params, config, tail);
    CHECK(max_abs_diff(y.values().subspan((T - valid) * D), ref.values()) < 1e-10);
    for (std::size_t i = 0; i < (T - valid) * D; ++i) CHECK(y.values()[i] == 0.0);
  }
}

TEST_CASE("fully padded rows produce zeros and leave other rows untouched") {
  const auto config = small_config();
  std::mt19937_64 rng(22);
  ad::ParamStore store;
  ssm::init_block(store, "blk", config, rng);
  const auto params = ssm::SsmBlockParams::from_store(store, "blk");
  const DiffArray seq = seq_array(2, 5, config.d_model, rng);
  const auto mask = ssm::PaddingMask::from_counts(5, {0, 5});
  const DiffArray y = ssm::mamba2_forward(params, config, seq, &mask);
  const DiffArray full = ssm::mamba2_forward(params, config, seq);
  const std::size_t row = 5 * config.d_model;
  for (std::size_t i = 0; i < row; ++i) CHECK(y.values()[i] == 0.0);
  CHECK(max_abs_diff(y.values().subspan(row), full.values().subspan(row)) == 0.0);
}

TEST_CASE("forward block is causal") {
  const auto config = small_config();
  std::mt19937_64 rng(23);
  ad::ParamStore store;
  ssm::init_block(store, "blk", config, rng);
  const auto params = ssm::SsmBlockParams::from_store(store, "blk");
  const std::size_t T = 9, D = config.d_model;
  const DiffArray seq = seq_array(1, T, D, rng);
  const DiffArray base = ssm::mamba2_forward(params, config, seq);
  for (std::size_t k = 0; k < T; ++k) {
    std::vector<double> v(seq.values().begin(), seq.values().end());
    for (std::size_t j = 0; j < D; ++j) v[k * D + j] += 0.5;
    const DiffArray y = ssm::mamba2_forward(params, config, DiffArray::constant({1, T, D}, v));
    CHECK(max_abs_diff(y.values().subspan(0, k * D), base.values().subspan(0, k * D)) == 0.0);
    CHECK(max_abs_diff(y.values().subspan(k * D, D), base.values().subspan(k * D, D)) > 0.0);
  }
}

TEST_CASE("bidirectional block composes two directional references") {
  const ssm::SsmConfig config;
  std::mt19937_64 rng(24);
  ad::ParamStore store;
  ssm::init_block(store, "fwd", config, rng);
  ssm::init_block(store, "bwd", config, rng);
  const std::size_t B = 2, T = 4, D = config.d_model;
  const DiffArray seq = seq_array(B, T, D, rng);
  const std::vector<double> sv(seq.values().begin(), seq.values().end());
  const auto ahead = testing::reference_block(store, "fwd", config, sv, B, T);
  const auto behind = testing::reverse_time(
      testing::reference_block(store, "bwd", config, testing::reverse_time(sv, B, T, D), B, T), B, T, D);
  std::vector<double> expect(ahead.size());
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = ahead[i] + behind[i];
  const DiffArray y = ssm::bimamba2_forward(ssm::SsmBlockParams::from_store(store, "fwd"),
                                            ssm::SsmBlockParams::from_store(store, "bwd"), config, seq);
  CHECK(max_abs_diff(y.values(), expect) < 1e-12);

  // The output at the first position depends on the last one.
  std::vector<double> moved = sv;
  for (std::size_t j = 0; j < D; ++j) moved[(T - 1) * D + j] += 0.5;
  const DiffArray y2 = ssm::bimamba2_forward(ssm::SsmBlockParams::from_store(store, "fwd"),
                                             ssm::SsmBlockParams::from_store(store, "bwd"), config,
                                             DiffArray::constant({B, T, D}, moved));
  CHECK(max_abs_diff(y2.values().subspan(0, D), y.values().subspan(0, D)) > 0.0);
}

TEST_CASE("zero step size removes the state path from the block") {
  const auto config = small_config();
  std::mt19937_64 rng(25);
  ad::ParamStore store;
  ssm::init_block(store, "blk", config, rng);
  for (double& e : store.get("blk/dt_proj/w").mutable_values()) e = 0.0;
  for (double& e : store.get("blk/dt_proj/b").mutable_values()) e = -1000.0;
  const DiffArray seq = seq_array(2, 6, config.d_model, rng);
  const auto base = ssm::mamba2_forward(ssm::SsmBlockParams::from_store(store, "blk"), config, seq);
  CHECK(max_abs_diff(base.values(), testing::reference_block(store, "blk", config,
                                                             {seq.values().begin(), seq.values().end()}, 2, 6)) <
        1e-12);
  // With every state frozen at zero, the input and readout projections are irrelevant.
  for (double& e : store.get("blk/b_proj/w").mutable_values()) e *= -3.0;
  for (double& e : store.get("blk/c_proj/w").mutable_values()) e += 0.7;
  for (double& e : store.get("blk/a_raw").mutable_values()) e += 2.0;
  const auto moved = ssm::mamba2_forward(ssm::SsmBlockParams::from_store(store, "blk"), config, seq);
  CHECK(max_abs_diff(moved.values(), base.values()) == 0.0);
}

TEST_CASE("block parameter gradients match central differences") {
  const auto config = small_config();
  std::mt19937_64 rng(26);
  ad::ParamStore store;
  ssm::init_block(store, "fwd", config, rng);
  ssm::init_block(store, "bwd", config, rng);
  const DiffArray seq = seq_array(2, 5, config.d_model, rng);
  const auto mask = ssm::PaddingMask::from_counts(5, {5, 3});
  auto masked_loss = [&] {
    return weighted_sum(ssm::mamba2_forward(ssm::SsmBlockParams::from_store(store, "fwd"), config, seq, &mask));
  };
  CHECK(ad::grad_check_store(masked_loss, store, 1e-5, 8) < 1e-5);
  auto bi_loss = [&] {
    return weighted_sum(ssm::bimamba2_forward(ssm::SsmBlockParams::from_store(store, "fwd"),
                                              ssm::SsmBlockParams::from_store(store, "bwd"), config, seq));
  };
  CHECK(ad::grad_check_store(bi_loss, store, 1e-5, 8) < 1e-5);
  // Input gradient through the whole block.
  CHECK(ad::grad_check(
            [&](const DiffArray& v) {
              return weighted_sum(ssm::mamba2_forward(ssm::SsmBlockParams::from_store(store, "fwd"), config, v));
            },
            seq) < 1e-5);
}
