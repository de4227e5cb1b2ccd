#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "../support/reference_block.hpp"
#include "pursuit/autodiff/grad_check.hpp"
#include "pursuit/autodiff/ops.hpp"
#include "pursuit/policy/policy.hpp"

using namespace pursuit;
using ad::DiffArray;
using policy::Policy;
using policy::PolicyBatch;
using policy::PolicyConfig;
using policy::Variant;

namespace {

std::vector<double> draw(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& e : v) e = dist(rng);
  return v;
}

PolicyConfig config_for(Variant v) {
  PolicyConfig c;
  c.variant = v;
  return c;
}

// Random batch; histories hold `count` valid rows and garbage in the padding.
PolicyBatch random_batch(std::size_t n, std::size_t rows, std::mt19937_64& rng, std::size_t L = 8) {
  PolicyBatch b(n, L);
  const std::size_t d = policy::observation_dim(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t count = 1 + r % L;
    b.append(draw(d, rng), draw(L * d, rng), count);
  }
  return b;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void zero_param(ad::ParamStore& store, const std::string& name) {
  for (double& e : store.get(name).mutable_values()) e = 0.0;
}

}  // namespace

TEST_CASE("observation layout") {
  CHECK(policy::observation_dim(2) == 13);
  CHECK(policy::observation_dim(6) == 29);
  policy::Observation o;
  o.self = {1, 2, 3, 4, 5};
  o.evader = {6, 7, 8, 9};
  o.peers = {{10, 11, 12, 13}, {14, 15, 16, 17}};
  const auto flat = o.flatten();
  CHECK(flat.size() == 17);
  CHECK(flat[9] == 10);
  const auto back = policy::Observation::unflatten(flat, 3);
  CHECK(back.flatten() == flat);
  CHECK_THROWS_AS(policy::Observation::unflatten(flat, 2), std::invalid_argument);
}

TEST_CASE("history keeps the last L observations, left-padded") {
  policy::History h(3, 2);
  CHECK(h.count() == 0);
  CHECK(h.window() == std::vector<double>(6, 0.0));
  h.push(std::vector<double>{1, 1});
  CHECK(h.count() == 1);
  CHECK(h.window() == std::vector<double>{0, 0, 0, 0, 1, 1});
  h.push(std::vector<double>{2, 2});
  CHECK(h.window() == std::vector<double>{0, 0, 1, 1, 2, 2});
  for (int t = 3; t <= 7; ++t) {
    h.push(std::vector<double>{double(t), double(t)});
    CHECK(h.count() == std::min<std::size_t>(t, 3));
  }
  CHECK(h.window() == std::vector<double>{5, 5, 6, 6, 7, 7});
  h.clear();
  CHECK(h.count() == 0);
  h.push(std::vector<double>{9, 9});
  CHECK(h.window() == std::vector<double>{0, 0, 0, 0, 9, 9});
  CHECK_THROWS_AS(h.push(std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("variant names round-trip") {
  for (Variant v : {Variant::full, Variant::no_history, Variant::no_relation, Variant::mlp})
    CHECK(policy::parse_variant(policy::variant_name(v)) == v);
  CHECK_THROWS_AS(policy::parse_variant("transformer"), std::invalid_argument);
}

TEST_CASE("parameter names follow the per-agent layout") {
  const std::set<std::string> groups{"temporal", "relational_fwd", "relational_bwd", "embed", "mha", "head_mu",
                                     "head_sigma"};
  std::mt19937_64 rng(1);
  ad::ParamStore store;
  Policy(config_for(Variant::full), 2, "agent0").init(store, rng);
  Policy(config_for(Variant::full), 2, "agent1").init(store, rng);
  std::size_t agent1 = 0;
  for (const auto& n : store.names()) {
    CAPTURE(n);
    const auto slash = n.find('/');
    const auto agent = n.substr(0, slash);
    CHECK((agent == "agent0" || agent == "agent1"));
    agent1 += agent == "agent1";
    const auto group = n.substr(slash + 1, n.find('/', slash + 1) - slash - 1);
    CHECK(groups.count(group) == 1);
  }
  CHECK(agent1 * 2 == store.size());
}

TEST_CASE("temporal encoder respects the history count") {
  std::mt19937_64 rng(2);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 2, "agent0");
  pol.init(store, rng);
  const std::size_t L = 8, d = 13, dm = 64;
  const auto obs = draw(d, rng);
  const auto hist = draw(L * d, rng);

  PolicyBatch one(2, L);
  one.append(obs, hist, 1);
  const auto f1 = pol.encode_temporal(store, one);
  CHECK(f1.shape() == ad::Shape{1, L, dm});
  std::size_t nonzero_rows = 0;
  for (std::size_t t = 0; t < L; ++t) {
    bool any = false;
    for (std::size_t j = 0; j < dm; ++j) any |= f1.values()[t * dm + j] != 0.0;
    nonzero_rows += any;
  }
  CHECK(nonzero_rows == 1);

  // Full history: no masking effect, same as running the block without a mask.
  PolicyBatch full(2, L);
  full.append(obs, hist, L);
  const auto ff = pol.encode_temporal(store, full);
  const auto embedded = ad::add(ad::matmul(DiffArray::constant({1, L, d}, hist), store.get("agent0/embed/history/w")),
                                store.get("agent0/embed/history/b"));
  const auto unmasked = ssm::mamba2_forward(ssm::SsmBlockParams::from_store(store, "agent0/temporal"),
                                            pol.config().ssm, embedded);
  CHECK(max_abs_diff(ff.values(), unmasked.values()) == 0.0);

  // Differing padding contents do not reach the valid outputs.
  for (std::size_t count = 1; count < L; ++count) {
    auto other = hist;
    for (std::size_t i = 0; i < (L - count) * d; ++i) other[i] = 5.0 * std::sin(double(i));
    PolicyBatch a(2, L), b(2, L);
    a.append(obs, hist, count);
    b.append(obs, other, count);
    CHECK(bit_equal(pol.encode_temporal(store, a).values(), pol.encode_temporal(store, b).values()));
  }

  PolicyBatch empty(2, L);
  empty.append(obs, hist, 0);
  CHECK_THROWS_AS(pol.encode_temporal(store, empty), std::invalid_argument);
}

TEST_CASE("relational encoder matches a hand-composed pipeline") {
  std::mt19937_64 rng(3);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 2, "agent0");
  pol.init(store, rng);
  for (const char* leaf : {"agent0/embed/norm/g", "agent0/embed/norm/b", "agent0/embed/self/b"})
    for (double& e : store.get(leaf).mutable_values()) e += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  const std::size_t dm = 64;
  auto batch = random_batch(2, 2, rng);
  const auto out = pol.encode_relational(store, batch);
  CHECK(out.shape() == ad::Shape{2, 3, dm});

  auto v = [&](const std::string& n) { return store.get("agent0/" + n).values(); };
  std::vector<double> tokens;
  for (std::size_t r = 0; r < 2; ++r) {
    const double* o = batch.obs.data() + r * 13;
    auto embed = [&](const std::string& which, const double* x, std::size_t in) {
      std::vector<double> t(dm);
      for (std::size_t j = 0; j < dm; ++j) {
        double s = v("embed/" + which + "/b")[j];
        for (std::size_t i = 0; i < in; ++i) s += x[i] * v("embed/" + which + "/w")[i * dm + j];
        t[j] = s;
      }
      double mu = 0, var = 0;
      for (double e : t) mu += e;
      mu /= dm;
      for (double e : t) var += (e - mu) * (e - mu);
      var /= dm;
      for (std::size_t j = 0; j < dm; ++j)
        tokens.push_back((t[j] - mu) / std::sqrt(var + 1e-5) * v("embed/norm/g")[j] + v("embed/norm/b")[j]);
    };
    embed("self", o, 5);
    embed("evader", o + 5, 4);
    embed("peer", o + 9, 4);
  }
  const auto& cfg = pol.config().ssm;
  const auto ahead = testing::reference_block(store, "agent0/relational_fwd", cfg, tokens, 2, 3);
  const auto behind = testing::reverse_time(
      testing::reference_block(store, "agent0/relational_bwd", cfg, testing::reverse_time(tokens, 2, 3, dm), 2, 3),
      2, 3, dm);
  std::vector<double> expect(ahead.size());
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = ahead[i] + behind[i];
  CHECK(max_abs_diff(out.values(), expect) < 1e-12);
}

TEST_CASE("identical peers can be swapped") {
  std::mt19937_64 rng(4);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 3, "agent0");
  pol.init(store, rng);
  policy::Observation o;
  o.self = {0.1, -0.4, 1, 0, 0.1};
  o.evader = {0.5, 0.3, 0.1, -0.2};
  o.peers = {{0.7, 0.2, 0.0, 0.1}, {0.7, 0.2, 0.0, 0.1}};
  PolicyBatch a(3, 8), b(3, 8);
  const auto f = o.flatten();
  std::swap(o.peers[0], o.peers[1]);
  a.append(f, std::vector<double>(8 * 17, 0.0), 1);
  b.append(o.flatten(), std::vector<double>(8 * 17, 0.0), 1);
  CHECK(bit_equal(pol.encode_relational(store, a).values(), pol.encode_relational(store, b).values()));
}

TEST_CASE("fused attention matches a dense oracle") {
  std::mt19937_64 rng(5);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 2, "agent0");
  pol.init(store, rng);
  const std::size_t B = 3, nt = 3, L = 8, dm = 64, nh = 4, dh = 16;
  const auto rel = DiffArray::constant({B, nt, dm}, draw(B * nt * dm, rng));
  const auto tem = DiffArray::constant({B, L, dm}, draw(B * L * dm, rng));
  const auto mask = ssm::PaddingMask::from_counts(L, {8, 3, 1});
  const auto h = pol.fuse(store, rel, tem, mask);
  REQUIRE(h.shape() == ad::Shape{B, dm});

  auto w = [&](const char* n) { return store.get(std::string("agent0/mha/") + n + "/w").values(); };
  auto project = [&](const double* x, const char* n, std::size_t j) {
    double s = 0;
    for (std::size_t i = 0; i < dm; ++i) s += x[i] * w(n)[i * dm + j];
    return s;
  };
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> pooled(dm, 0.0);
    for (std::size_t q = 0; q < nt; ++q) {
      const double* xq = rel.values().data() + (b * nt + q) * dm;
      std::vector<double> ctx(dm, 0.0);
      for (std::size_t head = 0; head < nh; ++head) {
        std::vector<double> logits(L, -INFINITY);
        double top = -INFINITY;
        for (std::size_t t = 0; t < L; ++t) {
          if (!mask.valid(b, t)) continue;
          const double* xk = tem.values().data() + (b * L + t) * dm;
          double s = 0;
          for (std::size_t e = 0; e < dh; ++e) s += project(xq, "q", head * dh + e) * project(xk, "k", head * dh + e);
          logits[t] = s / 4.0;
          top = std::max(top, logits[t]);
        }
        double z = 0;
        for (std::size_t t = 0; t < L; ++t) z += mask.valid(b, t) ? std::exp(logits[t] - top) : 0.0;
        for (std::size_t t = 0; t < L; ++t) {
          if (!mask.valid(b, t)) continue;
          const double a = std::exp(logits[t] - top) / z;
          const double* xv = tem.values().data() + (b * L + t) * dm;
          for (std::size_t e = 0; e < dh; ++e) ctx[head * dh + e] += a * project(xv, "v", head * dh + e);
        }
      }
      for (std::size_t j = 0; j < dm; ++j) pooled[j] += project(ctx.data(), "o", j) / nt;
    }
    CHECK(max_abs_diff(h.values().subspan(b * dm, dm), pooled) < 1e-12);
  }
}

TEST_CASE("attention with one valid key or uniform values ignores the query") {
  std::mt19937_64 rng(6);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 2, "agent0");
  pol.init(store, rng);
  const std::size_t L = 8, dm = 64;
  const auto tem = DiffArray::constant({1, L, dm}, draw(L * dm, rng));
  const auto single = ssm::PaddingMask::from_counts(L, {1});
  const auto h1 = pol.fuse(store, DiffArray::constant({1, 3, dm}, draw(3 * dm, rng)), tem, single);
  const auto h2 = pol.fuse(store, DiffArray::constant({1, 3, dm}, draw(3 * dm, rng, -5, 5)), tem, single);
  CHECK(max_abs_diff(h1.values(), h2.values()) < 1e-14);

  std::vector<double> same(L * dm);
  const auto row = draw(dm, rng);
  for (std::size_t t = 0; t < L; ++t) std::copy(row.begin(), row.end(), same.begin() + t * dm);
  const auto uniform = DiffArray::constant({1, L, dm}, same);
  const auto all = ssm::PaddingMask::all_valid(1, L);
  const auto u1 = pol.fuse(store, DiffArray::constant({1, 3, dm}, draw(3 * dm, rng)), uniform, all);
  const auto u2 = pol.fuse(store, DiffArray::constant({1, 3, dm}, draw(3 * dm, rng)), uniform, all);
  CHECK(max_abs_diff(u1.values(), u2.values()) < 1e-14);

  const auto none = ssm::PaddingMask::from_counts(L, {0});
  CHECK_THROWS_AS(pol.fuse(store, DiffArray::constant({1, 3, dm}, draw(3 * dm, rng)), tem, none),
                  std::invalid_argument);
}

TEST_CASE("action head closed form and bounds") {
  std::mt19937_64 rng(7);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::mlp), 2, "agent0");
  pol.init(store, rng);
  zero_param(store, "agent0/head_mu/w");
  zero_param(store, "agent0/head_sigma/w");
  const auto d = pol.action_head(store, DiffArray::constant({1, 64}, draw(64, rng)));
  CHECK(d.mu.values()[0] == 0.0);
  CHECK(d.mu.values()[1] == 0.0);
  CHECK(d.sigma.values()[0] == doctest::Approx(std::log(2.0) + 1e-3).epsilon(1e-15));
  CHECK(d.sigma.values()[1] == doctest::Approx(0.694147).epsilon(1e-6));

  for (double& e : store.get("agent0/head_mu/w").mutable_values()) e = 50.0;
  for (double& e : store.get("agent0/head_sigma/w").mutable_values()) e = -50.0;
  const auto big = pol.action_head(store, DiffArray::constant({4, 64}, draw(4 * 64, rng, -30, 30)));
  for (double m : big.mu.values()) CHECK(std::abs(m) <= 2.0);
  for (double s : big.sigma.values()) CHECK(s >= 1e-3);
}

TEST_CASE("mlp variant with zero weights matches the zero head") {
  std::mt19937_64 rng(8);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::mlp), 2, "agent0");
  pol.init(store, rng);
  for (const auto& n : store.names()) zero_param(store, n);
  const auto d = pol.forward(store, random_batch(2, 3, rng));
  for (double m : d.mu.values()) CHECK(m == 0.0);
  for (double s : d.sigma.values()) CHECK(s == doctest::Approx(std::log(2.0) + 1e-3).epsilon(1e-15));
}

TEST_CASE("ablation variants ignore what they should") {
  std::mt19937_64 rng(9);
  for (Variant v : {Variant::full, Variant::no_history, Variant::no_relation, Variant::mlp}) {
    CAPTURE(policy::variant_name(v));
    ad::ParamStore store;
    const Policy pol(config_for(v), 2, "agent0");
    pol.init(store, rng);
    const auto obs = draw(13, rng);
    const auto hist = draw(8 * 13, rng);
    PolicyBatch base(2, 8), other_hist(2, 8), other_peer(2, 8);
    base.append(obs, hist, 5);
    other_hist.append(obs, draw(8 * 13, rng), 7);
    auto moved = obs;
    for (std::size_t i = 9; i < 13; ++i) moved[i] += 0.3;
    other_peer.append(moved, hist, 5);
    const auto b = pol.forward(store, base);
    const bool same_hist = bit_equal(b.mu.values(), pol.forward(store, other_hist).mu.values());
    const bool same_peer = bit_equal(b.mu.values(), pol.forward(store, other_peer).mu.values());
    CHECK(same_hist == (v == Variant::no_history || v == Variant::mlp));
    CHECK(same_peer == (v == Variant::no_relation));
  }
}

TEST_CASE("batched forward is row-independent and bit-exact") {
  std::mt19937_64 rng(10);
  for (Variant v : {Variant::full, Variant::no_history, Variant::no_relation, Variant::mlp}) {
    CAPTURE(policy::variant_name(v));
    ad::ParamStore store;
    const Policy pol(config_for(v), 3, "agent2");
    pol.init(store, rng);
    const auto batch = random_batch(3, 9, rng);
    const auto all = pol.forward(store, batch);
    const std::size_t d = batch.obs_dim();
    for (std::size_t r = 0; r < batch.rows; ++r) {
      PolicyBatch one(3, 8);
      one.append(std::span(batch.obs).subspan(r * d, d), std::span(batch.history).subspan(r * 8 * d, 8 * d),
                 batch.counts[r]);
      const auto single = pol.forward(store, one);
      CHECK(bit_equal(single.mu.values(), all.mu.values().subspan(r * 2, 2)));
      CHECK(bit_equal(single.sigma.values(), all.sigma.values().subspan(r * 2, 2)));
    }
  }
}

TEST_CASE("sampling") {
  policy::ActionDistribution dist{{0.5, -1.0}, {0.3, 0.7}};
  std::mt19937_64 a(11), b(11);
  const auto s1 = policy::sample_action(dist, 0.2, 2.0, a);
  const auto s2 = policy::sample_action(dist, 0.2, 2.0, b);
  CHECK(s1.raw == s2.raw);
  CHECK(s1.log_prob == s2.log_prob);

  // Draw order z0, z1, z0', z1'.
  std::mt19937_64 c(12), d(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z0 = normal(d), z1 = normal(d), x0 = normal(d), x1 = normal(d);
  const auto s3 = policy::sample_action(dist, 0.25, 2.0, c);
  CHECK(s3.sample[0] == 0.5 + 0.3 * z0);
  CHECK(s3.sample[1] == -1.0 + 0.7 * z1);
  CHECK(s3.raw[0] == s3.sample[0] + 0.25 * x0);
  CHECK(s3.raw[1] == s3.sample[1] + 0.25 * x1);

  // Exploration noise moves the command but never the scored sample.
  for (double explore : {0.0, 0.5, 3.0}) {
    std::mt19937_64 h(12);
    const auto s = policy::sample_action(dist, explore, 2.0, h);
    CHECK(s.sample == s3.sample);
    CHECK(s.log_prob == s3.log_prob);
    CHECK(s.log_prob == policy::gaussian_log_prob_value(dist, s.sample));
  }

  // Tiny sigma, no exploration: the action sits on the mean.
  policy::ActionDistribution sharp{{1.25, -0.5}, {1e-3, 1e-3}};
  std::mt19937_64 e(13);
  for (int i = 0; i < 100; ++i) {
    const auto s = policy::sample_action(sharp, 0.0, 2.0, e);
    CHECK(std::abs(s.action[0] - 1.25) < 6e-3);
    CHECK(std::abs(s.action[1] + 0.5) < 6e-3);
  }
  // Clipping applies to the action, not to the stored sample.
  policy::ActionDistribution edge{{1.99, -1.99}, {1.0, 1.0}};
  std::mt19937_64 f(14);
  bool saw_clip = false;
  for (int i = 0; i < 200; ++i) {
    const auto s = policy::sample_action(edge, 0.5, 2.0, f);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(s.action[k]) <= 2.0);
      saw_clip |= std::abs(s.raw[k]) > 2.0;
      CHECK(s.action[k] == std::clamp(s.raw[k], -2.0, 2.0));
    }
    CHECK(s.log_prob == policy::gaussian_log_prob_value(edge, s.sample));
  }
  CHECK(saw_clip);
  std::mt19937_64 g(15);
  CHECK_THROWS_AS(policy::sample_action(dist, -0.1, 2.0, g), std::invalid_argument);
}

TEST_CASE("sample mean converges to mu") {
  policy::ActionDistribution dist{{0.4, -0.7}, {0.5, 0.2}};
  std::mt19937_64 rng(16);
  const int n = 100000;
  double s0 = 0, s1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto s = policy::sample_action(dist, 0.0, 2.0, rng);
    s0 += s.raw[0];
    s1 += s.raw[1];
  }
  CHECK(std::abs(s0 / n - 0.4) < 3 * 0.5 / std::sqrt(double(n)));
  CHECK(std::abs(s1 / n + 0.7) < 3 * 0.2 / std::sqrt(double(n)));
}

TEST_CASE("gaussian density closed forms") {
  policy::ActionDistribution unit{{0.3, -0.2}, {1.0, 1.0}};
  CHECK(policy::gaussian_log_prob_value(unit, unit.mu) == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-15));
  CHECK(policy::gaussian_log_prob_value(unit, unit.mu) == doctest::Approx(-1.837877).epsilon(1e-6));
  policy::ActionDistribution wide{{0.3, -0.2}, {2.0, 2.0}};
  CHECK(policy::gaussian_entropy_value(wide) - policy::gaussian_entropy_value(unit) ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));

  // Scalar and differentiable paths agree bit for bit.
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto mu = draw(2, rng, -2, 2), sigma = draw(2, rng, 1e-3, 2), a = draw(2, rng, -3, 3);
    policy::ActionDistribution dist{{mu[0], mu[1]}, {sigma[0], sigma[1]}};
    const double scalar = policy::gaussian_log_prob_value(dist, {a[0], a[1]});
    const double batched = policy::gaussian_log_prob(DiffArray::constant({1, 2}, mu), DiffArray::constant({1, 2}, sigma),
                                                     DiffArray::constant({1, 2}, a))
                               .item();
    CHECK(std::memcmp(&scalar, &batched, sizeof(double)) == 0);
    CHECK(policy::gaussian_entropy_value(dist) == policy::gaussian_entropy(DiffArray::constant({1, 2}, sigma)).item());
  }

  // d log p / d mu = (a - mu) / sigma^2.
  const auto mu = DiffArray::parameter({1, 2}, {0.2, -0.4});
  const auto sigma = DiffArray::constant({1, 2}, {0.6, 1.3});
  const auto a = DiffArray::constant({1, 2}, {0.9, -1.0});
  ad::backward(ad::sum_all(policy::gaussian_log_prob(mu, sigma, a)));
  CHECK(mu.grad()[0] == doctest::Approx((0.9 - 0.2) / 0.36).epsilon(1e-14));
  CHECK(mu.grad()[1] == doctest::Approx((-1.0 + 0.4) / 1.69).epsilon(1e-14));
  CHECK(ad::grad_check([&](const DiffArray& m) { return ad::sum_all(policy::gaussian_log_prob(m, sigma, a)); }, mu) < 1e-9);
  CHECK(ad::grad_check([&](const DiffArray& s) { return ad::sum_all(policy::gaussian_log_prob(mu, s, a)); }, sigma) <
        1e-8);
}

TEST_CASE("evaluate_log_prob reproduces the sampling-time density") {
  std::mt19937_64 rng(18);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 2, "agent0");
  pol.init(store, rng);
  policy::History hist(8, 13);
  for (int t = 0; t < 11; ++t) {
    const auto obs = draw(13, rng);
    hist.push(obs);
    PolicyBatch b(2, 8);
    b.append(obs, hist);
    const auto dist = pol.forward(store, b).row(0);
    const auto s = policy::sample_action(dist, 0.3, 2.0, rng);
    const auto [lp, ent] = policy::evaluate_log_prob(pol, store, obs, hist, s.sample);
    CHECK(std::memcmp(&lp, &s.log_prob, sizeof(double)) == 0);
    CHECK(ent == policy::gaussian_entropy_value(dist));
  }
}

TEST_CASE("policy decision is deterministic") {
  std::mt19937_64 rng(19);
  ad::ParamStore store;
  const Policy pol(config_for(Variant::full), 2, "agent0");
  pol.init(store, rng);
  const auto batch = random_batch(2, 1, rng);
  std::mt19937_64 a(20), b(20);
  const auto s1 = policy::sample_action(pol.forward(store, batch).row(0), 0.4, 2.0, a);
  const auto s2 = policy::sample_action(pol.forward(store, batch).row(0), 0.4, 2.0, b);
  CHECK(s1.raw == s2.raw);
  CHECK(s1.log_prob == s2.log_prob);
}

TEST_CASE("end-to-end log-prob gradient") {
  for (Variant v : {Variant::full, Variant::mlp}) {
    CAPTURE(policy::variant_name(v));
    std::mt19937_64 rng(21);
    ad::ParamStore store;
    const Policy pol(config_for(v), 2, "agent0");
    pol.init(store, rng);
    // Larger head weights so the gradient reaches every branch with some size.
    for (const char* n : {"agent0/head_mu/w", "agent0/head_sigma/w"})
      for (double& e : store.get(n).mutable_values()) e *= 30.0;
    const auto batch = random_batch(2, 2, rng);
    const auto actions = DiffArray::constant({2, 2}, {0.3, -0.8, 1.1, 0.2});
    auto loss = [&] {
      const auto d = pol.forward(store, batch);
      return ad::sum_all(policy::gaussian_log_prob(d.mu, d.sigma, actions));
    };
    CHECK(ad::grad_check_store(loss, store, 1e-5, 8) < 1e-4);
  }
}

TEST_CASE("bounds hold for random parameters and inputs") {
  std::mt19937_64 rng(22);
  std::size_t violations = 0;
  for (int trial = 0; trial < 10; ++trial) {
    ad::ParamStore store;
    auto cfg = config_for(Variant::mlp);
    cfg.head_init = 20.0;
    const Policy pol(cfg, 2, "agent0");
    pol.init(store, rng);
    const auto d = pol.forward(store, random_batch(2, 200, rng));
    for (double m : d.mu.values()) violations += std::abs(m) > 2.0;
    for (double s : d.sigma.values()) violations += s < 1e-3;
  }
  CHECK(violations == 0);
}
