#include "pursuit/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pursuit/autodiff/init.hpp"
#include "pursuit/autodiff/ops.hpp"

namespace pursuit::policy {
namespace {

using ad::DiffArray;
using ad::Shape;

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)

void add_uniform(ad::ParamStore& store, const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
  const std::size_t n = ad::numel(shape);
  store.add(name, std::move(shape), ad::uniform_values(n, bound, rng));
}

void add_filled(ad::ParamStore& store, const std::string& name, Shape shape, double value) {
  const std::size_t n = ad::numel(shape);
  store.add(name, std::move(shape), std::vector<double>(n, value));
}

// Weight [in, out] ~ U(+-1/sqrt(in)) plus an optional zero bias.
void add_linear(ad::ParamStore& store, const std::string& base, std::size_t in, std::size_t out, bool bias,
                std::mt19937_64& rng) {
  add_uniform(store, base + "/w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (bias) add_filled(store, base + "/b", {out}, 0.0);
}

bool uses_temporal(Variant v) { return v == Variant::full || v == Variant::no_relation; }
bool uses_relational(Variant v) { return v == Variant::full || v == Variant::no_history; }

}  // namespace

std::size_t observation_dim(std::size_t n_pursuers) {
  if (n_pursuers == 0) throw std::invalid_argument("observation_dim: need at least one pursuer");
  return kSelfDim + kEvaderDim + kPeerDim * (n_pursuers - 1);
}

std::vector<double> Observation::flatten() const {
  std::vector<double> out(self.begin(), self.end());
  out.insert(out.end(), evader.begin(), evader.end());
  for (const auto& p : peers) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Observation Observation::unflatten(std::span<const double> flat, std::size_t n_pursuers) {
  if (flat.size() != observation_dim(n_pursuers))
    throw std::invalid_argument("Observation::unflatten: expected " + std::to_string(observation_dim(n_pursuers)) +
                                " values, got " + std::to_string(flat.size()));
  Observation o;
  std::copy_n(flat.begin(), kSelfDim, o.self.begin());
  std::copy_n(flat.begin() + kSelfDim, kEvaderDim, o.evader.begin());
  o.peers.resize(n_pursuers - 1);
  for (std::size_t p = 0; p + 1 < n_pursuers; ++p)
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(kSelfDim + kEvaderDim + p * kPeerDim), kPeerDim,
                o.peers[p].begin());
  return o;
}

History::History(std::size_t length, std::size_t dim) : length_(length), dim_(dim), ring_(length * dim, 0.0) {
  if (length == 0 || dim == 0) throw std::invalid_argument("History: length and dim must be positive");
}

void History::push(std::span<const double> observation) {
  if (observation.size() != dim_)
    throw std::invalid_argument("History::push: expected " + std::to_string(dim_) + " values, got " +
                                std::to_string(observation.size()));
  std::copy(observation.begin(), observation.end(), ring_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
  head_ = (head_ + 1) % length_;
  count_ = std::min(count_ + 1, length_);
}

std::vector<double> History::window() const {
  std::vector<double> out(length_ * dim_, 0.0);
  // The newest entry sits just before head_; entry i of the valid suffix is
  // (count_ - 1 - i) steps older than it.
  for (std::size_t i = 0; i < count_; ++i) {
    const std::size_t age = count_ - 1 - i;
    const std::size_t slot = (head_ + length_ - 1 - age) % length_;
    std::copy_n(ring_.begin() + static_cast<std::ptrdiff_t>(slot * dim_), dim_,
                out.begin() + static_cast<std::ptrdiff_t>((length_ - count_ + i) * dim_));
  }
  return out;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_history: return "no_history";
    case Variant::no_relation: return "no_relation";
    case Variant::mlp: return "mlp";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::full, Variant::no_history, Variant::no_relation, Variant::mlp})
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown policy variant '" + name + "' (expected full, no_history, no_relation or mlp)");
}

void PolicyConfig::validate() const {
  ssm.validate();
  if (history_length == 0) throw std::invalid_argument("PolicyConfig: history_length must be positive");
  if (attention_heads == 0 || ssm.d_model % attention_heads != 0)
    throw std::invalid_argument("PolicyConfig: attention_heads must divide d_model");
  if (!(action_scale > 0.0) || !(sigma_floor > 0.0))
    throw std::invalid_argument("PolicyConfig: action_scale and sigma_floor must be positive");
  if (mlp_hidden == 0) throw std::invalid_argument("PolicyConfig: mlp_hidden must be positive");
}

PolicyBatch::PolicyBatch(std::size_t n, std::size_t length) : n_pursuers(n), history_length(length) {}

void PolicyBatch::append(std::span<const double> observation, const History& h) {
  if (h.length() != history_length)
    throw std::invalid_argument("PolicyBatch::append: history length " + std::to_string(h.length()) +
                                " does not match " + std::to_string(history_length));
  const auto w = h.window();
  append(observation, w, h.count());
}

void PolicyBatch::append(std::span<const double> observation, std::span<const double> window, std::size_t count) {
  const std::size_t d = obs_dim();
  if (observation.size() != d || window.size() != history_length * d || count > history_length)
    throw std::invalid_argument("PolicyBatch::append: observation/history sizes do not match obs_dim " +
                                std::to_string(d));
  obs.insert(obs.end(), observation.begin(), observation.end());
  history.insert(history.end(), window.begin(), window.end());
  counts.push_back(count);
  ++rows;
}

ActionDistribution DistributionBatch::row(std::size_t r) const {
  ActionDistribution d;
  for (std::size_t k = 0; k < kActionDim; ++k) {
    d.mu[k] = mu.values()[r * kActionDim + k];
    d.sigma[k] = sigma.values()[r * kActionDim + k];
  }
  return d;
}

Policy::Policy(PolicyConfig config, std::size_t n_pursuers, std::string prefix)
    : config_(std::move(config)), n_pursuers_(n_pursuers), prefix_(std::move(prefix)) {
  config_.validate();
  if (n_pursuers_ == 0) throw std::invalid_argument("Policy: need at least one pursuer");
}

void Policy::init(ad::ParamStore& store, std::mt19937_64& rng) const {
  const std::size_t dm = config_.ssm.d_model;
  const std::size_t od = observation_dim(n_pursuers_);
  const Variant v = config_.variant;
  if (uses_temporal(v)) {
    add_linear(store, name("embed/history"), od, dm, true, rng);
    ssm::init_block(store, name("temporal"), config_.ssm, rng);
  }
  if (uses_relational(v)) {
    add_linear(store, name("embed/self"), kSelfDim, dm, true, rng);
    add_linear(store, name("embed/evader"), kEvaderDim, dm, true, rng);
    add_linear(store, name("embed/peer"), kPeerDim, dm, true, rng);
    add_filled(store, name("embed/norm/g"), {dm}, 1.0);
    add_filled(store, name("embed/norm/b"), {dm}, 0.0);
    ssm::init_block(store, name("relational_fwd"), config_.ssm, rng);
    ssm::init_block(store, name("relational_bwd"), config_.ssm, rng);
  }
  if (v == Variant::full)
    for (const char* proj : {"mha/q", "mha/k", "mha/v", "mha/o"}) add_linear(store, name(proj), dm, dm, false, rng);
  if (v == Variant::mlp) {
    add_linear(store, name("mlp/l1"), od, config_.mlp_hidden, true, rng);
    add_linear(store, name("mlp/l2"), config_.mlp_hidden, dm, true, rng);
  }
  add_uniform(store, name("head_mu/w"), {dm, kActionDim}, config_.head_init, rng);
  add_uniform(store, name("head_sigma/w"), {dm, kActionDim}, config_.head_init, rng);
}

DiffArray Policy::linear(const ad::ParamStore& store, const std::string& leaf, const DiffArray& x, bool bias) const {
  DiffArray y = ad::matmul(x, store.get(name(leaf + "/w")));
  return bias ? ad::add(y, store.get(name(leaf + "/b"))) : y;
}

DiffArray Policy::encode_temporal(const ad::ParamStore& store, const PolicyBatch& batch) const {
  const std::size_t L = config_.history_length;
  if (batch.history_length != L) throw std::invalid_argument("encode_temporal: batch history length mismatch");
  for (std::size_t c : batch.counts)
    if (c == 0) throw std::invalid_argument("encode_temporal: every row needs at least one history entry");
  const DiffArray hist = DiffArray::constant({batch.rows, L, batch.obs_dim()}, batch.history);
  const DiffArray embedded = linear(store, "embed/history", hist, true);
  const auto mask = batch.mask();
  return ssm::mamba2_forward(ssm::SsmBlockParams::from_store(store, name("temporal")), config_.ssm, embedded, &mask);
}

DiffArray Policy::encode_relational(const ad::ParamStore& store, const PolicyBatch& batch) const {
  const std::size_t B = batch.rows;
  const std::size_t dm = config_.ssm.d_model;
  const DiffArray obs = DiffArray::constant({B, batch.obs_dim()}, batch.obs);
  std::vector<DiffArray> tokens;
  tokens.push_back(ad::reshape(linear(store, "embed/self", ad::slice(obs, 1, 0, kSelfDim), true), {B, 1, dm}));
  tokens.push_back(ad::reshape(
      linear(store, "embed/evader", ad::slice(obs, 1, kSelfDim, kSelfDim + kEvaderDim), true), {B, 1, dm}));
  if (n_pursuers_ > 1) {
    const DiffArray peers = ad::reshape(ad::slice(obs, 1, kSelfDim + kEvaderDim, batch.obs_dim()),
                                        {B, n_pursuers_ - 1, kPeerDim});
    tokens.push_back(linear(store, "embed/peer", peers, true));
  }
  const DiffArray seq = ad::concat(tokens, 1);
  const DiffArray normed = ad::add(ad::mul(ad::layer_norm(seq, config_.ssm.norm_eps), store.get(name("embed/norm/g"))),
                                   store.get(name("embed/norm/b")));
  return ssm::bimamba2_forward(ssm::SsmBlockParams::from_store(store, name("relational_fwd")),
                               ssm::SsmBlockParams::from_store(store, name("relational_bwd")), config_.ssm, normed);
}

DiffArray Policy::fuse(const ad::ParamStore& store, const DiffArray& f_rel, const DiffArray& f_tem,
                       const ssm::PaddingMask& mask) const {
  const std::size_t B = f_rel.dim(0);
  const std::size_t nt = f_rel.dim(1);
  const std::size_t L = f_tem.dim(1);
  const std::size_t dm = config_.ssm.d_model;
  const std::size_t nh = config_.attention_heads;
  const std::size_t dh = dm / nh;
  if (f_tem.dim(0) != B || mask.batch() != B || mask.time() != L)
    throw ad::ShapeError("fuse: relational " + ad::to_string(f_rel.shape()) + " and temporal " +
                         ad::to_string(f_tem.shape()) + " do not match the mask");
  auto heads = [&](const DiffArray& x, std::size_t len) {
    return ad::permute(ad::reshape(x, {B, len, nh, dh}), {0, 2, 1, 3});
  };
  const DiffArray q = heads(linear(store, "mha/q", f_rel, false), nt);
  const DiffArray k = heads(linear(store, "mha/k", f_tem, false), L);
  const DiffArray v = heads(linear(store, "mha/v", f_tem, false), L);
  const DiffArray logits = ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));

  ad::Mask m{{B, nh, nt, L}, std::vector<std::uint8_t>(B * nh * nt * L)};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < nh * nt; ++i)
      for (std::size_t t = 0; t < L; ++t) m.values[(b * nh * nt + i) * L + t] = mask.valid(b, t) ? 1 : 0;
  const DiffArray attn = ad::softmax(logits, 3, &m);
  const DiffArray ctx = ad::reshape(ad::permute(ad::matmul(attn, v), {0, 2, 1, 3}), {B, nt, dm});
  return ad::mean(linear(store, "mha/o", ctx, false), 1);
}

DistributionBatch Policy::action_head(const ad::ParamStore& store, const DiffArray& h) const {
  DistributionBatch d;
  d.mu = ad::scale(ad::tanh(ad::matmul(h, store.get(name("head_mu/w")))), config_.action_scale);
  d.sigma = ad::add_scalar(ad::softplus(ad::matmul(h, store.get(name("head_sigma/w")))), config_.sigma_floor);
  return d;
}

DiffArray Policy::features(const ad::ParamStore& store, const PolicyBatch& batch) const {
  if (batch.rows == 0) throw std::invalid_argument("Policy: empty batch");
  if (batch.n_pursuers != n_pursuers_)
    throw std::invalid_argument("Policy: batch built for " + std::to_string(batch.n_pursuers) +
                                " pursuers, policy expects " + std::to_string(n_pursuers_));
  const std::size_t dm = config_.ssm.d_model;
  switch (config_.variant) {
    case Variant::full:
      return fuse(store, encode_relational(store, batch), encode_temporal(store, batch), batch.mask());
    case Variant::no_history:
      return ad::mean(encode_relational(store, batch), 1);
    case Variant::no_relation: {
      const std::size_t L = config_.history_length;
      return ad::reshape(ad::slice(encode_temporal(store, batch), 1, L - 1, L), {batch.rows, dm});
    }
    case Variant::mlp: {
      const DiffArray obs = DiffArray::constant({batch.rows, batch.obs_dim()}, batch.obs);
      return ad::tanh(linear(store, "mlp/l2", ad::tanh(linear(store, "mlp/l1", obs, true)), true));
    }
  }
  throw std::logic_error("Policy: unhandled variant");
}

DistributionBatch Policy::forward(const ad::ParamStore& store, const PolicyBatch& batch) const {
  return action_head(store, features(store, batch));
}

DiffArray gaussian_log_prob(const DiffArray& mu, const DiffArray& sigma, const DiffArray& actions) {
  const DiffArray z = ad::div(ad::sub(actions, mu), sigma);
  const DiffArray per = ad::add_scalar(ad::sub(ad::scale(ad::square(z), -0.5), ad::log(sigma)), -kHalfLog2Pi);
  return ad::sum(per, 1);
}

DiffArray gaussian_entropy(const DiffArray& sigma) {
  return ad::sum(ad::add_scalar(ad::log(sigma), 0.5 + kHalfLog2Pi), 1);
}

double gaussian_log_prob_value(const ActionDistribution& dist, const std::array<double, kActionDim>& action) {
  double total = 0.0;
  for (std::size_t k = 0; k < kActionDim; ++k) {
    const double z = (action[k] - dist.mu[k]) / dist.sigma[k];
    const double scaled = (z * z) * -0.5;
    const double centred = scaled - std::log(dist.sigma[k]);
    total += centred + -kHalfLog2Pi;
  }
  return total;
}

double gaussian_entropy_value(const ActionDistribution& dist) {
  double total = 0.0;
  for (std::size_t k = 0; k < kActionDim; ++k) total += std::log(dist.sigma[k]) + (0.5 + kHalfLog2Pi);
  return total;
}

ActionSample sample_action(const ActionDistribution& dist, double explore_scale, double action_scale,
                           std::mt19937_64& rng) {
  if (!(explore_scale >= 0.0)) throw std::invalid_argument("sample_action: explore_scale must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, kActionDim> z{}, zx{};
  for (double& e : z) e = normal(rng);
  for (double& e : zx) e = normal(rng);
  ActionSample s;
  for (std::size_t k = 0; k < kActionDim; ++k) {
    s.sample[k] = dist.mu[k] + dist.sigma[k] * z[k];
    s.raw[k] = s.sample[k] + explore_scale * zx[k];
    s.action[k] = std::clamp(s.raw[k], -action_scale, action_scale);
  }
  s.log_prob = gaussian_log_prob_value(dist, s.sample);
  return s;
}

std::pair<double, double> evaluate_log_prob(const Policy& policy, const ad::ParamStore& store,
                                            std::span<const double> observation, const History& history,
                                            const std::array<double, kActionDim>& action) {
  ad::NoGradGuard no_grad;
  PolicyBatch batch(policy.n_pursuers(), policy.config().history_length);
  batch.append(observation, history);
  const DistributionBatch d = policy.forward(store, batch);
  const DiffArray a = DiffArray::constant({1, kActionDim}, std::vector<double>(action.begin(), action.end()));
  return {gaussian_log_prob(d.mu, d.sigma, a).item(), gaussian_entropy(d.sigma).item()};
}

}  // namespace pursuit::policy
