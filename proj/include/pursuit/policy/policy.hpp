#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pursuit/autodiff/diff_array.hpp"
#include "pursuit/autodiff/param_store.hpp"
#include "pursuit/ssm/ssm.hpp"

namespace pursuit::policy {

inline constexpr std::size_t kSelfDim = 5;    // x, y, cos psi, sin psi, speed
inline constexpr std::size_t kEvaderDim = 4;  // dx, dy, vx, vy
inline constexpr std::size_t kPeerDim = 4;    // dx, dy, vx, vy
inline constexpr std::size_t kActionDim = 2;

std::size_t observation_dim(std::size_t n_pursuers);

/// One pursuer's local view. Peers are in ascending agent index, self excluded.
struct Observation {
  std::array<double, kSelfDim> self{};
  std::array<double, kEvaderDim> evader{};
  std::vector<std::array<double, kPeerDim>> peers;

  std::vector<double> flatten() const;
  static Observation unflatten(std::span<const double> flat, std::size_t n_pursuers);
};

/// Ring buffer of the last `length` flattened observations.
class History {
 public:
  History(std::size_t length, std::size_t dim);

  void clear() { count_ = 0; }
  void push(std::span<const double> observation);

  std::size_t length() const { return length_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return count_; }
  /// [length, dim], oldest first, left-padded with zeros.
  std::vector<double> window() const;

 private:
  std::size_t length_;
  std::size_t dim_;
  std::size_t count_ = 0;
  std::size_t head_ = 0;  // slot of the next write
  std::vector<double> ring_;
};

enum class Variant { full, no_history, no_relation, mlp };

std::string variant_name(Variant v);
/// Accepts "full", "no_history", "no_relation", "mlp".
Variant parse_variant(const std::string& name);

struct PolicyConfig {
  ssm::SsmConfig ssm;
  std::size_t history_length = 8;
  std::size_t attention_heads = 4;
  double action_scale = 2.0;  // |mu| <= action_scale
  double sigma_floor = 1e-3;  // sigma >= sigma_floor
  std::size_t mlp_hidden = 64;
  double head_init = 0.01;    // action-head weights ~ U(-head_init, head_init)
  Variant variant = Variant::full;

  void validate() const;
};

/// Rows of (current observation, history window) fed to one agent's policy.
struct PolicyBatch {
  std::size_t n_pursuers = 0;
  std::size_t history_length = 0;
  std::size_t rows = 0;
  std::vector<double> obs;          // [rows, obs_dim]
  std::vector<double> history;      // [rows, L, obs_dim], left-padded
  std::vector<std::size_t> counts;  // valid history positions per row

  PolicyBatch() = default;
  PolicyBatch(std::size_t n_pursuers, std::size_t history_length);

  std::size_t obs_dim() const { return observation_dim(n_pursuers); }
  void append(std::span<const double> observation, const History& history);
  void append(std::span<const double> observation, std::span<const double> window, std::size_t count);
  ssm::PaddingMask mask() const { return ssm::PaddingMask::from_counts(history_length, counts); }
};

struct ActionDistribution {
  std::array<double, kActionDim> mu{};
  std::array<double, kActionDim> sigma{};
};

/// Batched distribution parameters, both [rows, 2].
struct DistributionBatch {
  ad::DiffArray mu;
  ad::DiffArray sigma;

  ActionDistribution row(std::size_t r) const;
};

/// One agent's network. Parameters live in a shared store under `prefix`
/// (e.g. "agent0").
class Policy {
 public:
  Policy(PolicyConfig config, std::size_t n_pursuers, std::string prefix);

  const PolicyConfig& config() const { return config_; }
  std::size_t n_pursuers() const { return n_pursuers_; }
  std::size_t n_tokens() const { return n_pursuers_ + 1; }
  const std::string& prefix() const { return prefix_; }

  /// Registers and initialises every parameter the variant uses.
  void init(ad::ParamStore& store, std::mt19937_64& rng) const;

  /// [rows, L, d_model]; padded positions are zero.
  ad::DiffArray encode_temporal(const ad::ParamStore& store, const PolicyBatch& batch) const;
  /// [rows, N+1, d_model] over the tokens [self, evader, peer_1, ...].
  ad::DiffArray encode_relational(const ad::ParamStore& store, const PolicyBatch& batch) const;
  /// Attention of relational tokens over valid history positions, mean-pooled: [rows, d_model].
  ad::DiffArray fuse(const ad::ParamStore& store, const ad::DiffArray& f_rel, const ad::DiffArray& f_tem,
                     const ssm::PaddingMask& mask) const;
  DistributionBatch action_head(const ad::ParamStore& store, const ad::DiffArray& h) const;

  /// Pooled feature H [rows, d_model] for the configured variant.
  ad::DiffArray features(const ad::ParamStore& store, const PolicyBatch& batch) const;
  DistributionBatch forward(const ad::ParamStore& store, const PolicyBatch& batch) const;

 private:
  std::string name(const std::string& leaf) const { return prefix_ + "/" + leaf; }
  ad::DiffArray linear(const ad::ParamStore& store, const std::string& leaf, const ad::DiffArray& x,
                       bool bias) const;

  PolicyConfig config_;
  std::size_t n_pursuers_;
  std::string prefix_;
};

/// Diagonal-Gaussian log density per row: [rows].
ad::DiffArray gaussian_log_prob(const ad::DiffArray& mu, const ad::DiffArray& sigma, const ad::DiffArray& actions);
/// Diagonal-Gaussian entropy per row: [rows].
ad::DiffArray gaussian_entropy(const ad::DiffArray& sigma);

/// Scalar density with the same operation order as gaussian_log_prob.
double gaussian_log_prob_value(const ActionDistribution& dist, const std::array<double, kActionDim>& action);
double gaussian_entropy_value(const ActionDistribution& dist);

struct ActionSample {
  std::array<double, kActionDim> action{};  // clip(raw) to [-alpha, alpha], the executed command
  std::array<double, kActionDim> raw{};     // sample plus exploration noise, before clipping
  std::array<double, kActionDim> sample{};  // mu + sigma*z, the value that is stored and scored
  double log_prob = 0.0;                    // under N(mu, sigma) at sample; independent of z'
};

/// sample = mu + sigma*z, raw = sample + explore_scale*z', z and z' standard
/// normal, drawn in the order z0, z1, z0', z1'. Scoring the noisy value
/// instead would make log-probs of order (explore/sigma)^2 and let the ratio
/// overflow once sigma shrinks.
ActionSample sample_action(const ActionDistribution& dist, double explore_scale, double action_scale,
                           std::mt19937_64& rng);

/// Recomputes the distribution for one (observation, history) and returns
/// (log density at `action`, entropy).
std::pair<double, double> evaluate_log_prob(const Policy& policy, const ad::ParamStore& store,
                                            std::span<const double> observation, const History& history,
                                            const std::array<double, kActionDim>& action);

}  // namespace pursuit::policy
