#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pursuit/autodiff/checkpoint.hpp"
#include "pursuit/autodiff/diff_array.hpp"
#include "pursuit/trainer/rollout.hpp"

namespace pursuit::trainer {

struct TrainConfig {
  std::size_t group_size = 10;
  std::size_t episodes = 600;
  std::size_t update_iters = 20;
  double clip_eps = 0.2;
  double tau = 1e-8;
  double lr = 1e-3;
  double clip_norm = 0.5;
  double noise_start = 0.5;
  double noise_end = 0.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 50;  // 0 disables checkpoints and periodic evaluation
  std::size_t periodic_eval_trials = 20;

  void validate() const;
};

/// Linear anneal: noise_start at ep = 0, noise_end at ep = episodes.
double noise_scale(const TrainConfig& config, std::size_t episode);

/// (R_j - mean R) / (popstd R + tau). Deviations are taken from R_0 first, so
/// a shift of every return that is exact in floating point leaves the result
/// bit-identical, and equal returns give exact zeros.
std::vector<double> group_advantage(std::span<const double> returns, double tau);

struct LossStats {
  double mean_abs_ratio_dev = 0.0;  // mean |rho - 1|
  double max_abs_ratio_dev = 0.0;
  double clipped_fraction = 0.0;    // rows where the clipped term was the minimum and differed
};

struct ClipLoss {
  ad::DiffArray loss;  // scalar
  ad::DiffArray ratio; // [rows]
  LossStats stats;
};

/// -mean_rows min(rho A, clip(rho, 1-eps, 1+eps) A) with
/// rho = exp(log pi(a) - old_log_prob). `advantages` is per row.
ClipLoss ppo_clip_loss(const policy::Policy& policy, const ad::ParamStore& store, const AgentRollout& rollout,
                       std::span<const double> advantages, double eps);

/// Same objective from precomputed new log-probs; exposed for testing.
ClipLoss ppo_clip_objective(const ad::DiffArray& new_log_probs, std::span<const double> old_log_probs,
                            std::span<const double> advantages, double eps);

struct AgentUpdateStats {
  double loss = 0.0;       // mean over update iterations
  double grad_norm = 0.0;  // mean pre-clip norm over update iterations
  double first_ratio_dev = 0.0;  // max |rho - 1| at the first iteration; 0 exactly when fresh
  double final_mean_ratio_dev = 0.0;
};

/// Runs K clipped updates on one agent's store. Its rollout must have been
/// collected with the store's current values.
AgentUpdateStats update_agent(const policy::Policy& policy, ad::ParamStore& store, const AgentRollout& rollout,
                              std::span<const double> env_advantages, const TrainConfig& config);

struct MetricsRow {
  std::size_t episode = 0;
  std::vector<double> mean_return;  // per agent, averaged over the group
  double success_in_group = 0.0;
  double noise_scale = 0.0;
  std::vector<double> loss;
  std::vector<double> grad_norm;
  // Diagnostics kept out of the CSV.
  std::vector<double> first_ratio_dev;
  std::vector<double> final_mean_ratio_dev;
};

std::string metrics_header(std::size_t n_agents);
std::string metrics_line(const MetricsRow& row);

struct TrainSetup {
  env::EnvConfig env;
  evader::EvaderConfig evader;
  policy::PolicyConfig policy;
  TrainConfig train;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: write nothing
  std::string config_hash;
  std::function<void(const MetricsRow&)> on_episode;  // optional progress hook
};

struct TrainResult {
  Team team;
  std::vector<MetricsRow> metrics;
  std::vector<std::uint64_t> initial_state_hashes;  // one per episode
};

/// Full loop. Writes metrics.csv, seed_audit.csv, ckpt_ep{N}.json and
/// eval_summary.csv under outputs.dir when it is set.
TrainResult train(const TrainSetup& setup, const TrainOutputs& outputs = {});

/// FNV-1a over the bit patterns of every pose in the state.
std::uint64_t state_hash(const env::EnvState& state);

/// Team checkpoint: one file holding every agent's parameters.
void save_team(const std::filesystem::path& path, const Team& team, const nlohmann::json& meta);
/// Loads parameters into a freshly built team, rejecting missing, extra or
/// mis-shaped tensors.
Team load_team(const std::filesystem::path& path, const policy::PolicyConfig& config, std::size_t n_pursuers,
               nlohmann::json* meta = nullptr);

}  // namespace pursuit::trainer
