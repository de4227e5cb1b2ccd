#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "pursuit/autodiff/param_store.hpp"
#include "pursuit/env/env.hpp"
#include "pursuit/evader/evader.hpp"
#include "pursuit/policy/policy.hpp"

namespace pursuit::trainer {

/// One team of decentralised policies; stores[i] holds agent i's parameters.
struct Team {
  std::vector<policy::Policy> policies;
  std::vector<ad::ParamStore> stores;

  std::size_t size() const { return policies.size(); }
};

/// Builds N policies named agent0..agent{N-1}, each in its own store.
Team make_team(const policy::PolicyConfig& config, std::size_t n_pursuers, std::mt19937_64& rng);

/// Every (env, step) record of one agent, time-major; env_index names the env.
struct AgentRollout {
  policy::PolicyBatch inputs;
  std::vector<double> actions;    // [rows, 2] pre-clip samples
  std::vector<double> log_probs;  // [rows] under the parameters used for sampling
  std::vector<double> rewards;    // [rows]
  std::vector<std::size_t> env_index;
};

struct RolloutBatch {
  std::size_t group_size = 0;
  std::size_t horizon = 0;
  std::vector<AgentRollout> agents;
  std::vector<std::vector<double>> returns;       // [agent][env], summed rewards
  std::vector<std::vector<double>> mean_returns;  // returns / horizon
  std::vector<std::size_t> steps;                 // realised episode length per env
  std::vector<bool> captured;                     // per env

  std::size_t step_records() const;
  double success_fraction() const;
};

struct CollectOptions {
  bool deterministic = false;  // act with clip(mu) and store mu
  bool shared_streams = false; // every env uses the same random stream
};

/// Runs G copies of `initial` in lockstep. Env j draws actions and evader
/// moves from its own stream seeded by stream_seeds[j].
RolloutBatch collect_group(const Team& team, const env::EnvConfig& env_config,
                           const evader::EvaderConfig& evader_config, const env::EnvState& initial,
                           std::size_t group_size, double noise_scale, std::uint64_t stream_seed,
                           const CollectOptions& options = {});

struct TrialRecord {
  std::uint64_t seed = 0;
  bool captured = false;
  std::size_t steps = 0;        // capture step, or the horizon
  double min_distance = 0.0;    // closest any pursuer came, including the start
};

struct EvalReport {
  std::size_t n_trials = 0;
  double success_rate = 0.0;
  double avg_capture_steps = 0.0;  // over successful trials; 0 when there are none
  std::vector<TrialRecord> trials;

  /// Recomputes the aggregates from the trial records.
  static EvalReport from_trials(std::vector<TrialRecord> trials);
};

/// Optional per-trial destination for JSON-lines trajectory records; return
/// nullptr to skip a trial. Called once per trial before the first step.
using TrajectorySink = std::function<std::ostream*(std::size_t trial)>;

/// Deterministic evaluation: actions clip(mu), no exploration. Trial k starts
/// from a reset seeded by derive_seed(seed, kEvalReset, k).
EvalReport evaluate_team(const Team& team, const env::EnvConfig& env_config,
                         const evader::EvaderConfig& evader_config, std::size_t n_trials, std::uint64_t seed,
                         const TrajectorySink& trajectories = {});

/// Same, with an arbitrary controller mapping (state, pursuer index) to a
/// command. Used for scripted baselines.
using Controller = std::function<env::Command(const env::EnvState&, std::size_t)>;
/// Full speed with the heading steered at the evader's current position.
Controller pure_pursuit_controller(const env::EnvConfig& env_config);

EvalReport evaluate_controller(const Controller& controller, const env::EnvConfig& env_config,
                               const evader::EvaderConfig& evader_config, std::size_t n_trials, std::uint64_t seed);

}  // namespace pursuit::trainer
