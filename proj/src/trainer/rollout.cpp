#include "pursuit/trainer/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pursuit/trainer/seeds.hpp"

namespace pursuit::trainer {
namespace {

void require_finite(const policy::DistributionBatch& d, std::size_t agent, std::size_t step) {
  for (std::size_t k = 0; k < d.mu.size(); ++k)
    if (!std::isfinite(d.mu.values()[k]) || !std::isfinite(d.sigma.values()[k])) {
      std::ostringstream msg;
      msg << "policy of agent " << agent << " produced a non-finite distribution at step " << step << " (row "
          << k / policy::kActionDim << ": mu=" << d.mu.values()[k] << ", sigma=" << d.sigma.values()[k] << ")";
      throw std::runtime_error(msg.str());
    }
}

double min_pursuer_distance(const env::EnvState& s) {
  double m = INFINITY;
  for (const auto& p : s.pursuers) m = std::min(m, env::distance(p, s.evader));
  return m;
}

// Runs trials in lockstep; `act` fills the pursuer commands of every active
// trial for the current step.
template <class Act>
EvalReport run_trials(const env::EnvConfig& env_config, const evader::EvaderConfig& evader_config,
                      std::size_t n_trials, std::uint64_t seed, Act&& act, const TrajectorySink& sink = {}) {
  std::vector<env::EnvState> states;
  std::vector<std::mt19937_64> evader_rngs;
  std::vector<TrialRecord> trials(n_trials);
  for (std::size_t k = 0; k < n_trials; ++k) {
    trials[k].seed = derive_seed(seed, streams::kEvalReset, k);
    std::mt19937_64 reset_rng(trials[k].seed);
    states.push_back(env::reset(env_config, reset_rng));
    evader_rngs.emplace_back(derive_seed(seed, streams::kEvalEvader, k));
    trials[k].min_distance = min_pursuer_distance(states.back());
  }
  std::vector<std::ostream*> dumps(n_trials, nullptr);
  if (sink)
    for (std::size_t k = 0; k < n_trials; ++k) dumps[k] = sink(k);
  std::vector<std::size_t> active(n_trials);
  std::iota(active.begin(), active.end(), 0);
  std::vector<std::vector<env::Command>> commands(n_trials, std::vector<env::Command>(env_config.n_pursuers));
  while (!active.empty()) {
    act(states, active, commands);
    for (std::size_t k : active) {
      const auto ev = evader::evader_action(env_config, evader_config, states[k], evader_rngs[k]);
      const auto result = env::step(env_config, states[k], commands[k], ev);
      if (dumps[k] != nullptr) env::write_trajectory(*dumps[k], states[k], commands[k], ev, result);
      trials[k].min_distance = std::min(trials[k].min_distance, min_pursuer_distance(states[k]));
    }
    std::erase_if(active, [&](std::size_t k) { return states[k].done; });
  }
  for (std::size_t k = 0; k < n_trials; ++k) {
    trials[k].captured = states[k].capture.captured;
    trials[k].steps = states[k].step;
  }
  return EvalReport::from_trials(std::move(trials));
}

}  // namespace

Team make_team(const policy::PolicyConfig& config, std::size_t n_pursuers, std::mt19937_64& rng) {
  Team team;
  for (std::size_t i = 0; i < n_pursuers; ++i) {
    team.policies.emplace_back(config, n_pursuers, "agent" + std::to_string(i));
    team.stores.emplace_back();
    team.policies.back().init(team.stores.back(), rng);
  }
  return team;
}

std::size_t RolloutBatch::step_records() const {
  std::size_t n = 0;
  for (const auto& a : agents) n += a.inputs.rows;
  return n;
}

double RolloutBatch::success_fraction() const {
  if (captured.empty()) return 0.0;
  return static_cast<double>(std::count(captured.begin(), captured.end(), true)) /
         static_cast<double>(captured.size());
}

RolloutBatch collect_group(const Team& team, const env::EnvConfig& env_config,
                           const evader::EvaderConfig& evader_config, const env::EnvState& initial,
                           std::size_t group_size, double noise_scale, std::uint64_t stream_seed,
                           const CollectOptions& options) {
  const std::size_t N = team.size();
  if (N != env_config.n_pursuers || initial.pursuers.size() != N)
    throw std::invalid_argument("collect_group: team size, env config and initial state disagree on N");
  if (group_size == 0) throw std::invalid_argument("collect_group: empty group");
  if (initial.done || initial.step != 0) throw std::invalid_argument("collect_group: initial state is not fresh");
  const std::size_t L = team.policies.front().config().history_length;
  const double alpha = team.policies.front().config().action_scale;
  const std::size_t od = policy::observation_dim(N);

  ad::NoGradGuard no_grad;
  RolloutBatch out;
  out.group_size = group_size;
  out.horizon = env_config.horizon;
  out.returns.assign(N, std::vector<double>(group_size, 0.0));
  for (std::size_t i = 0; i < N; ++i) {
    out.agents.emplace_back();
    out.agents.back().inputs = policy::PolicyBatch(N, L);
  }

  std::vector<env::EnvState> states(group_size, initial);
  std::vector<std::vector<policy::History>> histories(group_size, std::vector<policy::History>(N, policy::History(L, od)));
  std::vector<std::mt19937_64> rngs;
  for (std::size_t j = 0; j < group_size; ++j) rngs.emplace_back(derive_seed(stream_seed, options.shared_streams ? 0 : j));

  std::vector<std::size_t> active(group_size);
  std::iota(active.begin(), active.end(), 0);
  std::vector<std::vector<env::Command>> commands(group_size, std::vector<env::Command>(N));
  std::size_t t = 0;
  while (!active.empty()) {
    std::vector<std::vector<double>> obs(group_size * N);
    for (std::size_t j : active)
      for (std::size_t i = 0; i < N; ++i) {
        obs[j * N + i] = env::observe(states[j], i).flatten();
        histories[j][i].push(obs[j * N + i]);
      }
    for (std::size_t i = 0; i < N; ++i) {
      policy::PolicyBatch batch(N, L);
      for (std::size_t j : active) batch.append(obs[j * N + i], histories[j][i]);
      const auto dist = team.policies[i].forward(team.stores[i], batch);
      require_finite(dist, i, t);
      AgentRollout& rec = out.agents[i];
      for (std::size_t r = 0; r < active.size(); ++r) {
        const std::size_t j = active[r];
        const auto d = dist.row(r);
        policy::ActionSample s;
        if (options.deterministic) {
          s.sample = s.raw = d.mu;
          for (std::size_t k = 0; k < policy::kActionDim; ++k) s.action[k] = std::clamp(d.mu[k], -alpha, alpha);
          s.log_prob = policy::gaussian_log_prob_value(d, s.sample);
        } else {
          s = policy::sample_action(d, noise_scale, alpha, rngs[j]);
        }
        commands[j][i] = s.action;
        rec.inputs.append(std::span(batch.obs).subspan(r * od, od),
                          std::span(batch.history).subspan(r * L * od, L * od), batch.counts[r]);
        rec.actions.insert(rec.actions.end(), s.sample.begin(), s.sample.end());
        rec.log_probs.push_back(s.log_prob);
        rec.env_index.push_back(j);
      }
    }
    for (std::size_t j : active) {
      const auto ev = evader::evader_action(env_config, evader_config, states[j], rngs[j]);
      const auto result = env::step(env_config, states[j], commands[j], ev);
      for (std::size_t i = 0; i < N; ++i) {
        out.agents[i].rewards.push_back(result.rewards[i]);
        out.returns[i][j] += result.rewards[i];
      }
    }
    std::erase_if(active, [&](std::size_t j) { return states[j].done; });
    ++t;
  }

  out.mean_returns = out.returns;
  for (auto& per_agent : out.mean_returns)
    for (double& r : per_agent) r /= static_cast<double>(env_config.horizon);
  for (const auto& s : states) {
    out.steps.push_back(s.step);
    out.captured.push_back(s.capture.captured);
  }
  return out;
}

EvalReport EvalReport::from_trials(std::vector<TrialRecord> trials) {
  EvalReport r;
  r.n_trials = trials.size();
  std::size_t wins = 0, steps = 0;
  for (const auto& t : trials)
    if (t.captured) {
      ++wins;
      steps += t.steps;
    }
  r.success_rate = r.n_trials ? static_cast<double>(wins) / static_cast<double>(r.n_trials) : 0.0;
  r.avg_capture_steps = wins ? static_cast<double>(steps) / static_cast<double>(wins) : 0.0;
  r.trials = std::move(trials);
  return r;
}

EvalReport evaluate_team(const Team& team, const env::EnvConfig& env_config,
                         const evader::EvaderConfig& evader_config, std::size_t n_trials, std::uint64_t seed,
                         const TrajectorySink& trajectories) {
  const std::size_t N = team.size();
  if (N != env_config.n_pursuers) throw std::invalid_argument("evaluate_team: team size does not match n_pursuers");
  const std::size_t L = team.policies.front().config().history_length;
  const double alpha = team.policies.front().config().action_scale;
  const std::size_t od = policy::observation_dim(N);
  ad::NoGradGuard no_grad;
  std::vector<std::vector<policy::History>> histories(n_trials, std::vector<policy::History>(N, policy::History(L, od)));
  std::size_t t = 0;
  return run_trials(env_config, evader_config, n_trials, seed,
                    [&](const std::vector<env::EnvState>& states, const std::vector<std::size_t>& active,
                        std::vector<std::vector<env::Command>>& commands) {
                      std::vector<std::vector<double>> obs(n_trials * N);
                      for (std::size_t k : active)
                        for (std::size_t i = 0; i < N; ++i) {
                          obs[k * N + i] = env::observe(states[k], i).flatten();
                          histories[k][i].push(obs[k * N + i]);
                        }
                      for (std::size_t i = 0; i < N; ++i) {
                        policy::PolicyBatch batch(N, L);
                        for (std::size_t k : active) batch.append(obs[k * N + i], histories[k][i]);
                        const auto dist = team.policies[i].forward(team.stores[i], batch);
                        require_finite(dist, i, t);
                        for (std::size_t r = 0; r < active.size(); ++r) {
                          const auto d = dist.row(r);
                          commands[active[r]][i] = {std::clamp(d.mu[0], -alpha, alpha),
                                                    std::clamp(d.mu[1], -alpha, alpha)};
                        }
                      }
                      ++t;
                    },
                    trajectories);
}

Controller pure_pursuit_controller(const env::EnvConfig& c) {
  return [c](const env::EnvState& s, std::size_t i) -> env::Command {
    const auto& p = s.pursuers[i];
    const double error = std::remainder(std::atan2(s.evader.y - p.y, s.evader.x - p.x) - p.psi, 2.0 * std::numbers::pi);
    const double yaw = std::clamp(error / c.dt, -c.max_yaw_rate, c.max_yaw_rate);
    return {c.action_scale, yaw / c.max_yaw_rate * c.action_scale};
  };
}

EvalReport evaluate_controller(const Controller& controller, const env::EnvConfig& env_config,
                               const evader::EvaderConfig& evader_config, std::size_t n_trials, std::uint64_t seed) {
  return run_trials(env_config, evader_config, n_trials, seed,
                    [&](const std::vector<env::EnvState>& states, const std::vector<std::size_t>& active,
                        std::vector<std::vector<env::Command>>& commands) {
                      for (std::size_t k : active)
                        for (std::size_t i = 0; i < env_config.n_pursuers; ++i) commands[k][i] = controller(states[k], i);
                    });
}

}  // namespace pursuit::trainer
