#include "pursuit/trainer/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "pursuit/autodiff/ops.hpp"
#include "pursuit/trainer/seeds.hpp"

namespace pursuit::trainer {
namespace {

using ad::DiffArray;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_finite_store(const ad::ParamStore& store, std::size_t episode) {
  for (const auto& [name, entry] : store.entries())
    for (double v : entry.value.values())
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite value in parameter " + name + " after the update of episode " +
                                 std::to_string(episode));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("TrainConfig: group_size must be at least 2");
  if (episodes == 0 || update_iters == 0) throw std::invalid_argument("TrainConfig: episodes and update_iters must be positive");
  if (!(clip_eps > 0.0) || !(tau > 0.0) || !(lr > 0.0) || !(clip_norm > 0.0))
    throw std::invalid_argument("TrainConfig: clip_eps, tau, lr and clip_norm must be positive");
  if (noise_start < 0.0 || noise_end < 0.0) throw std::invalid_argument("TrainConfig: noise levels must be >= 0");
}

double noise_scale(const TrainConfig& c, std::size_t episode) {
  const double frac = static_cast<double>(std::min(episode, c.episodes)) / static_cast<double>(c.episodes);
  return c.noise_start + (c.noise_end - c.noise_start) * frac;
}

std::vector<double> group_advantage(std::span<const double> returns, double tau) {
  const std::size_t n = returns.size();
  if (n < 2) throw std::invalid_argument("group_advantage: need at least two returns");
  std::vector<double> dev(n);
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    dev[j] = returns[j] - returns[0];
    mean += dev[j];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double& d : dev) {
    d -= mean;
    var += d * d;
  }
  const double denom = std::sqrt(var / static_cast<double>(n)) + tau;
  for (double& d : dev) d /= denom;
  return dev;
}

ClipLoss ppo_clip_objective(const DiffArray& new_log_probs, std::span<const double> old_log_probs,
                            std::span<const double> advantages, double eps) {
  const std::size_t rows = new_log_probs.size();
  if (old_log_probs.size() != rows || advantages.size() != rows)
    throw std::invalid_argument("ppo_clip_objective: " + std::to_string(rows) + " new log-probs, " +
                                std::to_string(old_log_probs.size()) + " old, " + std::to_string(advantages.size()) +
                                " advantages");
  const DiffArray old = DiffArray::constant({rows}, {old_log_probs.begin(), old_log_probs.end()});
  const DiffArray adv = DiffArray::constant({rows}, {advantages.begin(), advantages.end()});
  ClipLoss out;
  out.ratio = ad::exp(ad::sub(ad::reshape(new_log_probs, {rows}), old));
  const DiffArray unclipped = ad::mul(out.ratio, adv);
  const DiffArray clipped = ad::mul(ad::clamp(out.ratio, 1.0 - eps, 1.0 + eps), adv);
  out.loss = ad::neg(ad::mean_all(ad::minimum(unclipped, clipped)));

  std::size_t n_clipped = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double rho = out.ratio.values()[r];
    if (!std::isfinite(rho))
      throw std::runtime_error("ppo_clip_objective: non-finite ratio at row " + std::to_string(r) +
                               " (new log-prob " + fmt(new_log_probs.values()[r]) + ", old " +
                               fmt(old_log_probs[r]) + ")");
    const double dev = std::abs(rho - 1.0);
    out.stats.mean_abs_ratio_dev += dev;
    out.stats.max_abs_ratio_dev = std::max(out.stats.max_abs_ratio_dev, dev);
    n_clipped += clipped.values()[r] < unclipped.values()[r];
  }
  out.stats.mean_abs_ratio_dev /= static_cast<double>(rows);
  out.stats.clipped_fraction = static_cast<double>(n_clipped) / static_cast<double>(rows);
  return out;
}

ClipLoss ppo_clip_loss(const policy::Policy& policy, const ad::ParamStore& store, const AgentRollout& rollout,
                       std::span<const double> advantages, double eps) {
  const auto dist = policy.forward(store, rollout.inputs);
  const DiffArray actions = DiffArray::constant({rollout.inputs.rows, policy::kActionDim}, rollout.actions);
  return ppo_clip_objective(policy::gaussian_log_prob(dist.mu, dist.sigma, actions), rollout.log_probs, advantages,
                            eps);
}

AgentUpdateStats update_agent(const policy::Policy& policy, ad::ParamStore& store, const AgentRollout& rollout,
                              std::span<const double> env_advantages, const TrainConfig& config) {
  std::vector<double> adv(rollout.inputs.rows);
  for (std::size_t r = 0; r < adv.size(); ++r) adv[r] = env_advantages[rollout.env_index[r]];
  ad::AdamConfig adam;
  adam.lr = config.lr;
  adam.clip_norm = config.clip_norm;

  AgentUpdateStats stats;
  store.zero_grad();
  for (std::size_t k = 0; k < config.update_iters; ++k) {
    const ClipLoss l = ppo_clip_loss(policy, store, rollout, adv, config.clip_eps);
    if (k == 0) stats.first_ratio_dev = l.stats.max_abs_ratio_dev;
    stats.loss += l.loss.item();
    ad::backward(l.loss);
    stats.grad_norm += store.adam_step(adam);
  }
  stats.loss /= static_cast<double>(config.update_iters);
  stats.grad_norm /= static_cast<double>(config.update_iters);
  {
    ad::NoGradGuard no_grad;
    stats.final_mean_ratio_dev = ppo_clip_loss(policy, store, rollout, adv, config.clip_eps).stats.mean_abs_ratio_dev;
  }
  return stats;
}

std::string metrics_header(std::size_t n) {
  std::string h = "episode";
  for (std::size_t i = 0; i < n; ++i) h += ",mean_return_agent" + std::to_string(i);
  h += ",success_in_group,noise_scale";
  for (std::size_t i = 0; i < n; ++i) h += ",loss_agent" + std::to_string(i);
  for (std::size_t i = 0; i < n; ++i) h += ",grad_norm_agent" + std::to_string(i);
  return h;
}

std::string metrics_line(const MetricsRow& row) {
  std::string s = std::to_string(row.episode);
  for (double v : row.mean_return) s += "," + fmt(v);
  s += "," + fmt(row.success_in_group) + "," + fmt(row.noise_scale);
  for (double v : row.loss) s += "," + fmt(v);
  for (double v : row.grad_norm) s += "," + fmt(v);
  return s;
}

std::uint64_t state_hash(const env::EnvState& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : state.pursuers)
    for (double v : {p.x, p.y, p.psi, p.speed}) feed(v);
  for (double v : {state.evader.x, state.evader.y, state.evader.psi, state.evader.speed}) feed(v);
  return h;
}

void save_team(const std::filesystem::path& path, const Team& team, const nlohmann::json& meta) {
  ad::ParamStore merged;
  for (const auto& store : team.stores)
    for (const auto& [name, entry] : store.entries()) {
      const auto v = entry.value.values();
      merged.add(name, entry.value.shape(), {v.begin(), v.end()});
    }
  if (!team.stores.empty()) merged.set_step(team.stores.front().step());
  ad::save_checkpoint(path, merged, meta);
}

Team load_team(const std::filesystem::path& path, const policy::PolicyConfig& config, std::size_t n_pursuers,
               nlohmann::json* meta) {
  const ad::ParamStore loaded = ad::load_checkpoint(path, meta);
  std::mt19937_64 scratch(0);
  Team team = make_team(config, n_pursuers, scratch);
  std::set<std::string> expected;
  for (auto& store : team.stores) {
    for (auto& [name, entry] : store.entries()) {
      expected.insert(name);
      if (!loaded.contains(name))
        throw std::runtime_error("checkpoint " + path.string() + " lacks parameter " + name + " (built for " +
                                 std::to_string(n_pursuers) + " pursuers, variant " +
                                 policy::variant_name(config.variant) + ")");
      const auto& src = loaded.get(name);
      if (src.shape() != entry.value.shape())
        throw std::runtime_error("checkpoint parameter " + name + " has shape " + ad::to_string(src.shape()) +
                                 ", expected " + ad::to_string(entry.value.shape()));
      std::copy(src.values().begin(), src.values().end(), entry.value.mutable_values().begin());
    }
    store.set_step(loaded.step());
  }
  for (const auto& name : loaded.names())
    if (!expected.count(name))
      throw std::runtime_error("checkpoint " + path.string() + " has unexpected parameter " + name +
                               " (team of " + std::to_string(n_pursuers) + " expected)");
  return team;
}

TrainResult train(const TrainSetup& setup, const TrainOutputs& outputs) {
  setup.env.validate();
  setup.evader.validate();
  setup.policy.validate();
  setup.train.validate();
  const TrainConfig& tc = setup.train;
  const std::size_t N = setup.env.n_pursuers;

  TrainResult result;
  std::mt19937_64 init_rng(derive_seed(tc.seed, streams::kInit));
  result.team = make_team(setup.policy, N, init_rng);
  std::mt19937_64 reset_rng(derive_seed(tc.seed, streams::kReset));

  const bool write = !outputs.dir.empty();
  std::ofstream metrics, audit, evals;
  const std::string stamp = "# config_hash=" + outputs.config_hash + " seed=" + std::to_string(tc.seed);
  if (write) {
    std::filesystem::create_directories(outputs.dir);
    metrics = open_out(outputs.dir / "metrics.csv");
    metrics << stamp << '\n' << metrics_header(N) << '\n';
    audit = open_out(outputs.dir / "seed_audit.csv");
    audit << stamp << "\nepisode,initial_state_hash\n";
    evals = open_out(outputs.dir / "eval_summary.csv");
    evals << stamp << "\nepisode,n_trials,success_rate,avg_capture_steps\n";
  }
  auto checkpoint = [&](std::size_t done_episodes) {
    nlohmann::json meta{{"episode", done_episodes},
                        {"seed", tc.seed},
                        {"config_hash", outputs.config_hash},
                        {"n_pursuers", N},
                        {"variant", policy::variant_name(setup.policy.variant)}};
    save_team(outputs.dir / ("ckpt_ep" + std::to_string(done_episodes) + ".json"), result.team, meta);
    const auto report = evaluate_team(result.team, setup.env, setup.evader, tc.periodic_eval_trials,
                                      derive_seed(tc.seed, streams::kEvalReset, done_episodes));
    evals << done_episodes << ',' << report.n_trials << ',' << fmt(report.success_rate) << ','
          << fmt(report.avg_capture_steps) << '\n'
          << std::flush;
  };

  for (std::size_t ep = 0; ep < tc.episodes; ++ep) {
    const env::EnvState initial = env::reset(setup.env, reset_rng);
    result.initial_state_hashes.push_back(state_hash(initial));
    MetricsRow row;
    row.episode = ep + 1;
    row.noise_scale = noise_scale(tc, ep);
    const RolloutBatch batch = collect_group(result.team, setup.env, setup.evader, initial, tc.group_size,
                                             row.noise_scale, derive_seed(tc.seed, streams::kRollout, ep));
    row.success_in_group = batch.success_fraction();
    for (std::size_t i = 0; i < N; ++i) {
      double mean = 0.0;
      for (double r : batch.mean_returns[i]) mean += r;
      row.mean_return.push_back(mean / static_cast<double>(tc.group_size));
      const auto adv = group_advantage(batch.mean_returns[i], tc.tau);
      const auto stats = update_agent(result.team.policies[i], result.team.stores[i], batch.agents[i], adv, tc);
      require_finite_store(result.team.stores[i], ep + 1);
      if (stats.first_ratio_dev != 0.0)
        throw std::logic_error("first update of agent " + std::to_string(i) + " in episode " +
                               std::to_string(ep + 1) + " saw a ratio away from 1; the snapshot is stale");
      row.loss.push_back(stats.loss);
      row.grad_norm.push_back(stats.grad_norm);
      row.first_ratio_dev.push_back(stats.first_ratio_dev);
      row.final_mean_ratio_dev.push_back(stats.final_mean_ratio_dev);
    }
    if (write) {
      metrics << metrics_line(row) << '\n' << std::flush;
      audit << ep + 1 << ',' << result.initial_state_hashes.back() << '\n';
      const bool last = ep + 1 == tc.episodes;
      if ((tc.checkpoint_every != 0 && (ep + 1) % tc.checkpoint_every == 0) || last) checkpoint(ep + 1);
    }
    if (outputs.on_episode) outputs.on_episode(row);
    result.metrics.push_back(std::move(row));
  }
  return result;
}

}  // namespace pursuit::trainer
