#include "pursuit/env/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace pursuit::env {
namespace {

void advance(const EnvConfig& c, AgentState& a, double speed_cmd, double yaw_cmd, double v_max) {
  const double turn = std::clamp(yaw_cmd * c.dt, -c.max_yaw_rate * c.dt, c.max_yaw_rate * c.dt);
  a.psi = std::remainder(a.psi + turn, 2.0 * std::numbers::pi);
  a.speed = std::clamp(speed_cmd, 0.0, v_max);
  a.x = std::clamp(a.x + a.speed * std::cos(a.psi) * c.dt, -c.half_width, c.half_width);
  a.y = std::clamp(a.y + a.speed * std::sin(a.psi) * c.dt, -c.half_width, c.half_width);
}

void require_finite(const Command& cmd, const char* who) {
  if (!std::isfinite(cmd[0]) || !std::isfinite(cmd[1]))
    throw std::invalid_argument(std::string("env::step: non-finite ") + who + " action");
}

}  // namespace

void EnvConfig::validate() const {
  if (!(half_width > 0.0)) throw std::invalid_argument("EnvConfig: half_width must be positive");
  if (n_pursuers < 1) throw std::invalid_argument("EnvConfig: need at least one pursuer");
  if (!(capture_radius > 0.0 && capture_radius < half_width))
    throw std::invalid_argument("EnvConfig: capture_radius must lie in (0, half_width)");
  if (!(pursuer_speed > 0.0 && pursuer_speed < evader_speed))
    throw std::invalid_argument("EnvConfig: need 0 < pursuer_speed < evader_speed");
  if (!(dt > 0.0) || horizon == 0 || !(max_yaw_rate > 0.0) || !(action_scale > 0.0))
    throw std::invalid_argument("EnvConfig: dt, horizon, max_yaw_rate and action_scale must be positive");
  if (min_separation < 0.0 || max_reset_tries == 0)
    throw std::invalid_argument("EnvConfig: invalid reset parameters");
}

double AgentState::vx() const { return speed * std::cos(psi); }
double AgentState::vy() const { return speed * std::sin(psi); }

double distance(const AgentState& a, const AgentState& b) { return std::hypot(a.x - b.x, a.y - b.y); }

EnvState reset(const EnvConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::uniform_real_distribution<double> pos(-config.half_width, config.half_width);
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);
  const std::size_t n = config.n_pursuers + 1;
  std::vector<AgentState> agents(n);
  for (std::size_t attempt = 0; attempt < config.max_reset_tries; ++attempt) {
    for (auto& a : agents) {
      a.x = pos(rng);
      a.y = pos(rng);
      a.psi = heading(rng);
      a.speed = 0.0;
    }
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t j = i + 1; j < n && ok; ++j) ok = distance(agents[i], agents[j]) >= config.min_separation;
    if (!ok) continue;
    EnvState s;
    s.evader = agents.back();
    agents.pop_back();
    s.pursuers = std::move(agents);
    return s;
  }
  throw std::runtime_error("env::reset: no placement with separation " + std::to_string(config.min_separation) +
                           " found in " + std::to_string(config.max_reset_tries) + " tries");
}

double boundary_penalty(const EnvConfig& c, double d) {
  if (d < c.safe_threshold) return 0.0;
  // Expanded so that tabulated points such as d = 1.9 give exact products.
  if (d < c.half_width) return c.safe_slope * d - c.safe_slope * c.safe_threshold;
  return std::min(std::exp(2.0 * d - 2.0 * c.half_width), c.safe_cap);
}

RewardTerms reward(const EnvConfig& c, const EnvState& s, std::size_t i) {
  const AgentState& p = s.pursuers.at(i);
  const double dist = distance(p, s.evader);
  RewardTerms r;
  r.cap = dist <= c.capture_radius ? c.capture_reward : 0.0;
  r.aux = -c.distance_coef * dist;
  r.safe = -boundary_penalty(c, std::max(std::abs(p.x), std::abs(p.y)));
  r.total = r.cap + r.aux + r.safe;
  return r;
}

StepResult step(const EnvConfig& c, EnvState& s, std::span<const Command> actions, const Command& evader_command) {
  if (s.done) throw std::logic_error("env::step: episode already finished");
  if (actions.size() != s.pursuers.size())
    throw std::invalid_argument("env::step: expected " + std::to_string(s.pursuers.size()) + " pursuer actions, got " +
                                std::to_string(actions.size()));
  for (const auto& a : actions) require_finite(a, "pursuer");
  require_finite(evader_command, "evader");

  const double alpha = c.action_scale;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const double a0 = std::clamp(actions[i][0], -alpha, alpha);
    const double a1 = std::clamp(actions[i][1], -alpha, alpha);
    advance(c, s.pursuers[i], (a0 + alpha) / (2.0 * alpha) * c.pursuer_speed, a1 / alpha * c.max_yaw_rate,
            c.pursuer_speed);
  }
  advance(c, s.evader, std::clamp(evader_command[0], 0.0, 1.0) * c.evader_speed, evader_command[1], c.evader_speed);
  ++s.step;

  StepResult out;
  double closest = INFINITY;
  for (std::size_t i = 0; i < s.pursuers.size(); ++i) {
    out.terms.push_back(reward(c, s, i));
    out.rewards.push_back(out.terms.back().total);
    const double d = distance(s.pursuers[i], s.evader);
    if (d <= c.capture_radius && d < closest) {
      closest = d;
      s.capture = {true, i, s.step};
      out.captured = true;
    }
  }
  s.done = out.captured || s.step >= c.horizon;
  out.done = s.done;
  return out;
}

policy::Observation observe(const EnvState& s, std::size_t i) {
  const AgentState& me = s.pursuers.at(i);
  policy::Observation o;
  o.self = {me.x, me.y, std::cos(me.psi), std::sin(me.psi), me.speed};
  o.evader = {s.evader.x - me.x, s.evader.y - me.y, s.evader.vx(), s.evader.vy()};
  for (std::size_t j = 0; j < s.pursuers.size(); ++j) {
    if (j == i) continue;
    const AgentState& p = s.pursuers[j];
    o.peers.push_back({p.x - me.x, p.y - me.y, p.vx(), p.vy()});
  }
  return o;
}

void write_trajectory(std::ostream& out, const EnvState& s, std::span<const Command> actions,
                      const Command& evader_command, const StepResult& result) {
  auto line = [&](std::size_t agent, const AgentState& a, const Command& cmd, const RewardTerms& r) {
    nlohmann::json j{{"step", s.step},     {"agent", agent},    {"x", a.x},          {"y", a.y},
                     {"psi", a.psi},       {"speed", a.speed},  {"action", {cmd[0], cmd[1]}},
                     {"r_cap", r.cap},     {"r_aux", r.aux},    {"r_safe", r.safe}};
    out << j.dump() << '\n';
  };
  for (std::size_t i = 0; i < s.pursuers.size(); ++i) line(i, s.pursuers[i], actions[i], result.terms[i]);
  line(s.pursuers.size(), s.evader, evader_command, RewardTerms{});
}

}  // namespace pursuit::env
