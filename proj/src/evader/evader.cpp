#include "pursuit/evader/evader.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pursuit::evader {

std::string kind_name(EvaderKind kind) {
  switch (kind) {
    case EvaderKind::random: return "random";
    case EvaderKind::potential_field: return "potential";
    case EvaderKind::stationary: return "stationary";
  }
  return "unknown";
}

EvaderKind parse_kind(const std::string& name) {
  if (name == "random") return EvaderKind::random;
  if (name == "potential" || name == "potential_field") return EvaderKind::potential_field;
  if (name == "stationary") return EvaderKind::stationary;
  throw std::invalid_argument("unknown evader kind '" + name + "' (expected random, potential or stationary)");
}

void EvaderConfig::validate() const {
  if (wall_gain < 0.0 || pursuer_gain < 0.0 || !(falloff > 0.0))
    throw std::invalid_argument("EvaderConfig: gains must be non-negative and falloff positive");
  if (!(min_speed_fraction >= 0.0 && min_speed_fraction <= 1.0))
    throw std::invalid_argument("EvaderConfig: min_speed_fraction must lie in [0, 1]");
  if (!(heading_gain > 0.0) || !(min_margin > 0.0))
    throw std::invalid_argument("EvaderConfig: heading_gain and min_margin must be positive");
}

env::Command random_evader(const env::EnvConfig& env, const EvaderConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> speed(config.min_speed_fraction, 1.0);
  std::uniform_real_distribution<double> yaw(-env.max_yaw_rate, env.max_yaw_rate);
  const double s = speed(rng);
  return {s, yaw(rng)};
}

std::array<double, 2> potential_field_direction(const env::EnvConfig& env, const EvaderConfig& config,
                                                const env::EnvState& state) {
  const auto& e = state.evader;
  double fx = 0.0, fy = 0.0;
  for (const auto& p : state.pursuers) {
    const double dx = e.x - p.x, dy = e.y - p.y;
    const double d = std::hypot(dx, dy);
    if (d == 0.0) {
      fx += config.pursuer_gain / std::pow(config.min_margin, config.falloff - 1.0);
      continue;
    }
    const double w = config.pursuer_gain / std::pow(std::max(d, config.min_margin), config.falloff);
    fx += w * dx;
    fy += w * dy;
  }
  auto push = [&](double margin) { return config.wall_gain / std::pow(std::max(margin, config.min_margin), config.falloff); };
  fx += push(e.x + env.half_width) - push(env.half_width - e.x);
  fy += push(e.y + env.half_width) - push(env.half_width - e.y);
  return {fx, fy};
}

env::Command potential_field_evader(const env::EnvConfig& env, const EvaderConfig& config,
                                    const env::EnvState& state) {
  const auto dir = potential_field_direction(env, config, state);
  if (dir[0] == 0.0 && dir[1] == 0.0) return {1.0, 0.0};
  const double error = std::remainder(std::atan2(dir[1], dir[0]) - state.evader.psi, 2.0 * std::numbers::pi);
  const double yaw = std::clamp(config.heading_gain * error / env.dt, -env.max_yaw_rate, env.max_yaw_rate);
  return {1.0, yaw};
}

env::Command evader_action(const env::EnvConfig& env, const EvaderConfig& config, const env::EnvState& state,
                           std::mt19937_64& rng) {
  switch (config.kind) {
    case EvaderKind::random: return random_evader(env, config, rng);
    case EvaderKind::potential_field: return potential_field_evader(env, config, state);
    case EvaderKind::stationary: return {0.0, 0.0};
  }
  throw std::logic_error("evader_action: unhandled kind");
}

}  // namespace pursuit::evader
