#pragma once

#include <array>
#include <random>
#include <string>

#include "pursuit/env/env.hpp"

namespace pursuit::evader {

/// `stationary` holds still; it exists for scripted baselines and tests.
enum class EvaderKind { random, potential_field, stationary };

std::string kind_name(EvaderKind kind);
/// Accepts "random", "potential", "potential_field" and "stationary".
EvaderKind parse_kind(const std::string& name);

struct EvaderConfig {
  EvaderKind kind = EvaderKind::potential_field;
  double wall_gain = 1.5;
  double pursuer_gain = 1.0;
  double falloff = 2.0;              // exponent of the distance in each repulsion denominator
  double min_speed_fraction = 0.5;   // random evader speed ~ U[min_speed_fraction, 1]
  double heading_gain = 1.0;         // yaw command = gain * heading error / dt, saturated
  double min_margin = 1e-6;          // floor on wall margins and pursuer distances

  void validate() const;
};

/// [speed fraction, yaw rate] with speed ~ U[min_speed_fraction, 1] and
/// yaw ~ U[-yaw_max, yaw_max]; speed is drawn first.
env::Command random_evader(const env::EnvConfig& env, const EvaderConfig& config, std::mt19937_64& rng);

/// Sum of pursuer repulsions k_p (x_e - x_i) / d^falloff and inward wall
/// pushes k_w / margin^falloff. A pursuer on top of the evader pushes along +x.
std::array<double, 2> potential_field_direction(const env::EnvConfig& env, const EvaderConfig& config,
                                                const env::EnvState& state);

/// Full speed, heading steered toward the field direction.
env::Command potential_field_evader(const env::EnvConfig& env, const EvaderConfig& config,
                                    const env::EnvState& state);

/// Dispatches on config.kind; `rng` is only consumed by the random evader.
env::Command evader_action(const env::EnvConfig& env, const EvaderConfig& config, const env::EnvState& state,
                           std::mt19937_64& rng);

}  // namespace pursuit::evader
