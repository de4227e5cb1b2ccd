#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "pursuit/policy/policy.hpp"

namespace pursuit::env {

struct EnvConfig {
  double half_width = 2.0;  // arena is [-half_width, half_width]^2
  std::size_t n_pursuers = 2;
  double pursuer_speed = 0.2;
  double evader_speed = 0.3;
  double capture_radius = 0.3;
  double near_capture_radius = 0.5;
  double dt = 1.0;
  std::size_t horizon = 25;
  double max_yaw_rate = 1.0;
  double action_scale = 2.0;  // pursuer commands live in [-action_scale, action_scale]^2

  double min_separation = 0.5;
  std::size_t max_reset_tries = 1000;

  double capture_reward = 12.0;
  double distance_coef = 0.35;
  double safe_threshold = 1.85;
  double safe_slope = 80.0;
  double safe_cap = 12.0;

  void validate() const;
};

struct AgentState {
  double x = 0.0, y = 0.0, psi = 0.0, speed = 0.0;

  double vx() const;
  double vy() const;
};

struct CaptureEvent {
  bool captured = false;
  std::size_t pursuer = 0;  // closest pursuer within the capture radius
  std::size_t step = 0;     // step index after the capturing transition
};

struct EnvState {
  std::vector<AgentState> pursuers;
  AgentState evader;
  std::size_t step = 0;
  bool done = false;
  CaptureEvent capture;
};

struct RewardTerms {
  double cap = 0.0, aux = 0.0, safe = 0.0, total = 0.0;
};

struct StepResult {
  std::vector<RewardTerms> terms;  // one per pursuer
  std::vector<double> rewards;     // terms[i].total
  bool done = false;
  bool captured = false;  // capture happened on this transition
};

using Command = std::array<double, 2>;

/// Agents placed uniformly in the arena with pairwise separation at least
/// min_separation, random headings, zero speed.
EnvState reset(const EnvConfig& config, std::mt19937_64& rng);

/// Pursuer commands are policy actions, clipped to [-alpha, alpha]^2 and mapped
/// to speed (a0 + alpha) / (2 alpha) * v_max and yaw rate a1 / alpha * yaw_max.
/// The evader command is [speed fraction, yaw rate] in physical units.
StepResult step(const EnvConfig& config, EnvState& state, std::span<const Command> pursuer_actions,
                const Command& evader_command);

/// Reward of pursuer i in the given (post-step) state.
RewardTerms reward(const EnvConfig& config, const EnvState& state, std::size_t i);

/// Boundary penalty magnitude for Chebyshev distance `d` from the centre.
double boundary_penalty(const EnvConfig& config, double d);

policy::Observation observe(const EnvState& state, std::size_t i);

double distance(const AgentState& a, const AgentState& b);

/// One JSON line per agent for the transition that produced `state`. Pursuers
/// are agents 0..N-1 with their reward terms; the evader is agent N with zero
/// terms.
void write_trajectory(std::ostream& out, const EnvState& state, std::span<const Command> pursuer_actions,
                      const Command& evader_command, const StepResult& result);

}  // namespace pursuit::env
