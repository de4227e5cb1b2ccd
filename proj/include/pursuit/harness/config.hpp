#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pursuit/trainer/trainer.hpp"

namespace pursuit::harness {

struct EvalSettings {
  std::size_t trials = 100;
  std::uint64_t seed = 1000;
};

/// Settings for the multi-run studies (ablation and scalability sweep).
struct StudySettings {
  std::size_t episodes = 300;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t eval_trials = 100;
  std::vector<std::size_t> pursuer_counts{2, 3, 4, 5, 6};
};

/// The whole experiment description. Serialised as JSON with one object per
/// section; every key is optional on input (defaults fill the gaps) and
/// unknown keys are rejected.
struct RunConfig {
  env::EnvConfig env;
  evader::EvaderConfig evader;
  policy::PolicyConfig policy;
  trainer::TrainConfig train;
  EvalSettings eval;
  StudySettings study;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// 16 hex digits of FNV-1a over the canonical JSON dump.
  std::string hash() const;
  trainer::TrainSetup setup() const;
};

}  // namespace pursuit::harness
