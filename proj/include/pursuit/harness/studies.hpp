#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pursuit/harness/config.hpp"

namespace pursuit::harness {

/// Optional progress sink for long studies.
using Progress = std::function<void(const std::string&)>;

/// Identity of one training run, written as run.json in its directory.
struct RunInfo {
  std::string experiment;
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t n_pursuers = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
  static RunInfo from_json(const nlohmann::json& j);
};

struct RunOutcome {
  RunInfo info;
  trainer::EvalReport eval;
  std::vector<std::uint64_t> initial_state_hashes;
  std::filesystem::path checkpoint;
};

/// Trains with `config` into `dir` (config.json, run.json, training logs,
/// checkpoints), then evaluates the final team with `eval_trials` trials
/// seeded by config.eval.seed and writes final_eval.json.
RunOutcome train_and_evaluate(const RunConfig& config, const RunInfo& info, std::size_t eval_trials,
                              const std::filesystem::path& dir, const Progress& progress = {});

/// Loads a team checkpoint built with `config` and evaluates it against the
/// given evader kind. The first `trajectory_trials` trials are dumped as
/// JSON lines to trajectory_dir/trial{k}.jsonl.
trainer::EvalReport evaluate(const std::filesystem::path& checkpoint, const RunConfig& config,
                             evader::EvaderKind kind, std::size_t n_trials, std::uint64_t seed,
                             const std::filesystem::path& trajectory_dir = {}, std::size_t trajectory_trials = 0);

/// Report with per-trial records, stamped with the config hash and seed.
nlohmann::json report_json(const trainer::EvalReport& report, const std::string& config_hash, std::uint64_t seed);
void write_report(const std::filesystem::path& path, const trainer::EvalReport& report,
                  const std::string& config_hash, std::uint64_t seed);

struct SweepRow {
  std::size_t n_pursuers = 0;
  std::vector<double> success_per_seed;
  double success_rate = 0.0;       // mean over seeds
  double avg_capture_steps = 0.0;  // mean over seeds that captured at least once
};

/// Trains and evaluates the full policy for every pursuer count in
/// config.study.pursuer_counts and every study seed. Writes sweep.csv with one
/// row per pursuer count.
std::vector<SweepRow> scalability_sweep(const RunConfig& config, const std::filesystem::path& out_dir,
                                        const Progress& progress = {});

struct AblationRow {
  policy::Variant variant = policy::Variant::full;
  std::vector<double> success_per_seed;
  double success_rate = 0.0;  // mean over seeds
  double success_std = 0.0;   // population std over seeds
  double avg_capture_steps = 0.0;
  double delta_vs_full = 0.0;  // success_rate minus the full variant's
};

struct AblationResult {
  std::vector<AblationRow> rows;  // full, no_history, no_relation, mlp
  /// True when, for every seed, all variants saw the same initial-state
  /// hashes in every episode.
  bool seed_audit_consistent = false;
};

/// Trains every variant on every study seed and writes ablation.csv (one row
/// per variant), ablation_runs.csv (one row per run) and
/// ablation_seed_audit.csv.
AblationResult ablation_suite(const RunConfig& config, const std::filesystem::path& out_dir,
                              const Progress& progress = {});

/// One observation in tidy long format. `index` is the episode for learning
/// curves and periodic evaluations, and the pursuer count for final results.
struct TidyRow {
  std::string experiment;
  std::string variant;
  std::uint64_t seed = 0;
  std::string metric;
  std::size_t index = 0;
  double value = 0.0;

  bool operator==(const TidyRow&) const = default;
};

inline constexpr const char* kTidyHeader = "experiment,variant,seed,metric,index,value";

std::string format_tidy(const std::vector<TidyRow>& rows, bool with_header);
/// Inverse of format_tidy; skips '#' comment lines and the header.
std::vector<TidyRow> parse_tidy(const std::string& text);

/// Collects every run directory (run.json) under `in_dir` into tidy rows:
/// mean_return per episode (team mean), success_in_group per episode,
/// eval_success_rate per periodic evaluation, final_success_rate /
/// final_avg_capture_steps per run, and for every trajectories/trial{k}.jsonl
/// in a run directory the metrics "trial{k}/agent{a}/{x,y}" indexed by step.
std::vector<TidyRow> collect_plot_rows(const std::filesystem::path& in_dir);
/// Appends collect_plot_rows(in_dir) to `out_file`, writing the header only
/// when the file is absent or empty. Returns the number of rows written.
std::size_t emit_plot_data(const std::filesystem::path& in_dir, const std::filesystem::path& out_file);

}  // namespace pursuit::harness
