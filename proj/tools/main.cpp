// Command-line front end: train, eval, ablate, sweep, gradcheck, selftest, plotdata.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pursuit/autodiff/diff_array.hpp"
#include "pursuit/harness/config.hpp"
#include "pursuit/harness/studies.hpp"
#include "pursuit_checks/checks.hpp"

namespace fs = std::filesystem;
using namespace pursuit;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> evader;
  std::optional<std::size_t> n_pursuers;
  std::optional<std::size_t> episodes;
  std::string out;
};

void add_common(CLI::App& cmd, Common& c, const std::string& out_default, const std::string& out_help) {
  cmd.add_option("--config", c.config, "JSON run config; missing keys take their defaults")->check(CLI::ExistingFile);
  cmd.add_option("--seed", c.seed, "master seed");
  cmd.add_option("--evader", c.evader, "evader kind: potential, random or stationary");
  cmd.add_option("--n-pursuers", c.n_pursuers, "number of pursuers")->check(CLI::Range(1, 64));
  cmd.add_option("--episodes", c.episodes, "training episodes")->check(CLI::PositiveNumber);
  c.out = out_default;
  cmd.add_option("--out", c.out, out_help)->capture_default_str();
}

harness::RunConfig load(const Common& c) {
  harness::RunConfig cfg = c.config.empty() ? harness::RunConfig{} : harness::RunConfig::load(c.config);
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.evader) cfg.evader.kind = evader::parse_kind(*c.evader);
  if (c.n_pursuers) cfg.env.n_pursuers = *c.n_pursuers;
  if (c.episodes) cfg.train.episodes = *c.episodes;
  cfg.validate();
  return cfg;
}

// Study seeds: --seed s replaces them with s, s+1, ... keeping their count.
void apply_study_overrides(const Common& c, harness::RunConfig& cfg) {
  if (c.seed)
    for (std::size_t i = 0; i < cfg.study.seeds.size(); ++i) cfg.study.seeds[i] = *c.seed + i;
  if (c.episodes) cfg.study.episodes = *c.episodes;
}

void progress(const std::string& line) { std::cerr << line << std::endl; }

void print_report(const trainer::EvalReport& r) {
  std::printf("trials %zu  success_rate %.4f  avg_capture_steps %.3f\n", r.n_trials, r.success_rate,
              r.avg_capture_steps);
}

int print_checks(const std::vector<checks::Result>& results) {
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s\n", r.line().c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent pursuit with selective state-space policies and group-relative PPO"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);

  Common train_opts, eval_opts, ablate_opts, sweep_opts, grad_opts, self_opts;
  std::string variant;
  std::size_t eval_trials = 0;

  auto* train = app.add_subcommand("train", "train a team and evaluate the final checkpoint");
  add_common(*train, train_opts, "runs/train", "output directory");
  train->add_option("--variant", variant, "policy variant: full, no_history, no_relation, mlp");
  train->add_option("--eval-trials", eval_trials, "final evaluation trials (default from config)");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a team checkpoint");
  add_common(*eval, eval_opts, "", "report path (.json or .csv); prints only when empty");
  eval->add_option("--checkpoint", checkpoint, "team checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--trials", eval_trials, "evaluation trials (default from config)");
  std::size_t trajectories = 0;
  eval->add_option("--trajectories", trajectories,
                   "dump the first N trials as JSON lines into trajectories/ next to the checkpoint");

  auto* ablate = app.add_subcommand("ablate", "train every policy variant on every study seed");
  add_common(*ablate, ablate_opts, "runs/ablation", "output directory");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate across pursuer counts");
  add_common(*sweep, sweep_opts, "runs/sweep", "output directory");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full policy and every op");
  add_common(*grad, grad_opts, "", "unused");

  auto* self = app.add_subcommand("selftest", "run the fast oracle and invariant checks");
  add_common(*self, self_opts, "", "scratch directory (default: system temp)");

  std::string plot_in, plot_out;
  auto* plot = app.add_subcommand("plotdata", "collect run directories into tidy long-format CSV");
  plot->add_option("--in", plot_in, "directory holding run outputs")->required()->check(CLI::ExistingDirectory);
  plot->add_option("--out", plot_out, "tidy CSV to append to")->required();

  CLI11_PARSE(app, argc, argv);
  pursuit::ad::tune_allocator();

  try {
    if (*train) {
      auto cfg = load(train_opts);
      if (!variant.empty()) cfg.policy.variant = policy::parse_variant(variant);
      const std::size_t trials = eval_trials ? eval_trials : cfg.eval.trials;
      const auto start = std::chrono::steady_clock::now();
      const auto outcome = harness::train_and_evaluate(cfg, {"train", {}, 0, 0, {}}, trials, train_opts.out, progress);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("config_hash %s  seed %llu  episodes %zu  wall %.1fs\n", outcome.info.config_hash.c_str(),
                  static_cast<unsigned long long>(cfg.train.seed), cfg.train.episodes, secs);
      std::printf("checkpoint %s\n", outcome.checkpoint.string().c_str());
      print_report(outcome.eval);
      return 0;
    }
    if (*eval) {
      // Without --config, use the config saved next to the checkpoint when present.
      Common opts = eval_opts;
      const fs::path beside = fs::path(checkpoint).parent_path() / "config.json";
      if (opts.config.empty() && fs::exists(beside)) opts.config = beside.string();
      const auto cfg = load(opts);
      const std::size_t trials = eval_trials ? eval_trials : cfg.eval.trials;
      const std::uint64_t seed = eval_opts.seed ? *eval_opts.seed : cfg.eval.seed;
      const auto report = harness::evaluate(checkpoint, cfg, cfg.evader.kind, trials, seed,
                                            fs::path(checkpoint).parent_path() / "trajectories", trajectories);
      print_report(report);
      if (!eval_opts.out.empty()) harness::write_report(eval_opts.out, report, cfg.hash(), seed);
      return 0;
    }
    if (*ablate) {
      auto cfg = load(ablate_opts);
      apply_study_overrides(ablate_opts, cfg);
      const auto result = harness::ablation_suite(cfg, ablate_opts.out, progress);
      std::printf("%-12s %8s %8s %10s\n", "variant", "success", "std", "delta");
      for (const auto& r : result.rows)
        std::printf("%-12s %8.4f %8.4f %+10.4f\n", policy::variant_name(r.variant).c_str(), r.success_rate,
                    r.success_std, r.delta_vs_full);
      std::printf("seed audit %s\n", result.seed_audit_consistent ? "consistent" : "MISMATCH");
      return result.seed_audit_consistent ? 0 : 1;
    }
    if (*sweep) {
      auto cfg = load(sweep_opts);
      apply_study_overrides(sweep_opts, cfg);
      // --n-pursuers caps the sweep at that team size.
      if (sweep_opts.n_pursuers) {
        cfg.study.pursuer_counts.clear();
        for (std::size_t n = 2; n <= *sweep_opts.n_pursuers; ++n) cfg.study.pursuer_counts.push_back(n);
        cfg.validate();
      }
      const auto rows = harness::scalability_sweep(cfg, sweep_opts.out, progress);
      std::printf("%-10s %8s %12s\n", "pursuers", "success", "avg_steps");
      for (const auto& r : rows) std::printf("%-10zu %8.4f %12.3f\n", r.n_pursuers, r.success_rate, r.avg_capture_steps);
      return 0;
    }
    if (*grad) {
      const auto cfg = load(grad_opts);
      return print_checks({checks::gradient_correctness(cfg.policy, cfg.env.n_pursuers, cfg.train.seed)});
    }
    if (*self) {
      const auto cfg = load(self_opts);
      const fs::path scratch = self_opts.out.empty() ? fs::temp_directory_path() / "pursuit_selftest" : fs::path(self_opts.out);
      return print_checks(checks::fast_suite(cfg, scratch));
    }
    if (*plot) {
      const std::size_t n = harness::emit_plot_data(plot_in, plot_out);
      std::printf("%zu rows appended to %s\n", n, plot_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
