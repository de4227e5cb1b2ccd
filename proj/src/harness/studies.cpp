#include "pursuit/harness/studies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pursuit::harness {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

// Data lines of a stamped CSV: comments dropped, first remaining line is the header.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("csv: missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_table(const std::filesystem::path& path) {
  Table t;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (t.header.empty())
      t.header = split(line);
    else
      t.rows.push_back(split(line));
  }
  return t;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

// Mean capture steps over runs that captured at least once.
double mean_capture_steps(const std::vector<RunOutcome>& runs) {
  std::vector<double> steps;
  for (const auto& r : runs)
    if (r.eval.success_rate > 0.0) steps.push_back(r.eval.avg_capture_steps);
  return mean(steps);
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos)
    throw std::invalid_argument("tidy field may not contain separators: " + s);
}

}  // namespace

json RunInfo::to_json() const {
  return {{"experiment", experiment},
          {"variant", variant},
          {"seed", seed},
          {"n_pursuers", n_pursuers},
          {"config_hash", config_hash}};
}

RunInfo RunInfo::from_json(const json& j) {
  RunInfo r;
  r.experiment = j.at("experiment").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_pursuers = j.at("n_pursuers").get<std::size_t>();
  r.config_hash = j.value("config_hash", std::string());
  return r;
}

RunOutcome train_and_evaluate(const RunConfig& config, const RunInfo& info, std::size_t eval_trials,
                              const std::filesystem::path& dir, const Progress& progress) {
  config.validate();
  std::filesystem::create_directories(dir);
  const std::string hash = config.hash();
  config.save(dir / "config.json");
  RunOutcome out;
  out.info = info;
  out.info.config_hash = hash;
  out.info.variant = policy::variant_name(config.policy.variant);
  out.info.seed = config.train.seed;
  out.info.n_pursuers = config.env.n_pursuers;
  open_out(dir / "run.json") << out.info.to_json().dump(2) << '\n';

  trainer::TrainOutputs outputs;
  outputs.dir = dir;
  outputs.config_hash = hash;
  if (progress) {
    const std::size_t every = std::max<std::size_t>(1, config.train.episodes / 10);
    outputs.on_episode = [&](const trainer::MetricsRow& row) {
      if (row.episode % every != 0 && row.episode != config.train.episodes) return;
      progress(out.info.experiment + " " + out.info.variant + " seed " + std::to_string(out.info.seed) + " N=" +
               std::to_string(out.info.n_pursuers) + ": episode " + std::to_string(row.episode) + "/" +
               std::to_string(config.train.episodes) + " group success " + fmt(row.success_in_group));
    };
  }
  const auto result = trainer::train(config.setup(), outputs);
  out.initial_state_hashes = result.initial_state_hashes;
  out.checkpoint = dir / "final.json";
  trainer::save_team(out.checkpoint, result.team,
                     {{"episode", config.train.episodes},
                      {"seed", config.train.seed},
                      {"config_hash", hash},
                      {"n_pursuers", config.env.n_pursuers},
                      {"variant", out.info.variant}});
  out.eval = trainer::evaluate_team(result.team, config.env, config.evader, eval_trials, config.eval.seed);
  write_report(dir / "final_eval.json", out.eval, hash, config.eval.seed);
  return out;
}

trainer::EvalReport evaluate(const std::filesystem::path& checkpoint, const RunConfig& config,
                             evader::EvaderKind kind, std::size_t n_trials, std::uint64_t seed,
                             const std::filesystem::path& trajectory_dir, std::size_t trajectory_trials) {
  const auto team = trainer::load_team(checkpoint, config.policy, config.env.n_pursuers);
  auto evader_config = config.evader;
  evader_config.kind = kind;
  std::vector<std::ofstream> files;
  files.reserve(trajectory_trials);
  const trainer::TrajectorySink sink = [&](std::size_t trial) -> std::ostream* {
    if (trial >= trajectory_trials) return nullptr;
    files.push_back(open_out(trajectory_dir / ("trial" + std::to_string(trial) + ".jsonl")));
    return &files.back();
  };
  return trainer::evaluate_team(team, config.env, evader_config, n_trials, seed,
                                trajectory_trials > 0 ? sink : trainer::TrajectorySink{});
}

json report_json(const trainer::EvalReport& report, const std::string& config_hash, std::uint64_t seed) {
  json trials = json::array();
  for (const auto& t : report.trials)
    trials.push_back(
        {{"seed", t.seed}, {"captured", t.captured}, {"steps", t.steps}, {"min_distance", t.min_distance}});
  return {{"config_hash", config_hash},
          {"seed", seed},
          {"n_trials", report.n_trials},
          {"success_rate", report.success_rate},
          {"avg_capture_steps", report.avg_capture_steps},
          {"trials", trials}};
}

void write_report(const std::filesystem::path& path, const trainer::EvalReport& report,
                  const std::string& config_hash, std::uint64_t seed) {
  auto out = open_out(path);
  if (path.extension() == ".csv") {
    out << "# config_hash=" << config_hash << " seed=" << seed << '\n'
        << "n_trials,success_rate,avg_capture_steps\n"
        << report.n_trials << ',' << fmt(report.success_rate) << ',' << fmt(report.avg_capture_steps) << '\n';
  } else {
    out << report_json(report, config_hash, seed).dump(2) << '\n';
  }
}

std::vector<SweepRow> scalability_sweep(const RunConfig& config, const std::filesystem::path& out_dir,
                                        const Progress& progress) {
  config.validate();
  std::vector<SweepRow> rows;
  for (const std::size_t n : config.study.pursuer_counts) {
    SweepRow row;
    row.n_pursuers = n;
    std::vector<RunOutcome> runs;
    for (const std::uint64_t seed : config.study.seeds) {
      RunConfig c = config;
      c.env.n_pursuers = n;
      c.policy.variant = policy::Variant::full;
      c.train.episodes = config.study.episodes;
      c.train.seed = seed;
      runs.push_back(train_and_evaluate(c, {"sweep", {}, seed, n, {}}, config.study.eval_trials,
                                        out_dir / ("n" + std::to_string(n)) / ("seed" + std::to_string(seed)),
                                        progress));
      row.success_per_seed.push_back(runs.back().eval.success_rate);
    }
    row.success_rate = mean(row.success_per_seed);
    row.avg_capture_steps = mean_capture_steps(runs);
    rows.push_back(row);
  }
  auto out = open_out(out_dir / "sweep.csv");
  out << "# config_hash=" << config.hash() << " seeds=" << config.study.seeds.size() << '\n'
      << "n_pursuers,success_rate,avg_capture_steps";
  for (const auto seed : config.study.seeds) out << ",success_seed" << seed;
  out << '\n';
  for (const auto& r : rows) {
    out << r.n_pursuers << ',' << fmt(r.success_rate) << ',' << fmt(r.avg_capture_steps);
    for (double s : r.success_per_seed) out << ',' << fmt(s);
    out << '\n';
  }
  return rows;
}

AblationResult ablation_suite(const RunConfig& config, const std::filesystem::path& out_dir,
                              const Progress& progress) {
  config.validate();
  const policy::Variant variants[] = {policy::Variant::full, policy::Variant::no_history,
                                      policy::Variant::no_relation, policy::Variant::mlp};
  AblationResult result;
  result.seed_audit_consistent = true;
  std::map<std::uint64_t, std::vector<std::uint64_t>> reference_hashes;
  auto runs_csv = open_out(out_dir / "ablation_runs.csv");
  auto audit_csv = open_out(out_dir / "ablation_seed_audit.csv");
  const std::string stamp = "# config_hash=" + config.hash();
  runs_csv << stamp << "\nvariant,seed,success_rate,avg_capture_steps\n";
  audit_csv << stamp << "\nvariant,seed,episodes,hash_digest,matches_full\n";

  for (const auto variant : variants) {
    AblationRow row;
    row.variant = variant;
    std::vector<RunOutcome> runs;
    for (const std::uint64_t seed : config.study.seeds) {
      RunConfig c = config;
      c.policy.variant = variant;
      c.train.episodes = config.study.episodes;
      c.train.seed = seed;
      const std::string name = policy::variant_name(variant);
      runs.push_back(train_and_evaluate(c, {"ablation", name, seed, c.env.n_pursuers, {}}, config.study.eval_trials,
                                        out_dir / name / ("seed" + std::to_string(seed)), progress));
      const auto& run = runs.back();
      row.success_per_seed.push_back(run.eval.success_rate);
      runs_csv << name << ',' << seed << ',' << fmt(run.eval.success_rate) << ','
               << fmt(run.eval.avg_capture_steps) << '\n'
               << std::flush;

      auto [it, fresh] = reference_hashes.emplace(seed, run.initial_state_hashes);
      const bool matches = fresh || it->second == run.initial_state_hashes;
      result.seed_audit_consistent = result.seed_audit_consistent && matches;
      std::uint64_t digest = 0xcbf29ce484222325ULL;
      for (const auto h : run.initial_state_hashes) {
        digest ^= h;
        digest *= 0x100000001b3ULL;
      }
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(digest));
      audit_csv << name << ',' << seed << ',' << run.initial_state_hashes.size() << ',' << hex << ','
                << (matches ? 1 : 0) << '\n';
    }
    row.success_rate = mean(row.success_per_seed);
    row.success_std = population_std(row.success_per_seed);
    row.avg_capture_steps = mean_capture_steps(runs);
    result.rows.push_back(row);
  }
  const double full = result.rows.front().success_rate;
  for (auto& r : result.rows) r.delta_vs_full = r.success_rate - full;

  auto out = open_out(out_dir / "ablation.csv");
  out << stamp << " seeds=" << config.study.seeds.size() << '\n'
      << "variant,success_rate,success_std,avg_capture_steps,delta_vs_full\n";
  for (const auto& r : result.rows)
    out << policy::variant_name(r.variant) << ',' << fmt(r.success_rate) << ',' << fmt(r.success_std) << ','
        << fmt(r.avg_capture_steps) << ',' << fmt(r.delta_vs_full) << '\n';
  return result;
}

std::string format_tidy(const std::vector<TidyRow>& rows, bool with_header) {
  std::string s;
  if (with_header) s += std::string(kTidyHeader) + '\n';
  for (const auto& r : rows) {
    check_field(r.experiment);
    check_field(r.variant);
    check_field(r.metric);
    s += r.experiment + ',' + r.variant + ',' + std::to_string(r.seed) + ',' + r.metric + ',' +
         std::to_string(r.index) + ',' + fmt(r.value) + '\n';
  }
  return s;
}

std::vector<TidyRow> parse_tidy(const std::string& text) {
  std::vector<TidyRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#' || line == kTidyHeader) continue;
    const auto f = split(line);
    if (f.size() != 6) throw std::runtime_error("tidy: line " + std::to_string(line_no) + " has " +
                                                std::to_string(f.size()) + " fields, expected 6");
    try {
      rows.push_back({f[0], f[1], std::stoull(f[2]), f[3], static_cast<std::size_t>(std::stoull(f[4])),
                      std::stod(f[5])});
    } catch (const std::logic_error&) {
      throw std::runtime_error("tidy: malformed number on line " + std::to_string(line_no));
    }
  }
  return rows;
}

std::vector<TidyRow> collect_plot_rows(const std::filesystem::path& in_dir) {
  std::vector<std::filesystem::path> run_dirs;
  if (std::filesystem::exists(in_dir)) {
    for (const auto& entry : std::filesystem::recursive_directory_iterator(in_dir))
      if (entry.is_regular_file() && entry.path().filename() == "run.json")
        run_dirs.push_back(entry.path().parent_path());
  }
  std::sort(run_dirs.begin(), run_dirs.end());

  std::vector<TidyRow> rows;
  for (const auto& dir : run_dirs) {
    const RunInfo info = RunInfo::from_json(json::parse(read_text(dir / "run.json")));
    auto add = [&](const std::string& metric, std::size_t index, double value) {
      rows.push_back({info.experiment, info.variant, info.seed, metric, index, value});
    };
    if (std::filesystem::exists(dir / "metrics.csv")) {
      const Table t = read_table(dir / "metrics.csv");
      const std::size_t ep = t.column("episode");
      const std::size_t success = t.column("success_in_group");
      std::vector<std::size_t> agents;
      for (std::size_t i = 0; i < info.n_pursuers; ++i) agents.push_back(t.column("mean_return_agent" + std::to_string(i)));
      for (const auto& r : t.rows) {
        double team = 0.0;
        for (const auto c : agents) team += std::stod(r.at(c));
        const auto episode = static_cast<std::size_t>(std::stoull(r.at(ep)));
        add("mean_return", episode, team / static_cast<double>(agents.size()));
        add("success_in_group", episode, std::stod(r.at(success)));
      }
    }
    if (std::filesystem::exists(dir / "eval_summary.csv")) {
      const Table t = read_table(dir / "eval_summary.csv");
      const std::size_t ep = t.column("episode");
      const std::size_t rate = t.column("success_rate");
      for (const auto& r : t.rows)
        add("eval_success_rate", static_cast<std::size_t>(std::stoull(r.at(ep))), std::stod(r.at(rate)));
    }
    if (std::filesystem::exists(dir / "final_eval.json")) {
      const json report = json::parse(read_text(dir / "final_eval.json"));
      add("final_success_rate", info.n_pursuers, report.at("success_rate").get<double>());
      add("final_avg_capture_steps", info.n_pursuers, report.at("avg_capture_steps").get<double>());
    }
    const auto traj_dir = dir / "trajectories";
    if (std::filesystem::is_directory(traj_dir)) {
      std::vector<std::pair<std::size_t, std::filesystem::path>> files;
      for (const auto& entry : std::filesystem::directory_iterator(traj_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("trial", 0) == 0 && entry.path().extension() == ".jsonl")
          files.emplace_back(std::stoull(name.substr(5)), entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& [trial, path] : files) {
        std::istringstream lines(read_text(path));
        for (std::string line; std::getline(lines, line);) {
          if (line.empty()) continue;
          const json rec = json::parse(line);
          const std::string prefix =
              "trial" + std::to_string(trial) + "/agent" + std::to_string(rec.at("agent").get<std::size_t>()) + "/";
          const auto step = rec.at("step").get<std::size_t>();
          add(prefix + "x", step, rec.at("x").get<double>());
          add(prefix + "y", step, rec.at("y").get<double>());
        }
      }
    }
  }
  return rows;
}

std::size_t emit_plot_data(const std::filesystem::path& in_dir, const std::filesystem::path& out_file) {
  const auto rows = collect_plot_rows(in_dir);
  const bool empty = !std::filesystem::exists(out_file) || std::filesystem::file_size(out_file) == 0;
  auto out = open_out(out_file, std::ios::app);
  out << format_tidy(rows, empty);
  return rows.size();
}

}  // namespace pursuit::harness
