#include "pursuit/harness/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pursuit::harness {
namespace {

using nlohmann::json;

// Reads known keys of one section and rejects the rest.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (root.contains(name)) {
      node_ = root.at(name);
      if (!node_.is_object()) throw std::invalid_argument("config: section '" + name + "' must be an object");
    }
  }

  template <class T>
  void get(const char* key, T& value) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    try {
      value = node_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for " + name_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, v] : node_.items())
      if (!seen_.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in section '" + name_ + "'");
  }

 private:
  std::string name_;
  json node_ = json::object();
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  env.validate();
  evader.validate();
  policy.validate();
  train.validate();
  if (env.action_scale != policy.action_scale)
    throw std::invalid_argument("config: env.action_scale and policy.action_scale must agree");
  if (eval.trials == 0 || study.episodes == 0 || study.eval_trials == 0 || study.seeds.empty() ||
      study.pursuer_counts.empty())
    throw std::invalid_argument("config: eval and study sizes must be positive");
}

json RunConfig::to_json() const {
  const auto& s = policy.ssm;
  return json{
      {"env",
       {{"half_width", env.half_width},
        {"n_pursuers", env.n_pursuers},
        {"pursuer_speed", env.pursuer_speed},
        {"evader_speed", env.evader_speed},
        {"capture_radius", env.capture_radius},
        {"near_capture_radius", env.near_capture_radius},
        {"dt", env.dt},
        {"horizon", env.horizon},
        {"max_yaw_rate", env.max_yaw_rate},
        {"action_scale", env.action_scale},
        {"min_separation", env.min_separation},
        {"max_reset_tries", env.max_reset_tries},
        {"capture_reward", env.capture_reward},
        {"distance_coef", env.distance_coef},
        {"safe_threshold", env.safe_threshold},
        {"safe_slope", env.safe_slope},
        {"safe_cap", env.safe_cap}}},
      {"evader",
       {{"kind", evader::kind_name(evader.kind)},
        {"wall_gain", evader.wall_gain},
        {"pursuer_gain", evader.pursuer_gain},
        {"falloff", evader.falloff},
        {"min_speed_fraction", evader.min_speed_fraction},
        {"heading_gain", evader.heading_gain},
        {"min_margin", evader.min_margin}}},
      {"policy",
       {{"variant", policy::variant_name(policy.variant)},
        {"d_model", s.d_model},
        {"expand", s.expand},
        {"ssm_heads", s.n_heads},
        {"d_state", s.d_state},
        {"conv_width", s.conv_width},
        {"dt_init", s.dt_init},
        {"scan_chunk", s.scan_chunk},
        {"norm_eps", s.norm_eps},
        {"history_length", policy.history_length},
        {"attention_heads", policy.attention_heads},
        {"action_scale", policy.action_scale},
        {"sigma_floor", policy.sigma_floor},
        {"mlp_hidden", policy.mlp_hidden},
        {"head_init", policy.head_init}}},
      {"train",
       {{"group_size", train.group_size},
        {"episodes", train.episodes},
        {"update_iters", train.update_iters},
        {"clip_eps", train.clip_eps},
        {"tau", train.tau},
        {"lr", train.lr},
        {"clip_norm", train.clip_norm},
        {"noise_start", train.noise_start},
        {"noise_end", train.noise_end},
        {"seed", train.seed},
        {"checkpoint_every", train.checkpoint_every},
        {"periodic_eval_trials", train.periodic_eval_trials}}},
      {"eval", {{"trials", eval.trials}, {"seed", eval.seed}}},
      {"study",
       {{"episodes", study.episodes},
        {"seeds", study.seeds},
        {"eval_trials", study.eval_trials},
        {"pursuer_counts", study.pursuer_counts}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, v] : j.items())
    if (key != "env" && key != "evader" && key != "policy" && key != "train" && key != "eval" && key != "study")
      throw std::invalid_argument("config: unknown section '" + key + "'");
  RunConfig c;
  {
    Section s(j, "env");
    auto& e = c.env;
    s.get("half_width", e.half_width);
    s.get("n_pursuers", e.n_pursuers);
    s.get("pursuer_speed", e.pursuer_speed);
    s.get("evader_speed", e.evader_speed);
    s.get("capture_radius", e.capture_radius);
    s.get("near_capture_radius", e.near_capture_radius);
    s.get("dt", e.dt);
    s.get("horizon", e.horizon);
    s.get("max_yaw_rate", e.max_yaw_rate);
    s.get("action_scale", e.action_scale);
    s.get("min_separation", e.min_separation);
    s.get("max_reset_tries", e.max_reset_tries);
    s.get("capture_reward", e.capture_reward);
    s.get("distance_coef", e.distance_coef);
    s.get("safe_threshold", e.safe_threshold);
    s.get("safe_slope", e.safe_slope);
    s.get("safe_cap", e.safe_cap);
    s.finish();
  }
  {
    Section s(j, "evader");
    auto& e = c.evader;
    std::string kind = evader::kind_name(e.kind);
    s.get("kind", kind);
    e.kind = evader::parse_kind(kind);
    s.get("wall_gain", e.wall_gain);
    s.get("pursuer_gain", e.pursuer_gain);
    s.get("falloff", e.falloff);
    s.get("min_speed_fraction", e.min_speed_fraction);
    s.get("heading_gain", e.heading_gain);
    s.get("min_margin", e.min_margin);
    s.finish();
  }
  {
    Section s(j, "policy");
    auto& p = c.policy;
    std::string variant = policy::variant_name(p.variant);
    s.get("variant", variant);
    p.variant = policy::parse_variant(variant);
    s.get("d_model", p.ssm.d_model);
    s.get("expand", p.ssm.expand);
    s.get("ssm_heads", p.ssm.n_heads);
    s.get("d_state", p.ssm.d_state);
    s.get("conv_width", p.ssm.conv_width);
    s.get("dt_init", p.ssm.dt_init);
    s.get("scan_chunk", p.ssm.scan_chunk);
    s.get("norm_eps", p.ssm.norm_eps);
    s.get("history_length", p.history_length);
    s.get("attention_heads", p.attention_heads);
    s.get("action_scale", p.action_scale);
    s.get("sigma_floor", p.sigma_floor);
    s.get("mlp_hidden", p.mlp_hidden);
    s.get("head_init", p.head_init);
    s.finish();
  }
  {
    Section s(j, "train");
    auto& t = c.train;
    s.get("group_size", t.group_size);
    s.get("episodes", t.episodes);
    s.get("update_iters", t.update_iters);
    s.get("clip_eps", t.clip_eps);
    s.get("tau", t.tau);
    s.get("lr", t.lr);
    s.get("clip_norm", t.clip_norm);
    s.get("noise_start", t.noise_start);
    s.get("noise_end", t.noise_end);
    s.get("seed", t.seed);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("periodic_eval_trials", t.periodic_eval_trials);
    s.finish();
  }
  {
    Section s(j, "eval");
    s.get("trials", c.eval.trials);
    s.get("seed", c.eval.seed);
    s.finish();
  }
  {
    Section s(j, "study");
    s.get("episodes", c.study.episodes);
    s.get("seeds", c.study.seeds);
    s.get("eval_trials", c.study.eval_trials);
    s.get("pursuer_counts", c.study.pursuer_counts);
    s.finish();
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

trainer::TrainSetup RunConfig::setup() const { return {env, evader, policy, train}; }

}  // namespace pursuit::harness
