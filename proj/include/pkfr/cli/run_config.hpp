#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pkfr/train/trainer.hpp"

namespace pkfr::cli {

/// Malformed config text or an invalid value. line is 0 for command-line overrides.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, std::string key, const std::string& what)
      : std::runtime_error((line ? "line " + std::to_string(line) + ": " : std::string()) +
                           (key.empty() ? std::string() : "key '" + key + "': ") + what),
        line_(line),
        key_(std::move(key)) {}

  std::size_t line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

struct RunConfig {
  train::TrainConfig train;
  std::string out_dir = "run";
  int log_interval = 1;
  int checkpoint_interval = 50;
  int iteration = 0;  // iterations already trained; restored from checkpoints

  std::size_t eval_episodes = 10;
  double eval_difficulty = 0.5;
  std::uint64_t eval_seed = 0;
  std::vector<env::TerrainFamily> eval_families{env::kAllFamilies.begin(), env::kAllFamilies.end()};

  void validate() const {
    train.validate();
    if (log_interval <= 0) throw ContractError("run.log_interval must be positive");
    if (checkpoint_interval < 0) throw ContractError("run.checkpoint_interval must be non-negative");
    if (eval_episodes == 0) throw ContractError("eval.episodes must be positive");
    if (!(eval_difficulty >= 0.0 && eval_difficulty <= 1.0)) throw ContractError("eval.difficulty must lie in [0, 1]");
    if (eval_families.empty()) throw ContractError("eval.families must name at least one family");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class N>
N parse_number(const std::string& v) {
  N out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw std::invalid_argument("'" + v + "' is not a valid number");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("'" + v + "' is not a boolean (true/false)");
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

/// One documented config key with its reader and writer.
struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  using detail::parse_bool;
  using detail::parse_number;
  using train::format_number;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto real = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const RunConfig& c) { return format_number(member(c)); },
                   [member](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(v); }});
    };
    auto count = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const RunConfig& c) { return std::to_string(member(c)); },
                   [member](RunConfig& c, const std::string& v) {
                     using N = std::remove_reference_t<decltype(member(c))>;
                     member(c) = parse_number<N>(v);
                   }});
    };
    auto flag = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const RunConfig& c) { return member(c) ? "true" : "false"; },
                   [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); }});
    };
    auto sizes = [&f](std::string key, auto member) {
      f.push_back({std::move(key), [member](const RunConfig& c) { return detail::join_sizes(member(c)); },
                   [member](RunConfig& c, const std::string& v) {
                     std::vector<std::size_t> out;
                     for (const auto& item : detail::split_list(v)) out.push_back(parse_number<std::size_t>(item));
                     if (out.empty()) throw std::invalid_argument("expected a comma-separated list of sizes");
                     member(c) = out;
                   }});
    };

    f.push_back({"model.kind", [](const RunConfig& c) { return std::string(policy::model_name(c.train.policy.kind)); },
                 [](RunConfig& c, const std::string& v) {
                   const auto k = policy::parse_model(v);
                   if (!k) throw std::invalid_argument("unknown model '" + v + "' (parkourformer, mlp, moe4, vanilla_transformer)");
                   c.train.policy.kind = *k;
                 }});
    count("model.width", [](auto& c) -> auto& { return c.train.policy.width; });
    count("model.heads", [](auto& c) -> auto& { return c.train.policy.heads; });
    count("model.layers", [](auto& c) -> auto& { return c.train.policy.layers; });
    count("model.context_dim", [](auto& c) -> auto& { return c.train.policy.context_dim; });
    count("model.ffn_hidden", [](auto& c) -> auto& { return c.train.policy.ffn_hidden; });
    count("model.depth_hidden", [](auto& c) -> auto& { return c.train.policy.depth_hidden; });
    sizes("model.critic_hidden", [](auto& c) -> auto& { return c.train.policy.critic_hidden; });
    count("model.baseline_hidden", [](auto& c) -> auto& { return c.train.policy.baseline_hidden; });
    count("model.expert_hidden", [](auto& c) -> auto& { return c.train.policy.expert_hidden; });
    real("model.ln_eps", [](auto& c) -> auto& { return c.train.policy.ln_eps; });
    real("model.init_log_std", [](auto& c) -> auto& { return c.train.policy.init_log_std; });
    flag("model.conventional_residual", [](auto& c) -> auto& { return c.train.policy.conventional_residual; });
    flag("model.detach_future", [](auto& c) -> auto& { return c.train.policy.detach_future; });
    flag("model.critic_sees_scan", [](auto& c) -> auto& { return c.train.policy.critic_sees_scan; });

    flag("ablation.no_supervised_loss", [](auto& c) -> auto& { return c.train.no_supervised_loss; });
    flag("ablation.no_depth_query", [](auto& c) -> auto& { return c.train.policy.no_depth_query; });
    flag("ablation.no_future_prediction", [](auto& c) -> auto& { return c.train.policy.no_future_prediction; });

    sizes("disc.hidden", [](auto& c) -> auto& { return c.train.disc.hidden; });
    real("disc.w_gp", [](auto& c) -> auto& { return c.train.disc.w_gp; });
    count("disc.ensemble", [](auto& c) -> auto& { return c.train.disc.ensemble; });
    flag("disc.detach_prediction", [](auto& c) -> auto& { return c.train.disc.detach_prediction; });
    real("disc.lr", [](auto& c) -> auto& { return c.train.disc_lr; });

    real("train.c1", [](auto& c) -> auto& { return c.train.weights.c1; });
    real("train.c2", [](auto& c) -> auto& { return c.train.weights.c2; });
    real("train.c3", [](auto& c) -> auto& { return c.train.weights.c3; });
    real("train.c4", [](auto& c) -> auto& { return c.train.weights.c4; });
    real("train.clip", [](auto& c) -> auto& { return c.train.weights.clip; });
    real("train.gamma", [](auto& c) -> auto& { return c.train.weights.gamma; });
    real("train.lambda", [](auto& c) -> auto& { return c.train.weights.lambda; });
    real("train.beta", [](auto& c) -> auto& { return c.train.weights.beta; });
    real("train.lr", [](auto& c) -> auto& { return c.train.weights.lr; });
    count("train.epochs", [](auto& c) -> auto& { return c.train.weights.epochs; });
    count("train.minibatch", [](auto& c) -> auto& { return c.train.weights.minibatch; });
    real("train.max_grad_norm", [](auto& c) -> auto& { return c.train.max_grad_norm; });
    count("train.envs", [](auto& c) -> auto& { return c.train.envs; });
    count("train.steps", [](auto& c) -> auto& { return c.train.steps; });
    count("train.iterations", [](auto& c) -> auto& { return c.train.iterations; });
    count("train.seed", [](auto& c) -> auto& { return c.train.seed; });
    f.push_back({"train.family", [](const RunConfig& c) { return std::string(env::family_name(c.train.family)); },
                 [](RunConfig& c, const std::string& v) {
                   const auto fam = env::parse_family(v);
                   if (!fam) throw std::invalid_argument("unknown terrain family '" + v + "'");
                   c.train.family = *fam;
                 }});
    real("train.difficulty", [](auto& c) -> auto& { return c.train.difficulty; });

    real("env.command_min", [](auto& c) -> auto& { return c.train.env.command_min; });
    real("env.command_max", [](auto& c) -> auto& { return c.train.env.command_max; });
    real("env.start_x", [](auto& c) -> auto& { return c.train.env.start_x; });
    real("env.reset_perturbation", [](auto& c) -> auto& { return c.train.env.reset_perturbation; });
    real("env.fall_height", [](auto& c) -> auto& { return c.train.env.fall_height; });
    real("env.fall_pitch", [](auto& c) -> auto& { return c.train.env.fall_pitch; });
    count("env.episode_cap", [](auto& c) -> auto& { return c.train.env.episode_cap; });
    count("env.depth.rays", [](auto& c) -> auto& { return c.train.env.depth.rays; });
    real("env.depth.d_max", [](auto& c) -> auto& { return c.train.env.depth.d_max; });
    real("env.depth.angle_min_deg", [](auto& c) -> auto& { return c.train.env.depth.angle_min_deg; });
    real("env.depth.angle_max_deg", [](auto& c) -> auto& { return c.train.env.depth.angle_max_deg; });
    real("env.reward.velocity", [](auto& c) -> auto& { return c.train.env.reward.velocity; });
    real("env.reward.alive", [](auto& c) -> auto& { return c.train.env.reward.alive; });
    real("env.reward.termination", [](auto& c) -> auto& { return c.train.env.reward.termination; });
    real("env.robot.kp", [](auto& c) -> auto& { return c.train.env.robot.kp; });
    real("env.robot.kd", [](auto& c) -> auto& { return c.train.env.robot.kd; });
    real("env.robot.action_scale", [](auto& c) -> auto& { return c.train.env.robot.action_scale; });

    f.push_back({"eval.families",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.eval_families.size(); ++i)
                     s += (i ? "," : "") + std::string(env::family_name(c.eval_families[i]));
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<env::TerrainFamily> out;
                   for (const auto& name : detail::split_list(v)) {
                     const auto fam = env::parse_family(name);
                     if (!fam) throw std::invalid_argument("unknown terrain family '" + name + "'");
                     out.push_back(*fam);
                   }
                   c.eval_families = out;
                 }});
    count("eval.episodes", [](auto& c) -> auto& { return c.eval_episodes; });
    real("eval.difficulty", [](auto& c) -> auto& { return c.eval_difficulty; });
    count("eval.seed", [](auto& c) -> auto& { return c.eval_seed; });

    f.push_back({"run.out_dir", [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) { c.out_dir = v; }});
    count("run.log_interval", [](auto& c) -> auto& { return c.log_interval; });
    count("run.checkpoint_interval", [](auto& c) -> auto& { return c.checkpoint_interval; });
    count("run.iteration", [](auto& c) -> auto& { return c.iteration; });
    return f;
  }();
  return fields;
}

/// Sets one key; line is used for diagnostics only.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value, std::size_t line = 0) {
  for (const auto& f : config_fields()) {
    if (f.key != key) continue;
    try {
      f.set(c, value);
    } catch (const std::exception& e) {
      throw ConfigError(line, key, e.what());
    }
    return;
  }
  throw ConfigError(line, key, "unknown key");
}

/// Applies "key=value" lines on top of c. Blank lines and '#' comments are skipped.
/// Applies one command-line "key=value" override.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(0, assignment, "expected key=value");
  set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void apply_config_text(RunConfig& c, std::istream& in) {
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const auto text = detail::trim(std::string_view(raw).substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "", "expected key=value, got '" + text + "'");
    const auto key = detail::trim(std::string_view(text).substr(0, eq));
    const auto value = detail::trim(std::string_view(text).substr(eq + 1));
    if (key.empty()) throw ConfigError(line, "", "missing key before '='");
    set_config_value(c, key, value, line);
  }
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  apply_config_text(c, in);
  return c;
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "", "cannot open config file '" + path + "'");
  RunConfig c;
  apply_config_text(c, in);
  return c;
}

/// Every key with its current value, in the order of config_fields().
/// Parsing the result reproduces c exactly.
inline std::string config_snapshot(const RunConfig& c) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + "=" + f.get(c) + "\n";
  return out;
}

}  // namespace pkfr::cli
