#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pkfr/cli/commands.hpp"

namespace {

using namespace pkfr;
using namespace pkfr::cli;

struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> model;
  bool no_supervised_loss = false;
  bool no_depth_query = false;
  bool no_future_prediction = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "key=value config file");
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
    app->add_option("--model", model, "parkourformer | mlp | moe4 | vanilla_transformer");
    app->add_flag("--no-supervised-loss", no_supervised_loss, "drop the prediction loss");
    app->add_flag("--no-depth-query", no_depth_query, "replace depth-conditioned queries with learned ones");
    app->add_flag("--no-future-prediction", no_future_prediction, "remove the forecast head");
    app->add_option("--seed", seed, "training seed (overrides PKFR_SEED)");
    app->add_option("--iters", iters, "training iterations");
    app->add_option("--out", out, "output directory");
  }

  /// Precedence: defaults < config file < PKFR_SEED < --set < dedicated flags.
  RunConfig build() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    apply_seed_env(c);
    for (const auto& s : sets) apply_override(c, s);
    if (model) set_config_value(c, "model.kind", *model);
    if (no_supervised_loss) c.train.no_supervised_loss = true;
    if (no_depth_query) c.train.policy.no_depth_query = true;
    if (no_future_prediction) c.train.policy.no_future_prediction = true;
    if (seed) c.train.seed = *seed;
    if (iters) c.train.iterations = *iters;
    if (out) c.out_dir = *out;
    checked(c);
    return c;
  }

  /// Invalid settings surface as config errors before any work starts.
  static void checked(const RunConfig& c) {
    try {
      c.validate();
    } catch (const ContractError& e) {
      throw ConfigError(0, "", e.what());
    }
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Terrain-aware locomotion policy training and evaluation"};
  app.require_subcommand(0, 1);

  std::vector<std::string> export_flag;
  app.add_option("--export-terrain", export_flag, "<family> <difficulty> <seed> <path>")->expected(4);

  RunOptions train_opts;
  auto* train = app.add_subcommand("train", "train a policy");
  train_opts.attach(train);

  std::string eval_ckpt;
  std::optional<std::size_t> eval_episodes;
  std::optional<std::string> eval_families;
  std::optional<double> eval_difficulty;
  std::optional<std::uint64_t> eval_seed;
  std::optional<std::string> eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the terrain families");
  eval->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--episodes", eval_episodes, "episodes per family");
  eval->add_option("--families", eval_families, "comma-separated family names");
  eval->add_option("--difficulty", eval_difficulty, "terrain difficulty in [0, 1]");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--out", eval_out, "output directory");

  RunOptions ablate_opts;
  bool also_baselines = false;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation matrix");
  ablate_opts.attach(ablate);
  ablate->add_flag("--also-baselines", also_baselines, "add the MLP, MoE and vanilla transformer rows");

  std::string t_family, t_path;
  double t_difficulty = 0.0;
  std::uint64_t t_seed = 0;
  auto* terrain = app.add_subcommand("export-terrain", "write a terrain profile as text");
  terrain->add_option("family", t_family)->required();
  terrain->add_option("difficulty", t_difficulty)->required();
  terrain->add_option("seed", t_seed)->required();
  terrain->add_option("path", t_path)->required();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint contents");
  inspect->add_option("checkpoint", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (!export_flag.empty()) {
    const auto& v = export_flag;
    double d = 0.0;
    std::uint64_t s = 0;
    try {
      d = std::stod(v[1]);
      s = std::stoull(v[2]);
    } catch (const std::exception&) {
      throw ConfigError(0, "", "--export-terrain expects <family> <difficulty> <seed> <path>");
    }
    return cmd_export_terrain(v[0], d, s, v[3]);
  }
  if (*train) {
    const auto cfg = train_opts.build();
    return run_training(cfg, std::cout).exit;
  }
  if (*eval) {
    EvalOverrides o;
    o.episodes = eval_episodes;
    o.difficulty = eval_difficulty;
    o.seed = eval_seed;
    o.out_dir = eval_out;
    if (eval_episodes && *eval_episodes == 0) throw ConfigError(0, "eval.episodes", "must be positive");
    if (eval_families) {
      RunConfig probe;
      set_config_value(probe, "eval.families", *eval_families);
      o.families = probe.eval_families;
    }
    if (eval_difficulty && !(*eval_difficulty >= 0.0 && *eval_difficulty <= 1.0))
      throw ConfigError(0, "eval.difficulty", "must lie in [0, 1]");
    return cmd_eval(eval_ckpt, o, std::cout);
  }
  if (*ablate) {
    const auto cfg = ablate_opts.build();
    return cmd_ablate(cfg, also_baselines, std::cout);
  }
  if (*terrain) return cmd_export_terrain(t_family, t_difficulty, t_seed, t_path);
  if (*inspect) return cmd_inspect_checkpoint(inspect_path, std::cout);
  std::cout << app.help();
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionMismatch& e) {
    std::cerr << "dimension mismatch: " << e.what() << '\n';
    return kExitDimension;
  } catch (const NumericError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
