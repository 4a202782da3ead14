#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "pkfr/cli/checkpoint.hpp"
#include "pkfr/cli/run_config.hpp"
#include "pkfr/train/evaluate.hpp"

namespace pkfr::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitDiverged = 3,
  kExitDimension = 4,
};

/// Training and evaluation run in 32-bit precision.
using Real = float;

inline constexpr const char* kConfigSnapshotName = "config.cfg";
inline constexpr const char* kMetricsName = "metrics.csv";
inline constexpr const char* kCheckpointName = "checkpoint.pkfr";

/// Applies PKFR_SEED, when set, as the training seed.
inline void apply_seed_env(RunConfig& c) {
  if (const char* s = std::getenv("PKFR_SEED")) set_config_value(c, "train.seed", s);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline Checkpoint make_checkpoint(const train::Trainer<Real>& tr, RunConfig cfg) {
  cfg.iteration = tr.iteration();
  Checkpoint c;
  c.entries = capture_parameters(tr.all_parameters());
  c.config = config_snapshot(cfg);
  return c;
}

/// Rebuilds the trainer a checkpoint was written from and loads its weights.
inline std::unique_ptr<train::Trainer<Real>> trainer_from_checkpoint(const Checkpoint& ck, RunConfig& cfg) {
  cfg = parse_config_text(ck.config);
  auto tr = std::make_unique<train::Trainer<Real>>(cfg.train);
  restore_parameters(tr->all_parameters(), ck.entries);
  tr->reset_optimizers();
  tr->set_iteration(cfg.iteration);
  return tr;
}

struct TrainResult {
  int exit = kExitOk;
  std::vector<train::IterationReport> reports;
  std::unique_ptr<train::Trainer<Real>> trainer;
};

/// Trains cfg.train.iterations iterations into cfg.out_dir: config snapshot,
/// metrics CSV and checkpoint (every checkpoint_interval iterations and at the end).
inline TrainResult run_training(const RunConfig& cfg, std::ostream& log) {
  TrainResult res;
  cfg.validate();
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / kConfigSnapshotName, config_snapshot(cfg));
  res.trainer = std::make_unique<train::Trainer<Real>>(cfg.train);
  auto& tr = *res.trainer;
  tr.set_iteration(cfg.iteration);
  std::ofstream metrics(dir / kMetricsName, std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write '" + (dir / kMetricsName).string() + "'");
  metrics << train::kMetricsHeader << '\n';
  for (int i = 0; i < cfg.train.iterations; ++i) {
    const auto rep = tr.iterate();
    if (rep.diverged) {
      metrics.flush();
      log << "diverged at iteration " << rep.iteration << ": " << rep.divergence << '\n';
      res.exit = kExitDiverged;
      return res;
    }
    res.reports.push_back(rep);
    if ((i + 1) % cfg.log_interval == 0 || i + 1 == cfg.train.iterations) {
      train::write_metrics_row(metrics, rep);
      metrics.flush();
      log << "iter " << rep.iteration << " task " << train::format_number(rep.mean_task_reward) << " amp "
          << train::format_number(rep.mean_amp_reward) << " success " << train::format_number(rep.success_rate)
          << '\n';
    }
    if (cfg.checkpoint_interval > 0 && (i + 1) % cfg.checkpoint_interval == 0)
      save_checkpoint(make_checkpoint(tr, cfg), (dir / kCheckpointName).string());
  }
  save_checkpoint(make_checkpoint(tr, cfg), (dir / kCheckpointName).string());
  return res;
}

inline const std::array<train::Metric, 3> kEvalMetrics = {train::Metric::kSuccess, train::Metric::kTargetNear,
                                                          train::Metric::kTracking};

inline std::string metric_file(train::Metric m, const std::string& prefix) {
  switch (m) {
    case train::Metric::kSuccess: return prefix + "_success.csv";
    case train::Metric::kTargetNear: return prefix + "_target_near.csv";
    case train::Metric::kTracking: return prefix + "_tracking.csv";
  }
  return prefix + ".csv";
}

struct NamedTable {
  std::string name;
  train::MetricsTable table;
};

/// One CSV per metric in the nine-family layout.
inline void write_eval_tables(const std::filesystem::path& dir, const std::string& prefix,
                              const std::vector<NamedTable>& rows) {
  for (auto m : kEvalMetrics) {
    std::ofstream out(dir / metric_file(m, prefix), std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + (dir / metric_file(m, prefix)).string() + "'");
    train::write_eval_header(out);
    for (const auto& r : rows) train::write_eval_row(out, r.name, r.table, m);
  }
}

inline train::MetricsTable evaluate_trainer(const train::Trainer<Real>& tr, const RunConfig& cfg) {
  return train::evaluate_metrics(tr.model(), tr.config().env, cfg.eval_families, cfg.eval_difficulty, cfg.eval_episodes,
                                 cfg.eval_seed);
}

/// Row label used in evaluation tables.
inline std::string model_label(const RunConfig& c) {
  const auto& p = c.train.policy;
  switch (p.kind) {
    case policy::ModelKind::kMlp: return "1-MLP(w/o MoE)";
    case policy::ModelKind::kMoe4: return "4-MLP(MoE)";
    case policy::ModelKind::kVanillaTransformer: return "Vanilla Transformer";
    case policy::ModelKind::kParkourFormer: break;
  }
  if (c.train.no_supervised_loss) return "w/o supervise signal(MSE)";
  if (p.no_depth_query) return "w/o RGB-D Query";
  if (p.no_future_prediction) return "w/o future prediction";
  return "ParkourFormer";
}

struct EvalOverrides {
  std::optional<std::size_t> episodes;
  std::optional<std::vector<env::TerrainFamily>> families;
  std::optional<double> difficulty;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

inline int cmd_eval(const std::string& checkpoint_path, const EvalOverrides& o, std::ostream& log) {
  const auto ck = load_checkpoint(checkpoint_path);
  RunConfig cfg;
  auto tr = trainer_from_checkpoint(ck, cfg);
  if (o.episodes) cfg.eval_episodes = *o.episodes;
  if (o.families) cfg.eval_families = *o.families;
  if (o.difficulty) cfg.eval_difficulty = *o.difficulty;
  if (o.seed) cfg.eval_seed = *o.seed;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  cfg.validate();
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "eval_config.cfg", config_snapshot(cfg));
  const auto table = evaluate_trainer(*tr, cfg);
  write_eval_tables(dir, "eval", {{model_label(cfg), table}});
  for (const auto& r : table.rows) {
    log << env::family_name(r.family) << " success " << train::format_number(r.success) << " target_near "
        << train::format_number(r.target_near) << " tracking " << train::format_number(r.tracking) << '\n';
  }
  return kExitOk;
}

/// The full model and its three ablations, optionally followed by
/// the three baselines. Every variant shares one config and seed.
inline std::vector<RunConfig> ablation_variants(const RunConfig& base, bool also_baselines) {
  RunConfig full = base;
  full.train.policy.kind = policy::ModelKind::kParkourFormer;
  full.train.no_supervised_loss = full.train.policy.no_depth_query = full.train.policy.no_future_prediction = false;
  std::vector<RunConfig> out(4, full);
  out[1].train.no_supervised_loss = true;
  out[2].train.policy.no_depth_query = true;
  out[3].train.policy.no_future_prediction = true;
  if (also_baselines) {
    for (auto k : {policy::ModelKind::kMlp, policy::ModelKind::kMoe4, policy::ModelKind::kVanillaTransformer}) {
      out.push_back(full);
      out.back().train.policy.kind = k;
    }
  }
  return out;
}

inline std::string slug(const RunConfig& c) {
  const auto& p = c.train.policy;
  if (p.kind != policy::ModelKind::kParkourFormer) return std::string(policy::model_name(p.kind));
  if (c.train.no_supervised_loss) return "no_supervised_loss";
  if (p.no_depth_query) return "no_depth_query";
  if (p.no_future_prediction) return "no_future_prediction";
  return "parkourformer";
}

/// Trains and evaluates every variant in turn, writing ablation_*.csv. A
/// failing sub-run stops the matrix; the rows finished so far are kept.
inline int cmd_ablate(const RunConfig& base, bool also_baselines, std::ostream& log) {
  base.validate();
  const std::filesystem::path dir(base.out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / kConfigSnapshotName, config_snapshot(base));
  std::vector<NamedTable> rows;
  int exit = kExitOk;
  for (auto v : ablation_variants(base, also_baselines)) {
    v.out_dir = (dir / slug(v)).string();
    log << "== " << model_label(v) << '\n';
    auto res = run_training(v, log);
    if (res.exit != kExitOk) {
      exit = res.exit;
      break;
    }
    rows.push_back({model_label(v), evaluate_trainer(*res.trainer, v)});
  }
  std::ofstream seeds(dir / "env_seeds.txt", std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    seeds << rows[i].name;
    for (auto s : rows[i].table.env_seeds) seeds << ' ' << s;
    seeds << '\n';
    if (rows[i].table.env_seeds != rows.front().table.env_seeds) {
      log << "env seeds differ between '" << rows.front().name << "' and '" << rows[i].name << "'\n";
      exit = kExitFailure;
    }
  }
  write_eval_tables(dir, "ablation", rows);
  return exit;
}

inline int cmd_export_terrain(const std::string& family, double difficulty, std::uint64_t seed, const std::string& path) {
  const auto fam = env::parse_family(family);
  if (!fam) throw ConfigError(0, "", "unknown terrain family '" + family + "'");
  if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw ConfigError(0, "", "difficulty must lie in [0, 1]");
  const auto t = env::generate_terrain(*fam, difficulty, seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  env::export_terrain(t, out);
  return kExitOk;
}

inline int cmd_inspect_checkpoint(const std::string& path, std::ostream& os) {
  const auto ck = load_checkpoint(path);
  std::size_t scalars = 0;
  os << "version " << ck.version << '\n' << "entries " << ck.entries.size() << '\n';
  for (const auto& e : ck.entries) {
    os << e.name << " [";
    for (std::size_t i = 0; i < e.dims.size(); ++i) os << (i ? "x" : "") << e.dims[i];
    os << "] " << e.values.size() << '\n';
    scalars += e.values.size();
  }
  os << "scalars " << scalars << '\n' << "config\n" << ck.config;
  return kExitOk;
}

}  // namespace pkfr::cli
