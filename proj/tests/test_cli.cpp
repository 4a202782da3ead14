#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pkfr/cli/commands.hpp"
#include "train_fixtures.hpp"

using namespace pkfr;
using namespace pkfr::cli;

namespace {

namespace fs = std::filesystem;

RunConfig desk_run(const fs::path& out) {
  RunConfig c;
  c.train = pkfr::testing::desk_config();
  c.train.iterations = 2;
  c.eval_episodes = 1;
  c.out_dir = out.string();
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pkfr_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

template <class U>
void put(std::string& s, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  s.append(b, sizeof(U));
}

/// Two entries written byte by byte from the documented layout.
std::string hand_assembled() {
  std::string s = "PKFR";
  put<std::uint32_t>(s, 1);
  put<std::uint32_t>(s, 2);
  put<std::uint16_t>(s, 1);
  s += "a";
  put<std::uint8_t>(s, 2);
  put<std::uint32_t>(s, 2);
  put<std::uint32_t>(s, 3);
  for (float v : {1.0f, -2.0f, 0.5f, 0.0f, 3.25f, -0.125f}) put<float>(s, v);
  put<std::uint16_t>(s, 2);
  s += "bb";
  put<std::uint8_t>(s, 0);
  put<float>(s, 7.0f);
  put<std::uint32_t>(s, 9);
  s += "x.y = 1\n";
  s += "z";
  return s;
}

}  // namespace

TEST(Config, ParsesCommentsBlanksAndWhitespace) {
  const auto c = parse_config_text("# header\n\n  model.width = 24 \ntrain.gamma=0.9\n  # trailing\n");
  EXPECT_EQ(c.train.policy.width, 24u);
  EXPECT_DOUBLE_EQ(c.train.weights.gamma, 0.9);
}

TEST(Config, UnknownKeyReportsLineAndKey) {
  try {
    parse_config_text("model.width = 8\n\nmodel.widht = 9\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.key(), "model.widht");
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Config, BadValueReportsLineAndKey) {
  try {
    parse_config_text("train.epochs = four\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_EQ(e.key(), "train.epochs");
  }
  EXPECT_THROW(parse_config_text("model.kind = resnet\n"), ConfigError);
  EXPECT_THROW(parse_config_text("eval.families = Boxes,Lava\n"), ConfigError);
  EXPECT_THROW(parse_config_text("model.conventional_residual = maybe\n"), ConfigError);
}

TEST(Config, MissingEqualsIsAnError) {
  try {
    parse_config_text("model.width = 8\nmodel.width 8\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Config, SnapshotRoundTripsEveryKey) {
  RunConfig c = desk_run("somewhere");
  c.train.weights.gamma = 0.987654321012345;
  c.train.policy.kind = policy::ModelKind::kMoe4;
  c.train.family = env::TerrainFamily::kGapsCrossing;
  c.eval_families = {env::TerrainFamily::kBoxes, env::TerrainFamily::kClimbUp};
  c.train.env.robot.kp = 1.0 / 3.0;
  c.iteration = 17;
  const auto text = config_snapshot(c);
  const auto back = parse_config_text(text);
  EXPECT_EQ(config_snapshot(back), text);
  EXPECT_EQ(back.train.weights.gamma, c.train.weights.gamma);
  EXPECT_EQ(back.train.env.robot.kp, c.train.env.robot.kp);
  EXPECT_EQ(back.iteration, 17);
  EXPECT_EQ(back.eval_families, c.eval_families);
  for (const auto& f : config_fields()) EXPECT_NE(("\n" + text).find("\n" + f.key + "="), std::string::npos) << f.key;
}

TEST(Config, OverrideAndSeedEnvironment) {
  RunConfig c;
  apply_override(c, " train.iterations = 12 ");
  EXPECT_EQ(c.train.iterations, 12);
  EXPECT_THROW(apply_override(c, "train.iterations"), ConfigError);
  ::setenv("PKFR_SEED", "4242", 1);
  apply_seed_env(c);
  ::unsetenv("PKFR_SEED");
  EXPECT_EQ(c.train.seed, 4242u);
  ::setenv("PKFR_SEED", "nope", 1);
  EXPECT_THROW(apply_seed_env(c), ConfigError);
  ::unsetenv("PKFR_SEED");
}

TEST(Checkpoint, EncodeDecodeIsBitExact) {
  Checkpoint c;
  c.entries.push_back({"w", {2, 2}, {1.0f, -0.0f, std::numeric_limits<float>::denorm_min(), 3.0e38f}});
  c.entries.push_back({"s", {}, {0.1f}});
  c.entries.push_back({"e", {0}, {}});
  c.config = "a = 1\n";
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.entries.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.entries[i].name, c.entries[i].name);
    EXPECT_EQ(back.entries[i].dims, c.entries[i].dims);
    ASSERT_EQ(back.entries[i].values.size(), c.entries[i].values.size());
    if (!c.entries[i].values.empty())
      EXPECT_EQ(std::memcmp(back.entries[i].values.data(), c.entries[i].values.data(),
                            c.entries[i].values.size() * sizeof(float)),
                0);
  }
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, HandAssembledFileLoads) {
  const auto c = decode_checkpoint(hand_assembled());
  ASSERT_EQ(c.entries.size(), 2u);
  EXPECT_EQ(c.entries[0].name, "a");
  EXPECT_EQ(c.entries[0].dims, (std::vector<std::uint32_t>{2, 3}));
  EXPECT_EQ(c.entries[0].values, (std::vector<float>{1.0f, -2.0f, 0.5f, 0.0f, 3.25f, -0.125f}));
  EXPECT_EQ(c.entries[1].name, "bb");
  EXPECT_TRUE(c.entries[1].dims.empty());
  EXPECT_EQ(c.entries[1].values, std::vector<float>{7.0f});
  EXPECT_EQ(c.config, "x.y = 1\nz");
  EXPECT_EQ(encode_checkpoint(c), hand_assembled());
}

TEST(Checkpoint, RejectsForeignMagic) {
  auto s = hand_assembled();
  s.replace(0, 4, "XXXX");
  try {
    decode_checkpoint(s);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_STREQ(e.what(), "not a checkpoint");
  }
  EXPECT_THROW(decode_checkpoint("PK"), CheckpointError);
}

TEST(Checkpoint, TruncationReportsTheOffset) {
  const auto full = hand_assembled();
  for (std::size_t n = 4; n < full.size(); ++n) {
    try {
      decode_checkpoint(full.substr(0, n));
      FAIL() << "length " << n << " decoded";
    } catch (const CheckpointError& e) {
      EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
    }
  }
  try {
    decode_checkpoint(full.substr(0, 20));
    FAIL();
  } catch (const CheckpointError& e) {
    // 4 magic + 4 version + 4 count + 2 name length + 1 name + 1 rank = 16; first dim spans 16..20,
    // second dim starts at 20 with nothing left.
    EXPECT_NE(std::string(e.what()).find("offset 20"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, VersionMismatchAndTrailingBytes) {
  auto s = hand_assembled();
  s[4] = 2;
  try {
    decode_checkpoint(s);
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("version 2"), std::string::npos) << m;
    EXPECT_NE(m.find("version 1"), std::string::npos) << m;
  }
  EXPECT_THROW(decode_checkpoint(hand_assembled() + "!"), CheckpointError);
}

TEST(Checkpoint, TrainerParametersRoundTripBitExact) {
  train::Trainer<float> a(pkfr::testing::desk_config());
  a.iterate();
  const auto entries = capture_parameters(a.all_parameters());
  Checkpoint c;
  c.entries = entries;
  auto cfg = pkfr::testing::desk_config();
  cfg.seed = 999;  // different initial weights
  train::Trainer<float> b(cfg);
  restore_parameters(b.all_parameters(), decode_checkpoint(encode_checkpoint(c)).entries);
  const auto pa = a.all_parameters();
  const auto pb = b.all_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa.items()[i].var.value().storage();
    const auto& y = pb.items()[i].var.value().storage();
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)), 0) << pa.items()[i].name;
  }
}

TEST(Checkpoint, DimensionMismatchNamesTheParameter) {
  train::Trainer<float> a(pkfr::testing::desk_config());
  auto entries = capture_parameters(a.all_parameters());
  auto wider = pkfr::testing::desk_config();
  wider.policy.width = 12;
  wider.policy.context_dim = 12;
  train::Trainer<float> b(wider);
  try {
    restore_parameters(b.all_parameters(), entries);
    FAIL() << "expected DimensionMismatch";
  } catch (const DimensionMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("parameter '"), std::string::npos) << e.what();
  }
  entries.pop_back();
  EXPECT_THROW(restore_parameters(a.all_parameters(), entries), DimensionMismatch);
}

TEST(Commands, TrainWritesSnapshotMetricsAndCheckpoint) {
  const auto dir = scratch("train");
  auto cfg = desk_run(dir / "run");
  cfg.checkpoint_interval = 1;
  std::ostringstream log;
  const auto res = run_training(cfg, log);
  ASSERT_EQ(res.exit, kExitOk);
  EXPECT_EQ(res.reports.size(), 2u);
  const auto snap = parse_config_text(slurp(dir / "run" / kConfigSnapshotName));
  EXPECT_EQ(config_snapshot(snap), config_snapshot(cfg));
  std::istringstream metrics(slurp(dir / "run" / kMetricsName));
  std::string line;
  std::getline(metrics, line);
  EXPECT_EQ(line, train::kMetricsHeader);
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  EXPECT_EQ(rows, 2);
  const auto ck = load_checkpoint((dir / "run" / kCheckpointName).string());
  EXPECT_EQ(parse_config_text(ck.config).iteration, 2);
}

TEST(Commands, MetricsAreDeterministic) {
  const auto dir = scratch("determinism");
  std::ostringstream log;
  ASSERT_EQ(run_training(desk_run(dir / "a"), log).exit, kExitOk);
  ASSERT_EQ(run_training(desk_run(dir / "b"), log).exit, kExitOk);
  EXPECT_EQ(slurp(dir / "a" / kMetricsName), slurp(dir / "b" / kMetricsName));
  // The embedded configs differ in run.out_dir only.
  auto ca = load_checkpoint((dir / "a" / kCheckpointName).string());
  auto cb = load_checkpoint((dir / "b" / kCheckpointName).string());
  ca.config = cb.config = "";
  EXPECT_TRUE(encode_checkpoint(ca) == encode_checkpoint(cb));
}

TEST(Commands, EvalLeavesItsInputUntouched) {
  const auto dir = scratch("eval");
  std::ostringstream log;
  ASSERT_EQ(run_training(desk_run(dir / "run"), log).exit, kExitOk);
  const auto ck_path = dir / "run" / kCheckpointName;
  const auto before = slurp(ck_path);
  EvalOverrides o;
  o.out_dir = (dir / "eval").string();
  o.families = std::vector<env::TerrainFamily>{env::TerrainFamily::kBoxes, env::TerrainFamily::kUpStairs};
  ASSERT_EQ(cmd_eval(ck_path.string(), o, log), kExitOk);
  EXPECT_EQ(slurp(ck_path), before);
  for (auto name : {"eval_success.csv", "eval_target_near.csv", "eval_tracking.csv"}) {
    std::istringstream csv(slurp(dir / "eval" / name));
    std::string header, row, extra;
    std::getline(csv, header);
    std::getline(csv, row);
    EXPECT_EQ(header, "model,Boxes,WalkOverObstacles,ClimbSlope,RoughGround,UpStairs,ClimbDown,DownStairs,ClimbUp,"
                      "GapsCrossing,Mean");
    EXPECT_EQ(row.rfind("ParkourFormer,", 0), 0u) << row;
    EXPECT_FALSE(std::getline(csv, extra));
  }
  o.episodes = 0;
  EXPECT_THROW(cmd_eval(ck_path.string(), o, log), ContractError);
}

TEST(Commands, EvalRejectsCheckpointFromAnotherShape) {
  const auto dir = scratch("mismatch");
  std::ostringstream log;
  ASSERT_EQ(run_training(desk_run(dir / "run"), log).exit, kExitOk);
  auto ck = load_checkpoint((dir / "run" / kCheckpointName).string());
  auto cfg = parse_config_text(ck.config);
  cfg.train.policy.ffn_hidden = 20;
  ck.config = config_snapshot(cfg);
  save_checkpoint(ck, (dir / "edited.pkfr").string());
  try {
    cmd_eval((dir / "edited.pkfr").string(), {}, log);
    FAIL() << "expected DimensionMismatch";
  } catch (const DimensionMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("ffn.w3"), std::string::npos) << e.what();
  }
}

TEST(Commands, AblationVariantsAndLabels) {
  RunConfig base;
  base.train.policy.no_depth_query = true;  // cleared for the reference row
  const auto v = ablation_variants(base, true);
  ASSERT_EQ(v.size(), 7u);
  const std::vector<std::string> want = {"ParkourFormer",        "w/o supervise signal(MSE)", "w/o RGB-D Query",
                                         "w/o future prediction", "1-MLP(w/o MoE)",            "4-MLP(MoE)",
                                         "Vanilla Transformer"};
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(model_label(v[i]), want[i]);
    EXPECT_EQ(v[i].train.seed, base.train.seed);
    EXPECT_NO_THROW(v[i].validate()) << want[i];
  }
  EXPECT_EQ(ablation_variants(base, false).size(), 4u);
}

TEST(Commands, AblateWritesAllRowsWithSharedSeeds) {
  const auto dir = scratch("ablate");
  auto cfg = desk_run(dir);
  cfg.train.iterations = 1;
  cfg.eval_families = {env::TerrainFamily::kRoughGround, env::TerrainFamily::kClimbDown};
  std::ostringstream log;
  ASSERT_EQ(cmd_ablate(cfg, true, log), kExitOk) << log.str();
  std::istringstream csv(slurp(dir / "ablation_success.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 7);
  std::istringstream seeds(slurp(dir / "env_seeds.txt"));
  std::string first;
  std::getline(seeds, first);
  const auto tail = first.substr(first.find(' '));
  int n = 1;
  while (std::getline(seeds, line)) {
    EXPECT_EQ(line.substr(line.size() - tail.size()), tail);
    ++n;
  }
  EXPECT_EQ(n, 7);
}

TEST(Commands, ExportTerrainValidatesArguments) {
  const auto dir = scratch("terrain");
  const auto path = (dir / "t.txt").string();
  EXPECT_EQ(cmd_export_terrain("ClimbUp", 0.3, 5, path), kExitOk);
  std::ostringstream want;
  env::export_terrain(env::generate_terrain(env::TerrainFamily::kClimbUp, 0.3, 5), want);
  EXPECT_EQ(slurp(path), want.str());
  EXPECT_THROW(cmd_export_terrain("Lava", 0.3, 5, path), ConfigError);
  EXPECT_THROW(cmd_export_terrain("ClimbUp", 1.5, 5, path), ConfigError);
}

TEST(Commands, InspectListsEntries) {
  const auto dir = scratch("inspect");
  const auto path = (dir / "h.pkfr").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << hand_assembled();
  }
  std::ostringstream os;
  cmd_inspect_checkpoint(path, os);
  EXPECT_EQ(os.str(), "version 1\nentries 2\na [2x3] 6\nbb [] 1\nscalars 7\nconfig\nx.y = 1\nz");
}
