#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfdelay/checkpoint.hpp"
#include "mfdelay/experiment.hpp"

namespace fs = std::filesystem;
using mfd::Algorithm;
using mfd::ExperimentConfig;
using nlohmann::json;

namespace {

const fs::path kConfigs = fs::path(MFDELAY_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mfdelay_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(Algorithm a, const fs::path& out, double tau = 0.3) {
  ExperimentConfig c;
  c.algorithm = a;
  c.horizon = 1.0;
  c.delay = tau;
  c.dt = 0.1;
  c.batch_size = 16;
  c.eval_paths = 8;
  c.epochs = 3;
  c.sizes = {4, {5}};
  c.optimizer = {mfd::OptimizerKind::adam, 1e-2};
  c.output_dir = out.string();
  return c;
}

int run_quiet(const ExperimentConfig& c) {
  std::ostringstream log;
  return mfd::run_experiment(c, log);
}

int cli(const std::string& args) {
  const int status = std::system((std::string(MFDELAY_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

template <typename E>
std::string key_of(const std::string& text) {
  try {
    mfd::parse_config_text(text);
  } catch (const E& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, DelayPreset) {
  const auto c = mfd::parse_config(kConfigs / "paper_delay.json");
  EXPECT_EQ(c.horizon, 10.0);
  EXPECT_EQ(c.delay, 4.0);
  EXPECT_EQ(c.dt, 0.1);
  EXPECT_EQ(c.batch_size, 4000u);
  EXPECT_EQ(c.model, (mfd::ModelParams{0.0, 1.0, 1.0, 1.0}));
  EXPECT_EQ(c.sizes.lstm_hidden, 128u);
  EXPECT_EQ(c.sizes.ffn_hidden, (std::vector<std::size_t>{64, 128, 64}));
  EXPECT_EQ(c.grid().delay_steps, 40u);
}

TEST(Config, NoDelayPreset) {
  const auto c = mfd::parse_config(kConfigs / "paper_nodelay.json");
  EXPECT_EQ(c.delay, 0.0);
  EXPECT_EQ(c.grid().steps, 100u);
  EXPECT_FALSE(c.grid().delayed());
}

TEST(Config, DivisibilityErrorNamesDt) {
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"T": 10, "dt": 0.3})"), "dt");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"tau": 3.14})"), "tau");
}

TEST(Config, UnknownKeyNamed) {
  EXPECT_EQ(key_of<mfd::UnknownKeyError>(R"({"learning_rte": 0.01})"), "learning_rte");
}

TEST(Config, DistinctErrorClasses) {
  EXPECT_THROW(mfd::parse_config("/nonexistent/mfdelay.json"), mfd::ConfigFileError);
  EXPECT_THROW(mfd::parse_config_text("{\"T\": 10,"), mfd::ConfigSyntaxError);
  EXPECT_THROW(mfd::parse_config_text("[1, 2]"), mfd::ConfigSyntaxError);
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"sigma": 0})"), "sigma");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"c_t": -1})"), "c_t");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"M": 2.5})"), "M");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"M": -3})"), "M");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"M": 1})"), "M");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"algorithm": "direct_rnn"})"), "algorithm");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"optimizer": "rmsprop"})"), "optimizer");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"ffn_hidden": [64, 0]})"), "ffn_hidden");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"lstm_hidden": 0})"), "lstm_hidden");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"scale_time": 1})"), "scale_time");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"learning_rate": 0})"), "learning_rate");
  EXPECT_EQ(key_of<mfd::ConfigValueError>(R"({"output_dir": 3})"), "output_dir");
}

TEST(Config, EpochDefaultsPerAlgorithm) {
  EXPECT_EQ(mfd::parse_config_text(R"({"algorithm": "direct_ffn"})").epochs, 500u);
  EXPECT_EQ(mfd::parse_config_text(R"({"algorithm": "fabsde_shared"})").epochs, 1000u);
  EXPECT_EQ(mfd::parse_config_text(R"({"algorithm": "fabsde_shared", "epochs": 7})").epochs, 7u);
  const auto d = mfd::parse_config_text("{}");
  EXPECT_EQ(d.optimizer.kind, mfd::OptimizerKind::sgd);
  EXPECT_EQ(d.optimizer.learning_rate, 1e-3);
  EXPECT_EQ(d.grad_tol, 1e-4);
}

TEST(Config, RoundTrip) {
  const auto d = mfd::parse_config_text("{}");
  EXPECT_EQ(mfd::config_from_json(mfd::to_json(d)), d);
  auto c = tiny(Algorithm::fabsde_three_lstm, "x/y");
  c.model = {0.25, 0.7, 1.0 / 3.0, 2.0};
  c.seed = 123456789012345ull;
  c.inputs = {false, true};
  c.fixed_batch = true;
  c.plateau_rtol = 1e-7;
  c.log_every = 9;
  const auto back = mfd::parse_config_text(mfd::to_json(c).dump());
  EXPECT_EQ(back, c);
}

TEST(Config, ResolvedConfigListsEveryKey) {
  const json j = mfd::to_json(mfd::parse_config_text("{}"));
  EXPECT_EQ(j.size(), 30u);
  for (const char* k : {"algorithm", "T", "tau", "dt", "M", "seed", "eval_seed", "learning_rate",
                        "scale_time", "append_time", "fixed_batch", "output_dir"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
}

TEST(Run, ZeroEpochsEmitsInitialArtifacts) {
  const auto dir = scratch("zero");
  auto c = tiny(Algorithm::direct_lstm, dir);
  c.epochs = 0;
  ASSERT_EQ(run_quiet(c), mfd::kExitOk);
  for (const char* f : {"history.csv", "trajectories.csv", "checkpoint.txt",
                        "resolved-config.json", "summary.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "history.csv"), "epoch,J,grad_norm\n");
  EXPECT_FALSE(fs::exists(dir / "validation.json"));
  EXPECT_EQ(mfd::parse_config(dir / "resolved-config.json"), c);
}

TEST(Run, HistorySchemas) {
  const auto d1 = scratch("schema_direct");
  const auto d2 = scratch("schema_fabsde");
  ASSERT_EQ(run_quiet(tiny(Algorithm::direct_ffn, d1)), mfd::kExitOk);
  ASSERT_EQ(run_quiet(tiny(Algorithm::fabsde_shared, d2)), mfd::kExitOk);
  const auto h1 = mfd::read_csv(d1 / "history.csv");
  const auto h2 = mfd::read_csv(d2 / "history.csv");
  EXPECT_EQ(h1.header, (std::vector<std::string>{"epoch", "J", "grad_norm"}));
  EXPECT_EQ(h2.header, (std::vector<std::string>{"epoch", "L1", "L2", "J"}));
  EXPECT_EQ(h1.rows.size(), 3u);
  const auto t2 = mfd::read_csv(d2 / "trajectories.csv");
  EXPECT_EQ(t2.header, (std::vector<std::string>{"path_id", "step", "t", "X", "alpha", "Y", "EY",
                                                 "Z", "Ytilde"}));
  EXPECT_EQ(t2.rows.size(), 8u * 11u);
  const json s = json::parse(slurp(d2 / "summary.json"));
  EXPECT_EQ(s.at("train_final_J").get<double>(), h2.rows.back()[h2.column("J")]);
}

TEST(Run, BitIdenticalRepeats) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  for (auto alg : {Algorithm::direct_lstm, Algorithm::fabsde_three_lstm}) {
    ASSERT_EQ(run_quiet(tiny(alg, a)), mfd::kExitOk);
    ASSERT_EQ(run_quiet(tiny(alg, b)), mfd::kExitOk);
    EXPECT_EQ(slurp(a / "history.csv"), slurp(b / "history.csv"));
    EXPECT_EQ(slurp(a / "trajectories.csv"), slurp(b / "trajectories.csv"));
    EXPECT_EQ(slurp(a / "checkpoint.txt"), slurp(b / "checkpoint.txt"));
  }
}

TEST(Run, TrajectoriesParseBackLosslessly) {
  const auto dir = scratch("lossless");
  auto c = tiny(Algorithm::direct_lstm, dir);
  ASSERT_EQ(run_quiet(c), mfd::kExitOk);
  // Rebuild the evaluation batch from the checkpoint and compare every value.
  const auto grid = c.grid();
  auto policy = mfd::make_direct_policy(mfd::DirectKind::lstm_on_noise, c.sizes, c.inputs, grid, 0);
  auto params = policy.parameters();
  std::ifstream ck(dir / "checkpoint.txt");
  mfd::load_checkpoint(ck, params);
  const auto noise = mfd::sample_increments(c.eval_paths, grid, c.eval_seed, 0);
  mfd::BatchState s;
  {
    mfd::ad::NoGradGuard g;
    s = mfd::policy_rollout(policy, noise, c.model, grid).snapshot(grid.delay_steps);
  }
  const auto t = mfd::read_csv(dir / "trajectories.csv");
  const std::size_t xcol = t.column("X"), acol = t.column("alpha");
  for (const auto& row : t.rows) {
    const auto j = static_cast<std::size_t>(row[0]);
    const auto i = static_cast<std::size_t>(row[1]);
    EXPECT_EQ(row[xcol], s.x.at(j, i));
    EXPECT_EQ(row[acol], s.alpha_at(j, static_cast<long>(i)));
    EXPECT_EQ(row[2], grid.time(static_cast<long>(i)));
  }
}

TEST(Run, NoDelayWritesValidation) {
  const auto dir = scratch("nodelay");
  ASSERT_EQ(run_quiet(tiny(Algorithm::fabsde_three_lstm, dir, 0.0)), mfd::kExitOk);
  const json v = json::parse(slurp(dir / "validation.json"));
  for (const char* k : {"slope", "intercept", "z_mean_abs_err", "value_gap"}) {
    ASSERT_TRUE(v.contains(k)) << k;
    EXPECT_TRUE(v.at(k).contains("value"));
    EXPECT_TRUE(v.at(k).contains("stderr"));
  }
  const auto rep = mfd::validate_run(dir);
  EXPECT_EQ(rep.slope.value, v.at("slope").at("value").get<double>());
  EXPECT_EQ(mfd::to_json(rep), v);
  const auto d2 = scratch("nodelay_direct");
  ASSERT_EQ(run_quiet(tiny(Algorithm::direct_lstm, d2, 0.0)), mfd::kExitOk);
  EXPECT_TRUE(json::parse(slurp(d2 / "validation.json")).at("z_mean_abs_err").is_null());
}

TEST(Run, ValidateRejectsDelayRun) {
  const auto dir = scratch("validate_delay");
  ASSERT_EQ(run_quiet(tiny(Algorithm::direct_lstm, dir)), mfd::kExitOk);
  EXPECT_THROW(mfd::validate_run(dir), mfd::UsageError);
}

TEST(Run, DivergenceReported) {
  const auto dir = scratch("diverge");
  auto c = tiny(Algorithm::direct_ffn, dir);
  c.horizon = 2.0;
  c.delay = 0.5;
  c.optimizer = {mfd::OptimizerKind::sgd, 50.0};
  c.epochs = 20;
  EXPECT_EQ(run_quiet(c), mfd::kExitDivergence);
  const json f = json::parse(slurp(dir / "failure.json"));
  EXPECT_EQ(f.at("status"), "diverged");
  EXPECT_GT(f.at("epoch").get<long>(), 0);
  EXPECT_FALSE(fs::exists(dir / "summary.json"));
}

TEST(Run, UnwritableOutputIsIoError) {
  auto c = tiny(Algorithm::direct_lstm, "/dev/null/mfdelay");
  EXPECT_EQ(run_quiet(c), mfd::kExitIo);
}

TEST(Compare, SelfComparisonHasZeroGap) {
  const auto dir = scratch("cmp_self");
  ASSERT_EQ(run_quiet(tiny(Algorithm::direct_lstm, dir)), mfd::kExitOk);
  const auto cmp = mfd::compare_runs({dir, dir});
  EXPECT_EQ(cmp.relative_gap[0][1], 0.0);
  EXPECT_FALSE(cmp.any_flagged);
  std::ostringstream out;
  mfd::print_comparison(out, cmp);
  EXPECT_NE(out.str().find("direct_lstm vs direct_lstm: 0%"), std::string::npos);
}

TEST(Compare, IncompatibleGridsRejected) {
  const auto a = scratch("cmp_a");
  const auto b = scratch("cmp_b");
  ASSERT_EQ(run_quiet(tiny(Algorithm::direct_lstm, a, 0.3)), mfd::kExitOk);
  ASSERT_EQ(run_quiet(tiny(Algorithm::direct_lstm, b, 0.2)), mfd::kExitOk);
  EXPECT_THROW(mfd::compare_runs({a, b}), mfd::UsageError);
  EXPECT_THROW(mfd::compare_runs({a}), mfd::UsageError);
}

TEST(Compare, EpochsToPlateau) {
  std::vector<double> j;
  for (int e = 0; e < 100; ++e) j.push_back(e < 30 ? 100.0 - 3.0 * e : 10.0);
  const auto p = mfd::epochs_to_plateau(j);
  EXPECT_GE(p, 30u);
  EXPECT_LE(p, 50u);
  EXPECT_EQ(mfd::epochs_to_plateau(std::vector<double>(40, 5.0)), 20u);
  EXPECT_EQ(mfd::epochs_to_plateau({}), 0u);
}

TEST(Cli, ExitStatuses) {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  auto c = tiny(Algorithm::direct_lstm, dir / "run");
  {
    std::ofstream f(dir / "cfg.json");
    f << mfd::to_json(c).dump();
  }
  {
    std::ofstream f(dir / "bad.json");
    f << R"({"learning_rte": 1})";
  }
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("run " + (dir / "bad.json").string()), 1);
  EXPECT_EQ(cli("run " + (dir / "missing.json").string()), 3);
  EXPECT_EQ(cli("run " + (dir / "cfg.json").string() + " --epochs 2 --seed 9 --out " +
                (dir / "r2").string()),
            0);
  const auto r2 = mfd::parse_config(dir / "r2" / "resolved-config.json");
  EXPECT_EQ(r2.epochs, 2u);
  EXPECT_EQ(r2.seed, 9u);
  EXPECT_EQ(mfd::read_csv(dir / "r2" / "history.csv").rows.size(), 2u);
  EXPECT_EQ(cli("run " + (dir / "cfg.json").string()), 0);
  EXPECT_EQ(cli("compare " + (dir / "run").string() + " " + (dir / "r2").string()), 0);
  EXPECT_EQ(cli("compare " + (dir / "run").string()), 1);
  EXPECT_EQ(cli("validate " + (dir / "run").string()), 1);
  EXPECT_EQ(cli("validate " + (dir / "nowhere").string()), 3);
}
