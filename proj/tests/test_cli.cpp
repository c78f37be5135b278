#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "guard_lab/config.hpp"
#include "guard_lab/experiment.hpp"

using namespace guard_lab;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(seed: 1
gen:
  n: 300
  d: 2
  classes: 4
  forget_frac: 0.1
  overlap: 0.5
  noise_sigma: 0.8
  test_frac: 0.2
finetune:
  lr: 0.5
  epochs: 30
unlearn:
  - method: GA
    eta: 1.0e-2
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("guard_lab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.yaml";
  std::ofstream(p) << text;
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GUARD_LAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int config_error_line(const std::string& text) {
  try {
    parse_config(text, "t.yaml");
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST(Config, UnknownKeyReportsItsLine) {
  const std::string text = std::string(kMinimal) + "    tua: 0.5\n";
  EXPECT_EQ(config_error_line(text), 16);
  try {
    parse_config(text, "t.yaml");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("t.yaml:16"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("tua"), std::string::npos);
  }
}

TEST(Config, InvalidValuesAreRejected) {
  std::string text = kMinimal;
  text.replace(text.find("eta: 1.0e-2"), 11, "eta: -1");
  EXPECT_EQ(config_error_line(text), 15);
  EXPECT_GT(config_error_line("seed: 1\ngen: {n: 10}\nunlearn: []\n"), 0);
  EXPECT_GT(config_error_line("seed: 1\ngen: {n: 100, forget_frac: 2}\nunlearn: [{method: GA}]\n"), 0);
  EXPECT_GT(config_error_line("seed: 1\ngen: {n: 100}\nunlearn: [{method: NPO}]\n"), 0);
  EXPECT_GT(config_error_line("seed: 1\ngen: {n: 100}\nunlearn: [{method: GA, guard: maybe}]\n"), 0);
  EXPECT_THROW(load_config("/nonexistent/guard_lab.yaml"), ConfigError);
}

TEST(Config, DefaultsAndGuardExpansion) {
  const ExperimentConfig cfg = parse_config(
      "seeds: [3, 4]\ngen: {n: 100, forget_frac: [0.05, 0.1]}\nunlearn:\n  - {method: KM, guard: both}\n");
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(cfg.forget_fracs, (std::vector<double>{0.05, 0.1}));
  ASSERT_EQ(cfg.unlearn.size(), 2u);
  EXPECT_FALSE(cfg.unlearn[0].cfg.use_guard);
  EXPECT_TRUE(cfg.unlearn[1].cfg.use_guard);
  EXPECT_EQ(cfg.unlearn[0].cfg.tau, 0.03);
  EXPECT_EQ(cfg.unlearn[0].cfg.epochs, 1);
  EXPECT_EQ(cfg.unlearn[0].cfg.method, Method::KM);
}

TEST(CmdRun, MinimalGaConfigGivesOneRow) {
  const fs::path out = scratch("minimal");
  const RunSummary s = cmd_run(parse_config(kMinimal), out.string());
  ASSERT_EQ(s.rows.size(), 1u);
  const std::string csv = slurp(out / "results.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(out / "config.yaml"));
  EXPECT_TRUE(fs::exists(out / "summary.txt"));
  const fs::path inst = out / "seed_1" / "split_0.1";
  EXPECT_TRUE(fs::exists(inst / "dataset_hash.txt"));
  const std::string run = slurp(inst / "run_0.json");
  EXPECT_NE(run.find("guard-lab/run-v1"), std::string::npos);
  EXPECT_NE(slurp(out / "summary.txt").find("full-batch"), std::string::npos);
}

TEST(CmdRun, GuardRowHasLowerSacrificeRateOnEntangledInstance) {
  const ExperimentConfig cfg = load_config(std::string(GUARD_LAB_CONFIG_DIR) + "/theory_fixture.yaml");
  ExperimentConfig one = cfg;
  one.seeds = {0};
  const RunSummary s = cmd_run(one, "");
  ASSERT_EQ(s.rows.size(), 2u);
  ASSERT_TRUE(s.rows[0].rho_loss && s.rows[1].rho_loss);
  EXPECT_FALSE(s.rows[0].guard);
  EXPECT_TRUE(s.rows[1].guard);
  EXPECT_LT(*s.rows[1].rho_loss, *s.rows[0].rho_loss);
}

TEST(CmdRun, CsvCellsAreFinite) {
  const RunSummary s = cmd_run(parse_config(kMinimal), "");
  std::istringstream in(rows_csv(s.rows));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    EXPECT_EQ(line.find("nan"), std::string::npos);
    EXPECT_EQ(line.find("inf"), std::string::npos);
  }
}

TEST(CmdSweep, HugeTemperatureMatchesBaseline) {
  const ExperimentConfig cfg = parse_config(kMinimal);
  const SweepSummary s = cmd_sweep_tau(cfg, {1e9}, "");
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_LE(s.rows[0].max_param_diff, 1e-6);
  EXPECT_LE(std::abs(s.rows[0].retain_gap), 1e-6);
  EXPECT_LE(std::abs(s.rows[0].forget_gap), 1e-6);
}

TEST(CmdSweep, RejectsNonPositiveTemperature) {
  EXPECT_THROW(cmd_sweep_tau(parse_config(kMinimal), {0.1, -1.0}, ""), ConfigError);
  EXPECT_THROW(cmd_sweep_tau(parse_config(kMinimal), {}, ""), ConfigError);
}

TEST(CmdVerify, NegativeAlignmentSkipsTheoryButBoundsPass) {
  const ExperimentConfig cfg = parse_config(R"(seed: 3
gen: {n: 200, d: 3, classes: 4, forget_frac: 0.1, overlap: 0.0, noise_sigma: 1.0}
model: {kind: logistic, l2: 1.0e-2}
finetune: {lr: 0.5, epochs: 50, newton_polish: true}
unlearn:
  - {method: GA, guard: both, eta: 1.0e-3, tau: 0.03}
attribution: {compute_if: true, compute_bounds: true}
)");
  const auto checks = cmd_verify_theory(cfg, "");
  int skipped = 0;
  for (const auto& c : checks) {
    EXPECT_NE(c.status, CheckStatus::fail) << c.name << " " << c.detail;
    if (c.name.find("if_lemma_bound") != std::string::npos) EXPECT_EQ(c.status, CheckStatus::pass);
    if (c.name.find("q_sum_identity") != std::string::npos) EXPECT_EQ(c.status, CheckStatus::pass);
    if (c.name.find("retain_gap_sign") != std::string::npos) EXPECT_EQ(c.status, CheckStatus::skipped);
    skipped += c.status == CheckStatus::skipped;
  }
  EXPECT_GE(skipped, 6);
}

TEST(Cli, RerunGivesByteIdenticalCsv) {
  const fs::path dir = scratch("rerun");
  const fs::path cfg = write_config(dir, kMinimal);
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
  const std::string a = slurp(dir / "a" / "results.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "results.csv"));
}

TEST(Cli, UsageAndConfigErrorsExitTwo) {
  const fs::path dir = scratch("usage");
  const fs::path cfg = write_config(dir, kMinimal);
  EXPECT_EQ(run_cli("run"), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("sweep-tau --config " + cfg.string() + " --taus \"\" --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("sweep-tau --config " + cfg.string() + " --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("sweep-tau --config " + cfg.string() + " --taus 0.1,abc --out " + dir.string()), 2);
  const fs::path bad = dir / "bad.yaml";
  std::ofstream(bad) << kMinimal << "bogus: 1\n";
  EXPECT_EQ(run_cli("run --config " + bad.string() + " --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --format xml"), 2);
}

TEST(Cli, NumericFailureExitsThree) {
  const fs::path dir = scratch("numeric");
  const fs::path cfg = write_config(dir, "seed: 1\ngen: {n: 100, d: 2, classes: 3}\nfinetune: {lr: 1.0e+300, epochs: 20}\n"
                                         "unlearn: [{method: GA}]\n");
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --out " + (dir / "o").string()), 3);
}

TEST(Cli, SubcommandsWriteTheirOutputs) {
  const fs::path dir = scratch("subcommands");
  const fs::path cfg = write_config(dir, std::string(kMinimal) + "attribution: {compute_if: true, compute_bounds: true}\n");
  EXPECT_EQ(run_cli("gen-data --config " + cfg.string() + " --out " + (dir / "g").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "g" / "seed_1" / "split_0.1" / "train.txt"));
  EXPECT_EQ(run_cli("attribute --config " + cfg.string() + " --format csv --out " + (dir / "a").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "a" / "seed_1" / "split_0.1" / "attribution.csv"));
  EXPECT_FALSE(fs::exists(dir / "a" / "seed_1" / "split_0.1" / "attribution.json"));
  EXPECT_EQ(run_cli("sweep-tau --config " + cfg.string() + " --taus 0.01,0.1,1 --out " + (dir / "s").string()), 0);
  const std::string sweep = slurp(dir / "s" / "sweep.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 4);
  EXPECT_EQ(run_cli("verify-theory --config " + cfg.string() + " --seed 2 --out " + (dir / "v").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "v" / "verify.txt"));
}
