#include <gtest/gtest.h>

#include <fstream>

#include "candleforge/dataset.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kCli = CANDLEFORGE_CLI_PATH;

cftest::CommandResult cli(const std::string& args) { return cftest::run_command(kCli.string() + " " + args); }

fs::path write_config(const fs::path& dir, const std::string& text) {
  fs::create_directories(dir);
  std::ofstream(dir / "run.ini") << text;
  return dir / "run.ini";
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  const auto unknown = cli("frobnicate");
  EXPECT_EQ(unknown.exit_code, 1);
  EXPECT_NE(unknown.output.find("fetch"), std::string::npos) << unknown.output;
  EXPECT_EQ(cli("").exit_code, 1);
  EXPECT_EQ(cli("--help").exit_code, 0);
  EXPECT_EQ(cli("dataset --bogus-flag").exit_code, 1);
}

TEST(Cli, ValidationErrorsExitOne) {
  cftest::TempDir tmp;
  const auto bad = write_config(tmp.path, "[sampler]\nsteps = -4\n");
  const auto r = cli("dataset --config " + bad.string());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("steps"), std::string::npos) << r.output;
  EXPECT_EQ(cli("dataset --config " + (tmp.path / "nope.ini").string()).exit_code, 1);
  const auto typo = write_config(tmp.path / "t", "[sampler]\nstep = 4\n");
  EXPECT_EQ(cli("dataset --config " + typo.string()).exit_code, 1);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  cftest::TempDir tmp;
  const auto cfg = write_config(tmp.path, cftest::e2e_config(tmp.path));
  const auto r = cli("generate --offline --config " + cfg.string());  // no checkpoint yet
  EXPECT_EQ(r.exit_code, 2) << r.output;
}

TEST(Cli, DatasetOnTrainingRangeGives2419Records) {
  cftest::TempDir tmp;
  const auto cfg = write_config(tmp.path, cftest::e2e_config(tmp.path));
  const auto r = cli("dataset --offline --config " + cfg.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("train pairs: 2419"), std::string::npos) << r.output;
  EXPECT_EQ(candleforge::read_manifest(tmp.path / "dataset" / "train").records.size(), 2419u);
}

TEST(Cli, EvaluateGroundTruthScoresPerfectly) {
  cftest::TempDir tmp;
  const auto cfg = write_config(tmp.path, cftest::e2e_config(tmp.path));
  ASSERT_EQ(cli("dataset --offline --config " + cfg.string()).exit_code, 0);
  const auto eval = candleforge::read_manifest(tmp.path / "dataset" / "eval");
  const auto r = cli("evaluate --config " + cfg.string() + " --generated " + (tmp.path / "dataset" / "eval").string() +
                     "/images");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("100.00% (" + std::to_string(eval.records.size())), std::string::npos) << r.output;
}

TEST(Cli, SingleWindowGenerationWithOverrides) {
  cftest::TempDir tmp;
  const auto cfg = write_config(tmp.path, cftest::e2e_config(tmp.path, 2, 2));
  ASSERT_EQ(cli("dataset --offline --config " + cfg.string()).exit_code, 0);
  ASSERT_EQ(cli("train --offline --config " + cfg.string()).exit_code, 0);
  const auto r = cli("generate --offline --config " + cfg.string() + " --window 500 --rsi 100 --macd -3.125 --out " +
                     (tmp.path / "one").string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("Predict next candle, RSI is 100.00, MACD is -3.13"), std::string::npos) << r.output;
  EXPECT_TRUE(fs::exists(tmp.path / "one" / "window_500.png"));
  EXPECT_EQ(cli("generate --offline --config " + cfg.string() + " --window 500 --rsi 150").exit_code, 1);
  EXPECT_EQ(cli("generate --offline --config " + cfg.string() + " --window 3").exit_code, 1);
}

TEST(Cli, PipelineIsByteDeterministic) {
  cftest::TempDir a, b;
  const auto ca = write_config(a.path / "cfg", cftest::e2e_config(a.path / "run"));
  const auto cb = write_config(b.path / "cfg", cftest::e2e_config(b.path / "run"));
  const auto ra = cftest::run_pipeline(kCli, ca);
  ASSERT_EQ(ra.exit_code, 0) << ra.output;
  const auto rb = cftest::run_pipeline(kCli, cb);
  ASSERT_EQ(rb.exit_code, 0) << rb.output;
  EXPECT_EQ(cftest::diff_trees(a.path / "run", b.path / "run"), std::vector<std::string>{});

  // a different seed changes the trained model
  const auto cc = write_config(b.path / "cfg2", cftest::e2e_config(b.path / "run2"));
  ASSERT_EQ(cli("dataset --offline --config " + cc.string()).exit_code, 0);
  ASSERT_EQ(cli("train --offline --seed 7 --config " + cc.string()).exit_code, 0);
  EXPECT_NE(candleforge::read_file_bytes(b.path / "run2" / "model" / "model.cfck"),
            candleforge::read_file_bytes(a.path / "run" / "model" / "model.cfck"));
}
