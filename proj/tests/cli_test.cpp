#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nascore/cli.hpp"
#include "nascore/core.hpp"
#include "nascore/report.hpp"

using namespace nascore;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "nascore_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run({"synth", "--smoke", "--seed", "3", "--out", str("smoke")}).code, kExitOk);
    ASSERT_EQ(run({"prep", "--corpus", str("smoke"), "--out", str("smoke.csv"), "--min-occurrences", "10"}).code,
              kExitOk);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string str(const std::string& name) { return (root_ / name).string(); }

  static Result quick_train(const std::string& out, const std::string& model = "r2plus1d",
                            const std::string& method = "indirect", const std::string& manifest = "smoke.csv") {
    return run({"train", "--manifest", str(manifest), "--model", model, "--method", method, "--epochs", "1", "--out",
                str(out)});
  }

  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST(CliUsage, MissingRequiredFlagIsUsageError) {
  const auto r = run({"synth", "--seed", "0"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--out"), std::string::npos);
}

TEST(CliUsage, NoCommandAndUnknownValues) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--manifest", "m", "--model", "resnet", "--out", "o"}).code, kExitUsage);
  EXPECT_EQ(run({"verify", "--suite", "everything"}).code, kExitUsage);
  EXPECT_EQ(run({"synth", "--out", "x", "--geometry", "0x4"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(CliVerify, PrepCountsPasses) {
  const auto r = run({"verify", "--suite", "prep-counts"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("458 videos [65,58,68,54,60,46,57,50]"), std::string::npos);
  EXPECT_NE(r.out.find("0 failed"), std::string::npos);
}

TEST_F(Cli, SmokeCorpusHasTenClipsPerClass) {
  const auto r = run({"prep", "--corpus", str("smoke"), "--out", str("smoke2.csv"), "--min-occurrences", "10"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("80 videos before, 80 kept"), std::string::npos);
}

TEST_F(Cli, PrepWithNoQualifyingClassFails) {
  const auto r = run({"prep", "--corpus", str("smoke"), "--out", str("none.csv")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("empty"), std::string::npos);
}

TEST_F(Cli, BothRulesGiveIdenticalManifests) {
  ASSERT_EQ(run({"synth", "--seed", "0", "--geometry", "2x2", "--out", str("full")}).code, kExitOk);
  EXPECT_EQ(run({"prep", "--corpus", str("full"), "--out", str("before.csv"), "--rule", "before"}).code, kExitOk);
  const auto r = run({"prep", "--corpus", str("full"), "--out", str("after.csv"), "--rule", "after"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("882 videos before, 458 kept"), std::string::npos);
  EXPECT_EQ(read_text_file(str("before.csv")), read_text_file(str("after.csv")));
  fs::remove_all(root_ / "full");
}

TEST_F(Cli, TrainEchoesDefaultsAndIsReproducible) {
  ASSERT_EQ(quick_train("run-a").code, kExitOk);
  ASSERT_EQ(quick_train("run-b").code, kExitOk);
  const auto config = parse_key_values(read_text_file(str("run-a/config.txt")));
  EXPECT_EQ(config.at("train.learning_rate"), "0.00003");
  EXPECT_EQ(config.at("train.batch_size"), "3");
  EXPECT_EQ(config.at("train.folds"), "5");
  EXPECT_EQ(config.at("model.height"), "24");
  EXPECT_EQ(config.at("model.width"), "32");
  EXPECT_EQ(read_text_file(str("run-a/predictions.csv")), read_text_file(str("run-b/predictions.csv")));
  for (int k = 1; k <= 5; ++k) EXPECT_TRUE(fs::exists(root_ / "run-a" / ("fold" + std::to_string(k) + ".ckpt")));
}

TEST_F(Cli, TrainRefusesExistingRun) {
  ASSERT_EQ(quick_train("run-x").code, kExitOk);
  EXPECT_EQ(quick_train("run-x").code, kExitFailure);
}

TEST_F(Cli, JobsFromEnvironmentDoNotChangeResults) {
  ASSERT_EQ(quick_train("serial", "cnnrnn").code, kExitOk);
  ::setenv("NASCORE_JOBS", "3", 1);
  const auto r = quick_train("parallel", "cnnrnn");
  ::unsetenv("NASCORE_JOBS");
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_EQ(read_text_file(str("serial/predictions.csv")), read_text_file(str("parallel/predictions.csv")));
}

TEST_F(Cli, ConfigFileAndFlagsOverride) {
  {
    std::ofstream(str("cfg.txt")) << "train.learning_rate=0.01\ntrain.folds=2\nmodel.conv_channels=4,4,4\n";
  }
  ASSERT_EQ(run({"train", "--manifest", str("smoke.csv"), "--model", "r2plus1d", "--config", str("cfg.txt"),
                 "--epochs", "1", "--lr", "0.002", "--out", str("cfg-run")})
                .code,
            kExitOk);
  const auto config = parse_key_values(read_text_file(str("cfg-run/config.txt")));
  EXPECT_EQ(config.at("train.learning_rate"), "0.002");
  EXPECT_EQ(config.at("train.folds"), "2");
  EXPECT_EQ(config.at("model.conv_channels"), "4,4,4");
  std::ofstream(str("bad.txt")) << "train.nonsense=1\n";
  EXPECT_NE(run({"train", "--manifest", str("smoke.csv"), "--model", "r2plus1d", "--config", str("bad.txt"), "--out",
                 str("bad-run")})
                .code,
            kExitOk);
}

TEST_F(Cli, EvalBuildsReportAndRefusesMixedCorpora) {
  ASSERT_EQ(quick_train("ev-ind").code, kExitOk);
  ASSERT_EQ(quick_train("ev-dir", "r2plus1d", "direct").code, kExitOk);
  auto r = run({"eval", "--runs", str("ev-ind"), str("ev-dir"), "--out", str("report.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Report report = parse_report(read_text_file(str("report.json")));
  EXPECT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].run, "ev-ind");
  EXPECT_NE(r.out.find("micro-r2plus1d"), std::string::npos);

  ASSERT_EQ(run({"synth", "--smoke", "--seed", "4", "--out", str("smoke-b")}).code, kExitOk);
  ASSERT_EQ(run({"prep", "--corpus", str("smoke-b"), "--out", str("smoke-b.csv"), "--min-occurrences", "10"}).code,
            kExitOk);
  ASSERT_EQ(quick_train("other", "cnnrnn", "indirect", "smoke-b.csv").code, kExitOk);
  r = run({"eval", "--runs", str("ev-ind"), str("other"), "--out", str("mixed.json")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("incompatible"), std::string::npos);
  EXPECT_FALSE(fs::exists(root_ / "mixed.json"));
}
