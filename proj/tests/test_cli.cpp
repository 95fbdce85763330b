// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "jerkrom/datastore.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using jerkrom::testing::slurp;
using jerkrom::testing::spit;
using jerkrom::testing::TempDir;
using json = nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const std::string& args, const fs::path& cwd) {
  const fs::path o = cwd / ".stdout", e = cwd / ".stderr";
  const std::string cmd = "cd '" + cwd.string() + "' && JERKROM_RUN_ROOT='" + (cwd / "runs").string() + "' '" +
                          JERKROM_CLI_PATH + "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

const char* kToyConfig = R"({
  "data": {"source": "toy", "nx": 16, "ndim": 1, "trajectories": 8, "n_train": 6, "n_test": 2,
           "burn_in": 0, "train_steps": 8, "extrap_steps": 4, "seed": 3},
  "model": {"latent_dim": 3,
            "encoder": {"stem_width": 4, "widths": [4, 8], "blocks": [1, 1]},
            "decoder": {"hidden_layers": 2, "width": 16, "embedding": "affine"},
            "odefunc": {"hidden_layers": 2, "width": 16}},
  "train": {"stage1": {"epochs": 2, "batch_size": 4}, "stage2": {"epochs": 3, "batch_size": 2},
            "points_per_snapshot": 0}
})";

bool same_bytes(const fs::path& a, const fs::path& b) {
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() == ".json") continue;
    if (slurp(e.path()) != slurp(b / e.path().filename())) return false;
  }
  return true;
}

json record(const fs::path& run, const std::string& command) { return json::parse(slurp(run / (command + ".json"))); }

/// One toy pipeline shared by the tests that inspect its artifacts.
class Pipeline : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    spit(root() / "toy.json", kToyConfig);
    const std::vector<std::string> steps{
        "gen-data --config toy.json --run-dir run -q",
        "train-ae --data run/dataset --config toy.json --run-dir run -q",
        "encode --data run/dataset --ckpt run/checkpoint-stage1 --full-window --run-dir run",
        "train-ode --ckpt run/checkpoint-stage1 --data run/dataset --run-dir run -q",
        "eval --data run/dataset --ckpt run/checkpoint-stage2 --run-dir run",
        "sweep-lambda --data run/dataset --config toy.json --lambdas 0,0.1 --run-dir run -q",
        "plot run",
    };
    for (const auto& s : steps) {
      const CliResult r = cli(s, root());
      if (r.code != 0) {
        failure_ = new std::string("`" + s + "` exited " + std::to_string(r.code) + ": " + r.err);
        return;
      }
    }
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete failure_;
    dir_ = nullptr;
    failure_ = nullptr;
  }
  void SetUp() override {
    if (failure_) FAIL() << *failure_;
  }
  static fs::path root() { return dir_->path(); }
  static fs::path run() { return root() / "run"; }

  static TempDir* dir_;
  static std::string* failure_;
};
TempDir* Pipeline::dir_ = nullptr;
std::string* Pipeline::failure_ = nullptr;

} // namespace

TEST(Cli, HelpListsEveryCommand) {
  TempDir d;
  const CliResult r = cli("--help", d.path());
  EXPECT_EQ(r.code, 0);
  for (const char* c : {"gen-data", "inspect", "train-ae", "encode", "train-ode", "predict", "eval", "sweep-lambda",
                        "plot", "selftest", "JERKROM_RUN_ROOT"}) {
    EXPECT_NE(r.out.find(c), std::string::npos) << c;
  }
}

TEST(Cli, SubcommandHelpDocumentsFlags) {
  TempDir d;
  const CliResult r = cli("predict --help", d.path());
  EXPECT_EQ(r.code, 0);
  for (const char* f : {"--ckpt", "--data", "--init", "--times", "--res", "--config", "--set", "--run-dir", "--force"}) {
    EXPECT_NE(r.out.find(f), std::string::npos) << f;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir d;
  EXPECT_EQ(cli("", d.path()).code, 2);
  EXPECT_EQ(cli("frobnicate", d.path()).code, 2);
  EXPECT_EQ(cli("gen-data --no-such-flag", d.path()).code, 2);
  EXPECT_EQ(cli("train-ae", d.path()).code, 2);  // --data is required
}

TEST(Cli, MissingConfigExitsThreeNamingPath) {
  TempDir d;
  const CliResult r = cli("train-ae --config missing.cfg --data nowhere", d.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("missing.cfg"), std::string::npos) << r.err;
}

TEST(Cli, ValidationErrorsNameTheKey) {
  TempDir d;
  spit(d / "bad.json", R"({"train": {"stage1": {"momentum": 0.9}}})");
  CliResult r = cli("gen-data --config bad.json", d.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("train.stage1.momentum"), std::string::npos) << r.err;

  r = cli("gen-data --set data.nx=24", d.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("data.nx"), std::string::npos) << r.err;

  r = cli("gen-data --set train.lambda=-1", d.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("train.lambda"), std::string::npos) << r.err;

  r = cli("gen-data --set no_equals_sign", d.path());
  EXPECT_EQ(r.code, 3);

  spit(d / "broken.json", "{ not json");
  r = cli("gen-data --config broken.json", d.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("broken.json"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "runs")) << "nothing may be written before validation";
}

TEST(Cli, SelftestPasses) {
  TempDir d;
  const CliResult r = cli("selftest", d.path());
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  std::size_t passes = 0;
  for (std::size_t p = r.out.find("PASS "); p != std::string::npos; p = r.out.find("PASS ", p + 1)) ++passes;
  EXPECT_EQ(passes, 5u) << r.out;
}

TEST(Cli, PlotOnEmptyRunDirListsAllInputs) {
  TempDir d;
  fs::create_directories(d / "empty");
  const CliResult r = cli("plot empty", d.path());
  EXPECT_EQ(r.code, 3);
  for (const char* f : {"eval-report.json", "latent-series.csv", "history-stage1.json", "sweep.csv"}) {
    EXPECT_NE(r.err.find(f), std::string::npos) << f << "\n" << r.err;
  }
}

TEST(Cli, DefaultRunDirIsTimestampedUnderRunRoot) {
  TempDir d;
  spit(d / "toy.json", kToyConfig);
  ASSERT_EQ(cli("gen-data --config toy.json -q", d.path()).code, 0);
  ASSERT_EQ(cli("gen-data --config toy.json -q", d.path()).code, 0);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(d / "runs")) names.push_back(e.path().filename().string());
  ASSERT_EQ(names.size(), 2u) << "a second run must not reuse the first directory";
  for (const auto& n : names) {
    EXPECT_NE(n.find("-gen-data"), std::string::npos) << n;
    EXPECT_TRUE(std::isdigit(static_cast<unsigned char>(n[0]))) << n;
  }
}

TEST(Cli, RerunNeedsForceAndReproducesBytes) {
  TempDir d;
  spit(d / "toy.json", kToyConfig);
  ASSERT_EQ(cli("gen-data --config toy.json --run-dir a -q", d.path()).code, 0);
  const CliResult again = cli("gen-data --config toy.json --run-dir a -q", d.path());
  EXPECT_EQ(again.code, 3);
  EXPECT_NE(again.err.find("--force"), std::string::npos) << again.err;
  ASSERT_EQ(cli("gen-data --config toy.json --run-dir b -q", d.path()).code, 0);
  ASSERT_EQ(cli("gen-data --config toy.json --run-dir a --force -q", d.path()).code, 0);
  EXPECT_TRUE(same_bytes(d / "a" / "dataset", d / "b" / "dataset"));

  ASSERT_EQ(cli("train-ae --data a/dataset --config toy.json --run-dir a -q", d.path()).code, 0);
  ASSERT_EQ(cli("train-ae --data b/dataset --config toy.json --run-dir b -q", d.path()).code, 0);
  EXPECT_TRUE(same_bytes(d / "a" / "checkpoint-stage1", d / "b" / "checkpoint-stage1"));
}

TEST_F(Pipeline, EveryCommandRecordsItsResolvedConfig) {
  for (const char* c : {"gen-data", "train-ae", "encode", "train-ode", "eval", "sweep-lambda"}) {
    const json r = record(run(), c);
    EXPECT_EQ(r.at("command"), c);
    EXPECT_EQ(r.at("fingerprint").get<std::string>().size(), 16u) << c;
    EXPECT_TRUE(r.at("config").contains("model")) << c;
    EXPECT_EQ(r.at("config").at("data").at("nx"), 16) << c;
  }
  EXPECT_TRUE(fs::exists(run() / "plots" / "plot.json"));
}

TEST_F(Pipeline, CheckpointsCarryTheTrainingFingerprint) {
  const auto s1 = jerkrom::store::load_checkpoint(run() / "checkpoint-stage1");
  const auto s2 = jerkrom::store::load_checkpoint(run() / "checkpoint-stage2");
  EXPECT_EQ(s1.stage, "I");
  EXPECT_EQ(s2.stage, "II");
  EXPECT_EQ(s1.config_fingerprint, record(run(), "train-ae").at("fingerprint"));
  EXPECT_EQ(s2.config_fingerprint, record(run(), "train-ode").at("fingerprint"));
  EXPECT_EQ(record(run(), "eval").at("inputs").at("ckpt_fingerprint"), s2.config_fingerprint);
  EXPECT_EQ(jerkrom::store::load_latents(run() / "latents").model_fingerprint, s1.config_fingerprint);
}

TEST_F(Pipeline, EvalReportIsComplete) {
  const json r = json::parse(slurp(run() / "eval-report.json"));
  EXPECT_EQ(r.at("times").size(), 12u);
  EXPECT_EQ(r.at("rmse").size(), 2u);
  for (const char* k : {"interp_rmse", "extrap_rmse", "test_recon_mse", "avg_jerk_mean"}) {
    EXPECT_TRUE(std::isfinite(r.at(k).get<double>())) << k;
  }
  const std::string curves = slurp(run() / "error-curves.csv");
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 13);
  const std::string lat = slurp(run() / "latent-series.csv");
  EXPECT_EQ(lat.rfind("trajectory,time,z0,z1,z2\n", 0), 0u);
  EXPECT_EQ(std::count(lat.begin(), lat.end(), '\n'), 1 + 2 * 12);
}

TEST_F(Pipeline, PlotsCoverAllFourFigures) {
  for (const char* f : {"error-curve", "latent-series", "loss-history", "lambda-sweep"}) {
    const std::string svg = slurp(run() / "plots" / (std::string(f) + ".svg"));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u) << f;
  }
  for (const char* f : {"error-curve.csv", "latent-jerk.csv", "loss-history.csv", "lambda-sweep.csv"}) {
    EXPECT_TRUE(fs::exists(run() / "plots" / f)) << f;
  }
  const std::string svg = slurp(run() / "plots" / "error-curve.svg");
  EXPECT_NE(svg.find("extrapolation"), std::string::npos);
  EXPECT_NE(slurp(run() / "plots" / "lambda-sweep.svg").find("min MSE"), std::string::npos);
  EXPECT_EQ(cli("plot run", root()).code, 3) << "existing figures need --force";
  EXPECT_EQ(cli("plot run --force", root()).code, 0);
}

TEST_F(Pipeline, PredictWritesFieldsAtRequestedResolution) {
  std::vector<float> u0(16);
  for (int i = 0; i < 16; ++i) u0[i] = static_cast<float>(std::sin(2 * M_PI * i / 16.0));
  jerkrom::store::write_raw_field(root() / "u0.bin", u0);
  const CliResult r = cli("predict --ckpt run/checkpoint-stage2 --data run/dataset --init u0.bin --times 0,0.5,3 "
                          "--res 64 --run-dir pred",
                          root());
  ASSERT_EQ(r.code, 0) << r.err;
  const json f = json::parse(slurp(root() / "pred" / "forecast" / "forecast.json"));
  ASSERT_EQ(f.at("fields").size(), 3u);
  EXPECT_EQ(f.at("resolution"), 64);
  for (const auto& name : f.at("fields")) {
    const auto v = jerkrom::store::read_raw_field(root() / "pred" / "forecast" / name.get<std::string>(), 64);
    for (float x : v) EXPECT_TRUE(std::isfinite(x));
  }

  jerkrom::store::write_raw_field(root() / "short.bin", std::vector<float>(15, 0.0f));
  EXPECT_EQ(cli("predict --ckpt run/checkpoint-stage2 --data run/dataset --init short.bin --run-dir p2", root()).code,
            3);
}

TEST_F(Pipeline, InputsAreValidated) {
  CliResult r = cli("eval --data run/dataset --ckpt run/checkpoint-stage1 --run-dir e1", root());
  EXPECT_EQ(r.code, 3) << "eval needs a stage-II checkpoint";
  r = cli("encode --data run/dataset --ckpt run/checkpoint-stage1 --set model.latent_dim=5 --run-dir e2", root());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("model"), std::string::npos) << r.err;
  r = cli("encode --data run/dataset --ckpt run/checkpoint-stage1 --expect-fingerprint 0000000000000000 --run-dir e3",
          root());
  EXPECT_EQ(r.code, 3);
  r = cli("encode --data run/dataset --ckpt run/checkpoint-stage1 --expect-fingerprint 0000000000000000 "
          "--allow-mismatch --run-dir e4",
          root());
  EXPECT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(cli("train-ae --data run/dataset --config toy.json --set train.lambda=0.5 --run-dir other -q", root()).code, 0);
  r = cli("train-ode --ckpt other/checkpoint-stage1 --latents run/latents --run-dir e5", root());
  EXPECT_EQ(r.code, 3) << "latents encoded by another checkpoint";
  EXPECT_NE(r.err.find("run/latents"), std::string::npos) << r.err;
  r = cli("inspect run/nothing", root());
  EXPECT_EQ(r.code, 3);
  r = cli("inspect run/checkpoint-stage2", root());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("checkpoint"), std::string::npos);
}
