#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lsnet/cli.hpp"
#include "lsnet/curves.hpp"
#include "lsnet/photometric.hpp"

namespace fs = std::filesystem;
using namespace lsnet;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("lsnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string sub(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenCurvesDeterministic) {
  const Outcome a = run({"gen-curves", "--families", "sine", "--count", "1", "--seed", "7", "--out", sub("a")});
  const Outcome b = run({"--seed", "7", "--out", sub("b"), "gen-curves", "--families", "sine", "--count", "1"});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  ASSERT_EQ(b.code, kExitOk) << b.err;
  EXPECT_EQ(slurp(dir_ / "a" / "curve_00000.json"), slurp(dir_ / "b" / "curve_00000.json"));
  EXPECT_FALSE(fs::exists(dir_ / "a" / "curve_00001.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "curves_manifest.csv"), slurp(dir_ / "b" / "curves_manifest.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "resolved_config.ini"));
}

TEST_F(Cli, GenCurvesEmptyAndInvariants) {
  ASSERT_EQ(run({"gen-curves", "--count", "0", "--out", sub("empty")}).code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "empty" / "curves_manifest.csv"), "index,file,family,seed,a,b\n");

  ASSERT_EQ(run({"gen-curves", "--families", "gaussian", "--count", "100", "--out", sub("g")}).code, kExitOk);
  const CurveFamily f = CurveFamily::standard(CurveTag::Gaussian);
  for (int i = 0; i < 100; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "curve_%05d.json", i);
    const CurveInstance inst = curve_instance_from_json(slurp(dir_ / "g" / name));
    EXPECT_EQ(inst.tag, CurveTag::Gaussian);
    EXPECT_EQ(inst.t.size(), inst.y.size());
    EXPECT_TRUE(all_finite(inst.y));
    EXPECT_GE(inst.truth[1], f.b.lo);
    EXPECT_LE(inst.truth[1], f.b.hi);
    EXPECT_GE(inst.truth[0], f.a.lo);
    EXPECT_LE(inst.truth[0], f.a.hi);
  }
}

TEST_F(Cli, UsageAndIoErrors) {
  EXPECT_EQ(run({"gen-curves", "--families", "cosine", "--out", sub("x")}).code, kExitUsage);
  EXPECT_EQ(run({"gen-curves", "--count", "-3", "--out", sub("x")}).code, kExitUsage);
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"--config", sub("missing.ini"), "gen-curves"}).code, kExitIo);
  fs::create_directories(dir_);
  std::ofstream(dir_ / "blocker") << "x";
  EXPECT_EQ(run({"gen-curves", "--out", sub("blocker/inner")}).code, kExitIo);
  EXPECT_EQ(run({"eval", "--model", sub("none.json"), "--n-test", "1", "--out", sub("e")}).code, kExitIo);
}

TEST_F(Cli, ConfigFileWithOverride) {
  fs::create_directories(dir_);
  std::ofstream(dir_ / "run.ini") << "seed = 11\n[gen-curves]\ncount = 3\nfamilies = sinc\n";
  const Outcome r = run({"--config", sub("run.ini"), "--out", sub("c"), "gen-curves", "--count", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "c" / "curve_00001.json"));
  EXPECT_FALSE(fs::exists(dir_ / "c" / "curve_00002.json"));
  EXPECT_EQ(curve_instance_from_json(slurp(dir_ / "c" / "curve_00000.json")).tag, CurveTag::Sinc);
  const std::string resolved = slurp(dir_ / "c" / "resolved_config.ini");
  EXPECT_NE(resolved.find("seed=11"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("count=2"), std::string::npos) << resolved;
}

TEST_F(Cli, GenScene) {
  const Outcome zero = run({"gen-scene", "--baseline", "0", "--rotation-deg", "0", "--out", sub("z")});
  ASSERT_EQ(zero.code, kExitOk) << zero.err;
  EXPECT_NE(zero.err.find("warning"), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "z" / "target.pgm"), slurp(dir_ / "z" / "source.pgm"));

  ASSERT_EQ(run({"gen-scene", "--out", sub("d")}).code, kExitOk);
  const StereoInstance inst = stereo_instance_from_json(slurp(dir_ / "d" / "scene.json"));
  EXPECT_NO_THROW(inst.validate());
  EXPECT_TRUE(all_finite(inst.inverse_depth.matrix()));
  EXPECT_GE(inst.inverse_depth.minCoeff(), kMinInverseDepth);
  EXPECT_GE(2 * std::count(inst.mask.begin(), inst.mask.end(), char(1)), inst.pixel_count());
  EXPECT_TRUE(fs::exists(dir_ / "d" / "depth.pgm"));

  int degenerate = 0;
  for (int seed = 0; seed < 5; ++seed)
    degenerate += run({"gen-scene", "--baseline", "3", "--seed", std::to_string(seed), "--out", sub("far")}).code ==
                  kExitDegenerateScene;
  EXPECT_GT(degenerate, 0);
}

TEST_F(Cli, TrainResumeAndEval) {
  const Outcome t = run({"train", "--steps", "500", "--batch", "16", "--hidden", "16", "--validate-every", "100",
                     "--log-every", "100", "--quiet", "--out", sub("t")});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const std::string csv = slurp(dir_ / "t" / "training.csv");
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  std::vector<std::pair<int, double>> steps;
  while (std::getline(rows, line)) {
    std::stringstream cells(line);
    std::string step, train, val;
    std::getline(cells, step, ',');
    std::getline(cells, train, ',');
    std::getline(cells, val, ',');
    steps.push_back({std::stoi(step), std::stod(val)});
  }
  ASSERT_EQ(steps.size(), 6u);
  EXPECT_LT(steps.back().second, steps.front().second);

  const Outcome r = run({"train", "--steps", "600", "--batch", "16", "--hidden", "16", "--validate-every", "100",
                     "--log-every", "100", "--quiet", "--resume", sub("t/checkpoint.json"), "--out", sub("t")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string resumed = slurp(dir_ / "t" / "training.csv");
  EXPECT_EQ(resumed.substr(0, csv.size()), csv);
  EXPECT_NE(resumed.find("\n600,"), std::string::npos);

  const Outcome e = run({"eval", "--model", sub("t/model.json"), "--n-test", "8", "--out", sub("e")});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_NE(e.out.find("lsnet"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "e" / "benchmark.csv").find(",lsnet,"), std::string::npos);

  const Outcome lm = run({"eval", "--method", "lm-only", "--n-test", "4", "--out", sub("lm")});
  ASSERT_EQ(lm.code, kExitOk) << lm.err;
  const std::string lm_csv = slurp(dir_ / "lm" / "benchmark.csv");
  EXPECT_EQ(lm_csv.find("lsnet"), std::string::npos);
  EXPECT_EQ(std::count(lm_csv.begin(), lm_csv.end(), '\n'), 1 + 4 * 3 * 16);
}

TEST_F(Cli, CheckpointVersionMismatch) {
  fs::create_directories(dir_);
  std::ofstream(dir_ / "ckpt.json") << "{\"format\": \"lsnet-checkpoint\", \"version\": 99}";
  EXPECT_EQ(run({"train", "--steps", "10", "--quiet", "--resume", sub("ckpt.json"), "--out", sub("t")}).code,
            kExitVersionMismatch);
}

TEST_F(Cli, DeterministicEval) {
  const std::vector<std::string> args = {"eval", "--method", "lm-only", "--n-test", "6", "--deterministic-timing"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", sub("a")});
  b.insert(b.end(), {"--out", sub("b"), "--threads", "2"});
  ASSERT_EQ(run(a).code, kExitOk);
  ASSERT_EQ(run(b).code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "benchmark.csv"), slurp(dir_ / "b" / "benchmark.csv"));
}

TEST_F(Cli, GradCheck) {
  const Outcome ok = run({"gradcheck", "--problem", "curves", "--instances", "20", "--out", sub("g")});
  EXPECT_EQ(ok.code, kExitOk) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  const Outcome bug = run({"gradcheck", "--problem", "curves", "--instances", "5", "--inject-sign-bug", "sinc", "--out", sub("g")});
  EXPECT_EQ(bug.code, kExitCheckFailed);
  EXPECT_NE((bug.out + bug.err).find("sinc"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--problem", "curves", "--instances", "3", "--tol", "0", "--out", sub("g")}).code,
            kExitCheckFailed);
  const Outcome bptt = run({"gradcheck", "--problem", "bptt", "--out", sub("g")});
  EXPECT_EQ(bptt.code, kExitOk) << bptt.out;
}
