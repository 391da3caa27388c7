#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "oracles.hpp"
#include "usspine/annotations.hpp"

using namespace usspine;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(USSPINE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("eval --pred x.csv"), 2);
  EXPECT_EQ(run("ablate --config a.ini --out b --component detector --reps 0"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, ConfigErrorsExitOne) {
  oracle::TempDir dir("cli_cfg");
  {
    std::ofstream(dir / "bad.ini") << "[detector]\nbatchsize = 4\n";
  }
  EXPECT_EQ(run("phantom --config " + (dir / "bad.ini").string() + " --out " + (dir / "o").string()), 1);
  EXPECT_EQ(run("phantom --config " + (dir / "missing.ini").string() + " --out " + (dir / "o").string()), 1);
  EXPECT_FALSE(std::filesystem::exists(dir / "o"));
}

TEST(Cli, EvalOnIdenticalFilesIsPerfect) {
  oracle::TempDir dir("cli_eval");
  oracle::LandmarkGenerator gen(4);
  AnnotationMap truth;
  std::vector<DetectionResult> pred;
  for (int k = 0; k < 12; ++k) {
    SliceAnnotation a;
    a.landmarks = gen.vertebra(3.0);
    a.labels = {k % 2 == 0, k % 3 != 0, true};
    truth[k] = a;
    pred.push_back({a.landmarks, a.labels, {0.9, 0.9, 0.9}});
  }
  write_annotations(truth, dir / "truth.csv");
  write_detections(pred, dir / "pred.csv");
  ASSERT_EQ(run("eval --pred " + (dir / "pred.csv").string() + " --truth " + (dir / "truth.csv").string() +
                " --out " + (dir / "m.csv").string()),
            0);
  const auto m = slurp(dir / "m.csv");
  EXPECT_NE(m.find("sp,100.0,100.0,100.0,100.0,"), std::string::npos) << m;
  EXPECT_NE(m.find("pck,100.0"), std::string::npos) << m;

  // A prediction file that skips an annotated slice is a data error.
  pred.pop_back();
  write_detections(pred, dir / "short.csv");
  EXPECT_EQ(run("eval --pred " + (dir / "short.csv").string() + " --truth " + (dir / "truth.csv").string()), 1);
}
