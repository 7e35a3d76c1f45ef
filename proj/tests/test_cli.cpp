#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "seqloc/assoc.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const char* binary = SEQLOC_CLI_PATH) {
  const std::string cmd = std::string(binary) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("seqslam --query 1"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, BadInputsExitTwo) {
  const auto dir = scratch("seqloc_cli_inputs");
  {
    std::ofstream(dir / "bad.json") << R"({"unknown_key": 1})";
  }
  EXPECT_EQ(run("--config " + (dir / "bad.json").string() + " simulate --out " + (dir / "ds").string()), 2);
  EXPECT_EQ(run("graph --dataset " + (dir / "missing").string() + " --out " + (dir / "g.json").string()), 2);
  fs::remove_all(dir);
}

TEST(Cli, SimulateAndDetect) {
  const auto dir = scratch("seqloc_cli_sim");
  ASSERT_EQ(run("--out-dir " + dir.string() + " simulate --experiences 2 --frames 20 --maps"), 0);
  EXPECT_TRUE(fs::exists(dir / "dataset" / "meta.json"));
  EXPECT_TRUE(fs::exists(dir / "dataset" / "exp_1" / "frame_0.slfm"));
  ASSERT_EQ(run("detect --map " + (dir / "dataset" / "exp_0" / "frame_3.slfm").string() + " --out " +
                (dir / "kp.csv").string()),
            0);
  std::ifstream in(dir / "kp.csv");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 1 + 6 * 8);
  fs::remove_all(dir);
}

TEST(Cli, StageFailureExitsThree) {
  // A graph whose only edge has nothing but rejected matches cannot be sampled.
  const auto dir = scratch("seqloc_cli_stage");
  seqloc::ExperienceGraph g;
  g.vertices = {0, 1};
  g.k = 1;
  seqloc::GraphEdge e;
  e.query = 1;
  e.ref = 0;
  e.cost = 1;
  e.match_file = "matches_1_0.csv";
  e.matches.query_id = 1;
  e.matches.ref_size = 3;
  for (int f = 0; f < 3; ++f) e.matches.entries.push_back({f, f, seqloc::MatchStatus::Rejected, 1.0, 0});
  g.edges.push_back(e);
  seqloc::write_graph(g, dir / "graph.json", {{0, 3}, {1, 3}});
  EXPECT_EQ(run("sample --graph " + (dir / "graph.json").string() + " --out " + (dir / "p.csv").string()), 3);
  fs::remove_all(dir);
}

TEST(Cli, EvalNeedsGroundTruthBuild) {
  const auto dir = scratch("seqloc_cli_nogt");
  ASSERT_EQ(run("--out-dir " + dir.string() + " simulate --experiences 2 --frames 20", SEQLOC_NOGT_PATH), 0);
  {
    std::ofstream(dir / "pairs.csv") << "exp_a,frame_a,exp_b,frame_b\n1,3,0,3\n";
  }
  EXPECT_EQ(run("eval --dataset " + (dir / "dataset").string() + " --pairs " + (dir / "pairs.csv").string() +
                    " --out " + (dir / "e.csv").string(),
                SEQLOC_NOGT_PATH),
            2);
  fs::remove_all(dir);
}
