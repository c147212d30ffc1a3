#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "maxbm/engine.hpp"
#include "maxbm/experiments.hpp"

using namespace maxbm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("maxbm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file(dir / "karate.txt", datasets::kKarateEdges);
    write_file(dir / "karate_labels.csv", datasets::kKarateLabels);
  }
  void TearDown() override { fs::remove_all(dir); }

  Outcome run(const std::string& args) const {
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(MAXBM_CLI) + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                            err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(err)};
  }

  std::string p(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

std::vector<std::vector<std::string>> csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_F(Cli, BadFlagsExitTwo) {
  auto r = run("fit --bogus");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--out"), std::string::npos) << r.err;
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("active --strategy psychic --out x.csv").code, 2);
  EXPECT_EQ(run("fit --edges /nonexistent --out m.json").code, 2);
}

TEST_F(Cli, RuntimeFailureExitsOne) {
  write_file(dir / "bad.txt", "a b c\n");
  auto r = run("fit --edges " + p("bad.txt") + " --labels " + p("karate_labels.csv") + " --out " + p("m.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "m.json"));
}

TEST_F(Cli, FitThenRoles) {
  ASSERT_EQ(run("fit --edges " + p("karate.txt") + " --labels " + p("karate_labels.csv") + " --k 4 --seed 3 --out " +
                p("model.json"))
                .code,
            0);
  const auto snap = snapshot_from_json(nlohmann::json::parse(read_file(dir / "model.json")));
  EXPECT_EQ(snap.model.hp.K, 4u);
  EXPECT_EQ(snap.labels.acquired().size(), 34u);

  ASSERT_EQ(run("roles " + p("model.json") + " --matrix-out " + p("roles.csv") + " --mixtures-out " + p("mix.csv")).code,
            0);
  const auto mix = csv(read_file(dir / "mix.csv"));
  ASSERT_EQ(mix.size(), 35u);
  EXPECT_EQ(mix[0].size(), 5u);
  for (std::size_t r = 1; r < mix.size(); ++r) {
    ASSERT_EQ(mix[r].size(), 5u);
    double sum = 0.0;
    for (std::size_t k = 1; k < 5; ++k) sum += std::stod(mix[r][k]);
    EXPECT_NEAR(sum, 1.0, 1e-9) << mix[r][0];
  }
  const auto roles = csv(read_file(dir / "roles.csv"));
  ASSERT_EQ(roles.size(), 5u);
  double total = 0.0;
  for (std::size_t r = 1; r < roles.size(); ++r)
    for (std::size_t k = 1; k < roles[r].size(); ++k) total += std::stod(roles[r][k]);
  EXPECT_NEAR(total, 1.0, 1e-9);

  EXPECT_EQ(run("roles " + p("model.json")).code, 0);
  EXPECT_NE(read_file(dir / "stdout.txt").find("node,role_0"), std::string::npos);
}

TEST_F(Cli, ActiveWritesCurves) {
  ASSERT_EQ(run("active --edges " + p("karate.txt") + " --labels " + p("karate_labels.csv") +
                " --strategy margin --budget 2 --seeds 2 --out " + p("curve.csv"))
                .code,
            0);
  const auto rows = csv(read_file(dir / "curve.csv"));
  ASSERT_EQ(rows.size(), 1u + 2u * 3u);
  EXPECT_EQ(rows[0][0], "strategy");
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_EQ(rows[r][0], "margin");
  EXPECT_EQ(run("active --dataset karate --budget 40 --out " + p("c.csv")).code, 1);
}

TEST_F(Cli, BenchFromConfig) {
  write_file(dir / "bench.json", R"({"dataset": "karate", "budget": 1, "seeds": [0, 1],
                                      "strategies": ["random", "degree"], "max_outer": 20, "out": "res.csv"})");
  ASSERT_EQ(run("bench " + p("bench.json")).code, 0);
  const auto table = load_results(dir / "res.csv");
  EXPECT_EQ(table.runs.size(), 8u);
  EXPECT_EQ(table.aggregates.size(), 4u);
  ASSERT_EQ(run("bench " + p("bench.json") + " --out " + p("other.csv")).code, 0);
  EXPECT_EQ(read_file(dir / "other.csv"), read_file(dir / "res.csv"));

  write_file(dir / "broken.json", R"({"dataset": "word"})");
  EXPECT_EQ(run("bench " + p("broken.json")).code, 1);
}
