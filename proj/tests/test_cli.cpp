#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(DROOPGUARD_CLI) + " -q " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.output += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("droopguard_cli_" + name);
  fs::remove_all(p);
  return p;
}

// Two tiny iterations on the default training preset.
const char* kTinyTrain = " --iterations 2 --set agent.batch=40 agent.minibatch=20 ";

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("eval").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, ShowConfig) {
  const auto r = cli("show-config -c eval_45pct_noon --set agent.lr=0.002");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("lr = 0.002"), std::string::npos);
  EXPECT_NE(r.output.find("fraction_min = 0.45"), std::string::npos);
  EXPECT_EQ(cli("show-config --set agent.nope=1").code, 2);
  EXPECT_EQ(cli("show-config -c no_such_preset").code, 2);
}

TEST(Cli, ValidateFeeder) {
  const auto ok = cli("validate-feeder " + std::string(DROOPGUARD_DATA_DIR) + "/feeders/ieee37_balanced.feeder");
  EXPECT_EQ(ok.code, 0) << ok.output;
  const auto bad = cli("validate-feeder /nonexistent/thing.feeder");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("/nonexistent/thing.feeder"), std::string::npos) << bad.output;
}

TEST(Cli, MissingFeederNamesPath) {
  const auto out = scratch("missing");
  const auto r = cli("train -o " + out.string() + kTinyTrain + " scenario.feeder=/nowhere/grid.feeder");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("/nowhere/grid.feeder"), std::string::npos) << r.output;
}

TEST(Cli, NoactEval) {
  const auto out = scratch("noact");
  const auto r = cli("eval -p eval_45pct_noact -o " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"episode.csv", "buses.csv", "summary.json", "config.ini", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto s = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(s["policy"], "null");
  EXPECT_GT(s["y"]["during_mean"].get<double>(), 1.0);
  EXPECT_EQ(cli("eval -p eval_45pct_noon -o " + out.string()).code, 2);  // needs a checkpoint

  const auto plot = out / "plot";
  const auto p = cli("plotdata " + (out / "episode.csv").string() + " -o " + plot.string());
  ASSERT_EQ(p.code, 0) << p.output;
  for (const char* f : {"voltage.csv", "oscillation.csv", "action.csv", "reward.csv"}) {
    EXPECT_TRUE(fs::exists(plot / f)) << f;
  }
  fs::remove_all(out);
}

TEST(Cli, PlotdataRejectsEmptyCsv) {
  const auto dir = scratch("empty");
  fs::create_directories(dir);
  std::ofstream(dir / "episode.csv").close();
  const auto r = cli("plotdata " + (dir / "episode.csv").string() + " -o " + (dir / "plot").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "plot"));
  fs::remove_all(dir);
}

TEST(Cli, DeterministicTrainingRepeats) {
  const auto a = scratch("train_a"), b = scratch("train_b");
  const auto ra = cli("train --deterministic --seed 5 -o " + a.string() + kTinyTrain);
  ASSERT_EQ(ra.code, 0) << ra.output;
  const auto rb = cli("train --deterministic --seed 5 -o " + b.string() + kTinyTrain);
  ASSERT_EQ(rb.code, 0) << rb.output;
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
  const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_TRUE(m.contains("inputs"));

  // The checkpoint drives an evaluation episode in both policy modes.
  const auto ev = scratch("train_eval");
  const auto re = cli("eval -p eval_20pct_9am --checkpoint " + (a / "checkpoint.bin").string() + " -o " +
                      ev.string());
  EXPECT_EQ(re.code, 0) << re.output;
  EXPECT_EQ(cli("eval -p eval_20pct_9am --mode aggregate --checkpoint " + (a / "checkpoint.bin").string() +
                " -o " + ev.string())
                .code,
            0);
  // A checkpoint built for another action grid is refused.
  EXPECT_EQ(cli("eval -p eval_20pct_9am --set env.action_step=0.025 --checkpoint " +
                (a / "checkpoint.bin").string() + " -o " + ev.string())
                .code,
            2);
  for (const auto& d : {a, b, ev}) fs::remove_all(d);
}

TEST(Cli, ResumeContinues) {
  const auto a = scratch("resume");
  ASSERT_EQ(cli("train --deterministic --seed 3 -o " + a.string() + kTinyTrain).code, 0);
  const auto r = cli("train --deterministic --seed 3 --resume -o " + a.string() +
                     " --iterations 3 --set agent.batch=40 agent.minibatch=20");
  EXPECT_EQ(r.code, 0) << r.output;
  std::ifstream in(a / "metrics.csv");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 1 + 3);
  fs::remove_all(a);
}
