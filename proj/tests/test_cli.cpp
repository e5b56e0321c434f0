#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"
#include "windfc/cli.hpp"

using windfc::testing::slurp;
using windfc::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = windfc::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

// Small-but-real model settings so the end-to-end runs stay quick.
const std::vector<std::string> kSmall = {"--k",      "3", "--input-length", "12", "--hidden", "8", "--embed-dim", "4",
                                         "--head-hidden", "8", "--epochs", "2", "--train-days", "10"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
  TempDir dir("cli-synth");
  const auto a = run({"synth", "--turbines", "20", "--days", "120", "--seed", "7", "--out-dir", dir / "a"});
  const auto b = run({"synth", "--turbines", "20", "--days", "120", "--seed", "7", "--out-dir", dir / "b"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "a/layout.csv"), slurp(dir / "b/layout.csv"));
  EXPECT_EQ(slurp(dir / "a/series.csv"), slurp(dir / "b/series.csv"));
  EXPECT_EQ(lines(slurp(dir / "a/series.csv")).size(), 1u + 20u * 120u * 24u);
  EXPECT_TRUE(std::filesystem::exists(dir / "a/manifest-synth.json"));
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto r = run({"synth", "--bogus-flag", "1", "--out-dir", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus-flag"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST(Cli, HelpListsEveryFlag) {
  const auto r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const auto& d : windfc::setting_docs())
    EXPECT_NE(r.out.find(windfc::cli::flag_name(d.key)), std::string::npos) << d.key;
}

TEST(Cli, UnknownConfigKeyIsUsageError) {
  TempDir dir("cli-cfg");
  ASSERT_EQ(run({"synth", "--turbines", "4", "--days", "12", "--out-dir", dir.path().string()}).code, 0);
  std::ofstream(dir / "bad.cfg") << "hidden = 8\nlearning_rat = 0.1\n";
  const auto r = run({"train", "--layout", dir / "layout.csv", "--series", dir / "series.csv", "--config",
                      dir / "bad.cfg", "--out-dir", dir / "run"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitOne) {
  TempDir dir("cli-rt");
  std::ofstream(dir / "layout.csv") << "turbine_id,x,y\nA,0,0\nB,1,0\n";
  std::ofstream(dir / "series.csv") << "timestamp,turbine_id,speed\n2021-01-01T00:00Z,C,3\n";
  const auto r = run({"acf", "--layout", dir / "layout.csv", "--series", dir / "series.csv", "--out", dir / "a.csv"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown turbine_id 'C'"), std::string::npos) << r.err;
}

TEST(Cli, EndToEndPipeline) {
  TempDir dir("cli-e2e");
  const std::string d = dir.path().string();
  ASSERT_EQ(run({"synth", "--turbines", "6", "--days", "16", "--seed", "3", "--out-dir", d}).code, 0);
  const std::string layout = dir / "layout.csv", series = dir / "series.csv";
  const std::string layout_before = slurp(layout), series_before = slurp(series);

  const auto g = run({"graph", "--layout", layout, "--k", "3", "--out", dir / "nbr.csv"});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(lines(slurp(dir / "nbr.csv")).size(), 1u + 6u * 3u);

  const auto tr = run(with({"train", "--layout", layout, "--series", series, "--out-dir", dir / "run"}, kSmall));
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_EQ(lines(slurp(dir / "run/train_log.csv")).size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "run/manifest-train.json"));

  const std::string ck = dir / "run/checkpoint.json";
  const auto ev = run({"evaluate", "--checkpoint", ck, "--layout", layout, "--series", series, "--out-dir",
                       dir / "eval"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto mae = lines(slurp(dir / "eval/metrics_mae.csv"));
  ASSERT_EQ(mae.size(), 3u);
  EXPECT_EQ(mae[0], "method,h1,h2,h3,h4,h5,h6,h7,h8,h9,h10,h11,h12");
  EXPECT_EQ(mae[1].rfind("PER,", 0), 0u);
  EXPECT_EQ(mae[2].rfind("GRU,", 0), 0u);
  EXPECT_EQ(lines(slurp(dir / "eval/metrics_rmse.csv")).size(), 3u);

  const auto fc = run({"forecast", "--checkpoint", ck, "--layout", layout, "--series", series, "--out",
                       dir / "fc.csv"});
  ASSERT_EQ(fc.code, 0) << fc.err;
  const auto fl = lines(slurp(dir / "fc.csv"));
  EXPECT_EQ(fl[0], "turbine_id,origin,h,target_time,forecast");
  EXPECT_EQ(fl.size(), 1u + 6u * 12u);

  const auto bl = run(with({"baseline", "--layout", layout, "--series", series, "--out-dir", dir / "base"}, kSmall));
  ASSERT_EQ(bl.code, 0) << bl.err;
  const auto bm = lines(slurp(dir / "base/metrics_mae.csv"));
  ASSERT_EQ(bm.size(), 4u);
  EXPECT_EQ(bm[1].rfind("PER,", 0), 0u);
  EXPECT_EQ(bm[2].rfind("MLP,", 0), 0u);
  EXPECT_EQ(bm[3].rfind("RNN,", 0), 0u);

  const auto ac = run({"acf", "--layout", layout, "--series", series, "--max-lag", "24", "--out", dir / "acf.csv"});
  ASSERT_EQ(ac.code, 0) << ac.err;
  EXPECT_EQ(lines(slurp(dir / "acf.csv")).size(), 26u);

  EXPECT_EQ(slurp(layout), layout_before);
  EXPECT_EQ(slurp(series), series_before);
}

TEST(Cli, MismatchedCheckpointNamesBothDigests) {
  TempDir dir("cli-mismatch");
  ASSERT_EQ(run({"synth", "--turbines", "5", "--days", "14", "--seed", "1", "--out-dir", dir / "a"}).code, 0);
  ASSERT_EQ(run({"synth", "--turbines", "5", "--days", "14", "--seed", "2", "--out-dir", dir / "b"}).code, 0);
  const auto tr = run(with({"train", "--layout", dir / "a/layout.csv", "--series", dir / "a/series.csv",
                            "--out-dir", dir / "run"},
                           {"--k", "3", "--input-length", "12", "--hidden", "4", "--embed-dim", "2", "--head-hidden",
                            "4", "--epochs", "0", "--train-days", "10"}));
  ASSERT_EQ(tr.code, 0) << tr.err;
  const auto ev = run({"evaluate", "--checkpoint", dir / "run/checkpoint.json", "--layout", dir / "b/layout.csv",
                       "--series", dir / "b/series.csv", "--out-dir", dir / "eval"});
  EXPECT_EQ(ev.code, 1);
  const auto a_digest = windfc::build_knn(windfc::read_layout(dir / "a/layout.csv"), 3).digest(
      windfc::read_layout(dir / "a/layout.csv"));
  const auto b_layout = windfc::read_layout(dir / "b/layout.csv");
  const auto b_digest = windfc::build_knn(b_layout, 3).digest(b_layout);
  EXPECT_NE(ev.err.find(a_digest), std::string::npos) << ev.err;
  EXPECT_NE(ev.err.find(b_digest), std::string::npos) << ev.err;
}

TEST(Cli, OutputMayNotOverwriteInput) {
  TempDir dir("cli-guard");
  ASSERT_EQ(run({"synth", "--turbines", "3", "--days", "3", "--out-dir", dir.path().string()}).code, 0);
  const std::string before = slurp(dir / "series.csv");
  const auto r = run({"acf", "--layout", dir / "layout.csv", "--series", dir / "series.csv", "--max-lag", "3",
                      "--out", dir / "series.csv"});
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(slurp(dir / "series.csv"), before);
}
