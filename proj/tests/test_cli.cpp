#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <exrank/cli.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "exrank_cli_test";

const std::string kSmall =
    " --preset desk --k 2 --m 8 --ratio 0.25 --dim 8 --dim-retriever 8 --epochs-retriever 1 --epochs-lm 1"
    " --t 1 --gen-len 12 --max-len 96";

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Result run(const std::string& args) {
  const auto out = kRoot / "stdout.txt";
  const auto err = kRoot / "stderr.txt";
  const std::string cmd =
      std::string(EXRANK_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    auto r = run("gen-data --train 40 --test 10 --seed 7 --out " + (kRoot / "data").string());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }

  static std::string data() { return " --data " + (kRoot / "data").string(); }
  static std::string out(const std::string& name) { return " --out " + (kRoot / name).string(); }
};

}  // namespace

TEST_F(Cli, NoSubcommandIsUsageError) {
  auto r = run("");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen-data"), std::string::npos);
}

TEST_F(Cli, UnknownFlagAndBadValuesAreUsageErrors) {
  EXPECT_EQ(run("evaluate --no-such-flag 3").code, 1);
  EXPECT_EQ(run("evaluate --ratio 2" + data()).code, 1);
  EXPECT_EQ(run("evaluate --k many" + data()).code, 1);
  EXPECT_EQ(run("evaluate --mode sideways" + data()).code, 1);
  EXPECT_EQ(run("evaluate --preset huge" + data()).code, 1);
  EXPECT_EQ(run("evaluate --data " + (kRoot / "nowhere").string()).code, 1);
}

TEST_F(Cli, RuntimeFailureExitsTwo) {
  std::ofstream(kRoot / "broken.ckpt") << "not a checkpoint";
  auto r = run("evaluate" + kSmall + data() + out("broken") + " --scorer " + (kRoot / "broken.ckpt").string() +
               " --mode no_example");
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST_F(Cli, GenDataWritesCorpusAndManifest) {
  EXPECT_TRUE(fs::exists(kRoot / "data" / "train.jsonl"));
  EXPECT_TRUE(fs::exists(kRoot / "data" / "test.jsonl"));
  auto j = nlohmann::json::parse(slurp(kRoot / "data" / "run.json"));
  EXPECT_EQ(j["command"], "gen-data");
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["args"]["train"], "40");
  auto again = run("gen-data --train 40 --test 10 --seed 7" + out("data2"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(kRoot / "data" / "train.jsonl"), slurp(kRoot / "data2" / "train.jsonl"));
}

TEST_F(Cli, EvaluateFrozenLmAndReplay) {
  auto r = run("evaluate --mode frozen_lm" + kSmall + data() + out("eval"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream tsv(kRoot / "eval" / "metrics.tsv");
  std::string header, row;
  std::getline(tsv, header);
  std::getline(tsv, row);
  EXPECT_EQ(header, "mode\ttask\tk\tprecision\trecall\tf1\taccuracy\tparse_failures");
  std::istringstream fields(row);
  std::string mode, task;
  std::size_t k = 0;
  double p = -1, rc = -1, f1 = -1;
  fields >> mode >> task >> k >> p >> rc >> f1;
  EXPECT_EQ(mode, "frozen_lm");
  EXPECT_EQ(k, 2u);
  EXPECT_GE(f1, 0.0);
  EXPECT_LE(f1, 1.0);

  std::ifstream preds(kRoot / "eval" / "predictions.jsonl");
  std::size_t n = 0;
  for (std::string line; std::getline(preds, line); ++n) {
    auto j = nlohmann::json::parse(line);
    for (auto key : {"id", "prompt", "raw", "parsed", "gold"}) EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(n, 10u);

  auto manifest = nlohmann::json::parse(slurp(kRoot / "eval" / "run.json"));
  EXPECT_EQ(manifest["config"]["mode"], "frozen_lm");
  EXPECT_EQ(manifest["checkpoints"].size(), 4u);

  // The manifest alone re-executes the run.
  auto replay = run("evaluate --config " + (kRoot / "eval" / "run.json").string() + out("replay"));
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_EQ(slurp(kRoot / "eval" / "metrics.tsv"), slurp(kRoot / "replay" / "metrics.tsv"));
  EXPECT_EQ(slurp(kRoot / "eval" / "predictions.jsonl"), slurp(kRoot / "replay" / "predictions.jsonl"));
}

TEST_F(Cli, FlagBeatsFileBeatsDefault) {
  std::ofstream(kRoot / "base.cfg") << "# overrides\nk = 3\nm = 9\n";
  auto r = run("gen-data --train 20 --test 5 --config " + (kRoot / "base.cfg").string() + " --m 11" + out("prec"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(kRoot / "prec" / "run.json"));
  EXPECT_EQ(j["config"]["k"], "3");
  EXPECT_EQ(j["config"]["m"], "11");
  EXPECT_EQ(j["config"]["t"], "3");
  EXPECT_EQ(j["config"]["lr-lm"], "5.0000000000000002e-05");
}

TEST_F(Cli, AlternateThenInspect) {
  auto r = run("alternate" + kSmall + " --t 2" + data() + out("alt"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (int s = 0; s <= 2; ++s) {
    EXPECT_TRUE(fs::exists(kRoot / "alt" / ("scorer_" + std::to_string(s) + ".ckpt")));
    EXPECT_TRUE(fs::exists(kRoot / "alt" / ("retriever_" + std::to_string(s) + ".ckpt")));
  }
  auto manifest = nlohmann::json::parse(slurp(kRoot / "alt" / "run.json"));
  EXPECT_EQ(manifest["checkpoints"]["scorer_2.ckpt"], exrank::file_sha256(kRoot / "alt" / "scorer_2.ckpt"));

  const std::string ret = " --retriever " + (kRoot / "alt" / "retriever_2.ckpt").string();
  auto q = run("retrieve --query-id 3 --m 5" + ret + data() + out("ret"));
  ASSERT_EQ(q.code, 0) << q.err;
  std::istringstream lines(q.out);
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);)
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++rows;
  EXPECT_EQ(rows, 5u);

  auto self = run("retrieve --query-id 3 --split train --m 39" + ret + data() + out("ret2"));
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_EQ(self.out.find("\n3\t"), std::string::npos);

  const std::string sc = " --scorer " + (kRoot / "alt" / "scorer_2.ckpt").string();
  auto s = run("score --query-id 0 --example-id 5" + sc + data() + out("score"));
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("log_likelihood\t-"), std::string::npos);
  EXPECT_NE(s.out.find("Example 1-"), std::string::npos);
  EXPECT_EQ(run("score --query-id 999" + sc + data() + out("score")).code, 1);

  auto resumed = run("alternate" + kSmall + " --t 2 --resume-from 1" + data() + out("alt"));
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(kRoot / "alt" / "run.json"))["checkpoints"]["scorer_2.ckpt"],
            manifest["checkpoints"]["scorer_2.ckpt"]);
}

TEST_F(Cli, StagewiseTrainingAndSweep) {
  auto tr = run("train-retriever" + kSmall + data() + out("stage"));
  ASSERT_EQ(tr.code, 0) << tr.err;
  const std::string ret = " --retriever " + (kRoot / "stage" / "retriever.ckpt").string();
  auto ft = run("finetune-lm" + kSmall + ret + data() + out("stage"));
  ASSERT_EQ(ft.code, 0) << ft.err;
  const std::string sc = " --scorer " + (kRoot / "stage" / "scorer.ckpt").string();
  auto sw = run("sweep --k-max 3" + kSmall + sc + ret + data() + out("sweep"));
  ASSERT_EQ(sw.code, 0) << sw.err;
  std::ifstream tsv(kRoot / "sweep" / "sweep.tsv");
  std::size_t lines = 0;
  for (std::string line; std::getline(tsv, line);) ++lines;
  EXPECT_EQ(lines, 5u);
  EXPECT_EQ(run("finetune-lm" + kSmall + data() + out("stage")).code, 1);
}

TEST_F(Cli, InProcessEntryPoint) {
  std::ostringstream out, err;
  const char* argv[] = {"exrank", "--help"};
  EXPECT_EQ(exrank::run_cli(2, argv, out, err), 0);
  EXPECT_NE(out.str().find("alternate"), std::string::npos);
  const char* bad[] = {"exrank", "frobnicate"};
  EXPECT_EQ(exrank::run_cli(2, bad, out, err), 1);
}
