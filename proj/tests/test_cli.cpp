#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int status = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(UNITE_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

class Cli : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::TempDir() + "unite_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream cfg(dir_ + "/tiny.cfg");
    cfg << "# tiny model for fast tests\n"
           "d_model = 8\nn_layers = 1\nn_heads = 2\nd_ffn = 16\nmax_len = 64\n"
           "batch_size = 4\nsteps = 3\ndev_min = 4\ntag = tiny\n";
    cfg.close();
    const auto toy = run("--out " + dir_ + "/toy toy --sources 10 --hyps-per-source 3 --test-sources 4 --parallel 8");
    ASSERT_EQ(toy.status, 0) << toy.output;
    const auto pre = run("--config " + cfg_() + " --out " + dir_ + "/pre pretrain --train " + dir_ + "/toy/train.jsonl");
    ASSERT_EQ(pre.status, 0) << pre.output;
  }
  static std::string cfg_() { return dir_ + "/tiny.cfg"; }
  static std::string ckpt() { return dir_ + "/pre/tiny-step3.ckpt"; }
  static std::string dir_;
};

std::string Cli::dir_;

TEST_F(Cli, ToyWritesAllFiles) {
  EXPECT_EQ(line_count(dir_ + "/toy/train.jsonl"), 30u);
  EXPECT_EQ(line_count(dir_ + "/toy/test.jsonl"), 12u);
  EXPECT_EQ(line_count(dir_ + "/toy/parallel.jsonl"), 8u);
  EXPECT_TRUE(fs::exists(dir_ + "/toy/pairs.jsonl"));
}

TEST_F(Cli, PretrainWritesCheckpointLogAndVocab) {
  EXPECT_TRUE(fs::exists(ckpt()));
  EXPECT_EQ(line_count(dir_ + "/pre/tiny-log.jsonl"), 3u);
  EXPECT_TRUE(fs::exists(dir_ + "/pre/vocab.txt"));
}

TEST_F(Cli, SynthesizeThenLabelWithOverlap) {
  const std::string out = dir_ + "/syn";
  auto r = run("--seed 3 --out " + out + " synthesize --input " + dir_ + "/toy/parallel.jsonl");
  ASSERT_EQ(r.status, 0) << r.output;
  ASSERT_EQ(line_count(out + "/synthetic.jsonl"), 8u);
  r = run("--out " + out + " label --input " + out + "/synthetic.jsonl --scorer overlap");
  ASSERT_EQ(r.status, 0) << r.output;
  std::ifstream in(out + "/labeled.jsonl");
  std::string line;
  double sum = 0.0;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ASSERT_TRUE(j.contains("hyp") && j.contains("src") && j.contains("ref"));
    sum += j["score"].get<double>();
    ++n;
  }
  EXPECT_EQ(n, 8u);
  EXPECT_NEAR(sum, 0.0, 1e-9);
}

TEST_F(Cli, EnsembleOfIdenticalCheckpointsMatchesSingle) {
  const std::string input = dir_ + "/toy/test.jsonl";
  auto one = run("--out " + dir_ + "/lab1 label --input " + input + " --checkpoint " + ckpt());
  ASSERT_EQ(one.status, 0) << one.output;
  auto three = run("--out " + dir_ + "/lab3 label --input " + input + " --ensemble 3 --checkpoint " + ckpt() + " " +
                   ckpt() + " " + ckpt());
  ASSERT_EQ(three.status, 0) << three.output;
  EXPECT_EQ(slurp(dir_ + "/lab1/labeled.jsonl"), slurp(dir_ + "/lab3/labeled.jsonl"));
  auto wrong = run("--out " + dir_ + "/lab2 label --input " + input + " --ensemble 2 --checkpoint " + ckpt());
  EXPECT_NE(wrong.status, 0);
}

TEST_F(Cli, ScoreIsDeterministic) {
  const std::string input = dir_ + "/toy/test.jsonl";
  auto a = run("score --input " + input + " --checkpoint " + ckpt() + " --task src+ref");
  auto b = run("score --input " + input + " --checkpoint " + ckpt() + " --task src+ref");
  ASSERT_EQ(a.status, 0) << a.output;
  EXPECT_EQ(a.output, b.output);
  auto hard = run("score --input " + input + " --checkpoint " + ckpt() + " --task src+ref --mask no-src-to-hyp");
  ASSERT_EQ(hard.status, 0);
  EXPECT_NE(a.output, hard.output);
  auto to_file = run("--out " + dir_ + "/sc score --input " + input + " --checkpoint " + ckpt() + " --task src+ref");
  ASSERT_EQ(to_file.status, 0);
  EXPECT_EQ(slurp(dir_ + "/sc/scores.jsonl"), a.output);
}

TEST_F(Cli, ScoreRejectsMissingSegment) {
  const std::string path = dir_ + "/src_only.jsonl";
  std::ofstream(path) << R"({"hyp": "t1 t2", "src": "s1 s2"})" << '\n';
  const auto r = run("score --input " + path + " --checkpoint " + ckpt() + " --task ref");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("format/segment mismatch"), std::string::npos) << r.output;
}

TEST_F(Cli, FinetuneFromCheckpoint) {
  const auto r = run("--config " + cfg_() + " --set tag=ft --out " + dir_ + "/ft finetune --train " + dir_ +
                     "/toy/train.jsonl --init " + ckpt());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ + "/ft/ft-step6.ckpt"));
  const auto bad = run("--config " + cfg_() + " --set d_model=12 --out " + dir_ + "/ft2 finetune --train " + dir_ +
                       "/toy/train.jsonl --init " + ckpt());
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.output.find("config/checkpoint shape mismatch"), std::string::npos) << bad.output;
}

TEST_F(Cli, EvaluateKendallAndPearson) {
  auto k = run("--out " + dir_ + "/ev evaluate --checkpoint " + ckpt() + " --hyps " + dir_ + "/toy/test.jsonl --pairs " +
               dir_ + "/toy/pairs.jsonl --task ref");
  ASSERT_EQ(k.status, 0) << k.output;
  EXPECT_NE(k.output.find("toy-en"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(dir_ + "/ev/report.json"));
  EXPECT_EQ(j["measure"], "kendall");
  const double tau = j["average"].get<double>();
  EXPECT_GE(tau, -1.0);
  EXPECT_LE(tau, 1.0);
  auto p = run("evaluate --measure pearson --checkpoint " + ckpt() + " --input " + dir_ + "/toy/test.jsonl --task src");
  ASSERT_EQ(p.status, 0) << p.output;
  EXPECT_NE(p.output.find("Avg."), std::string::npos);
}

TEST(CliStandalone, MaskDumpMatchesGolden) {
  const auto r = run("mask-dump --variant hard --spans 2,2,2");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(r.output, slurp(std::string(UNITE_TEST_DATA) + "/mask_hard_2_2_2.txt"));
  const auto bad = run("mask-dump --variant no-ref-to-src --spans 2,0,2");
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.output.find("mask/format mismatch"), std::string::npos);
}

TEST(CliStandalone, GradCheckPasses) {
  const auto r = run("grad-check --task src+ref --mask no-src-to-hyp");
  EXPECT_EQ(r.status, 0) << r.output;
}

TEST(CliStandalone, UsageErrors) {
  EXPECT_NE(run("no-such-command").status, 0);
  EXPECT_NE(run("score --input /nonexistent.jsonl --checkpoint /nonexistent.ckpt").status, 0);
  EXPECT_NE(run("--set bogus_key=1 mask-dump --variant full --spans 1,1,1").status, 0);
  EXPECT_NE(run("pretrain --train /nonexistent.jsonl").status, 0);
}

}  // namespace
