#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run ctrm(const std::string& args, bool with_stderr = true) {
  const std::string cmd = std::string(CTRM_CLI) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path workdir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ctrm_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A model small enough for sub-second CLI runs.
const std::string kTiny =
    " -s data.n_samples=12 -s data.holdout=4 -s data.d_v=6 -s data.events_per_video=[2,3]"
    " -s model.encoder.d_model=8 -s model.encoder.n_heads=2 -s model.encoder.ffn_dim=16"
    " -s model.decoder.d_model=8 -s model.decoder.n_heads=2 -s model.decoder.ffn_dim=16"
    " -s model.decoder.n_layers=1 -s train.epochs=2 -s train.batch_size=4 ";

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(ctrm("--help").code, 0);
  EXPECT_EQ(ctrm("").code, 2);
  EXPECT_EQ(ctrm("frobnicate").code, 2);
  EXPECT_EQ(ctrm("gen-data").code, 2);
  EXPECT_EQ(ctrm("grad-check --seeds 0").code, 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = workdir("config");
  const auto r = ctrm("gen-data -o " + (dir / "d.jsonl").string() + " -s data.n_samples=0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("n_samples"), std::string::npos) << r.out;
  EXPECT_EQ(ctrm("gen-data -o " + (dir / "d.jsonl").string() + " -s data.nope=1").code, 2);
  EXPECT_EQ(ctrm("gen-data -o " + (dir / "d.jsonl").string() + " -s data.n_event_types=17").code, 2);
  EXPECT_EQ(ctrm("eval").code, 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const auto dir = workdir("runtime");
  std::ofstream(dir / "bad.jsonl") << "{\"frames\": [[1]], \"caption\": \"ball rolls\"\n";
  const auto r = ctrm("eval --checkpoint " + (dir / "missing.ckpt").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(ctrm("train -o " + (dir / "x.ckpt").string() + " -d " + (dir / "bad.jsonl").string()).code, 1);
}

TEST(Cli, GenDataIsSeedReproducible) {
  const auto dir = workdir("gen");
  ASSERT_EQ(ctrm("gen-data --seed 5 --n-samples 30 -o " + (dir / "a.jsonl").string()).code, 0);
  ASSERT_EQ(ctrm("gen-data -s data.seed=5 -s data.n_samples=30 -o " + (dir / "b.jsonl").string()).code, 0);
  ASSERT_EQ(ctrm("gen-data --seed 6 --n-samples 30 -o " + (dir / "c.jsonl").string()).code, 0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
  const auto stats = ctrm("gen-data --seed 5 --n-samples 30 -o " + (dir / "a.jsonl").string(), false);
  EXPECT_NE(stats.out.find("samples 30"), std::string::npos) << stats.out;
}

TEST(Cli, GradCheckOutput) {
  const auto ok = ctrm("grad-check --seeds 1 --only matmul layer_norm", false);
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("matmul"), std::string::npos);
  EXPECT_NE(ok.out.find("PASS 2 operations"), std::string::npos) << ok.out;
  const auto bad = ctrm("grad-check --seeds 1 --only matmul --corrupt matmul");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_NE(bad.out.find("gradient check failed for matmul"), std::string::npos) << bad.out;
}

TEST(Cli, TrainEvalCaption) {
  const auto dir = workdir("train");
  const auto data = (dir / "d.jsonl").string();
  ASSERT_EQ(ctrm("gen-data" + kTiny + "-o " + data).code, 0);
  const auto ckpt = (dir / "m.ckpt").string();
  const auto train = ctrm("train" + kTiny + "-d " + data + " -o " + ckpt, false);
  ASSERT_EQ(train.code, 0) << train.out;
  const auto trace = nlohmann::json::parse(train.out);
  EXPECT_EQ(trace["stage"], "pretrain");
  EXPECT_EQ(trace["trace"].size(), 2u);

  const auto fine = ctrm("train" + kTiny + "-s train.stage=finetune -d " + data + " --init " + ckpt + " -o " +
                         (dir / "f.ckpt").string() + " --report " + (dir / "f.json").string());
  ASSERT_EQ(fine.code, 0) << fine.out;
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "f.json"))["trace"][0].contains("causal"));

  const auto eval = ctrm("eval" + kTiny + "--checkpoint " + ckpt + " -d " + data, false);
  ASSERT_EQ(eval.code, 0) << eval.out;
  const auto report = nlohmann::json::parse(eval.out);
  for (const char* key : {"bleu4", "rougeL", "cider"}) EXPECT_TRUE(report.contains(key) || report["metrics"].contains(key)) << key;

  const auto cap = ctrm("caption" + kTiny + "--checkpoint " + ckpt + " -d " + data + " -i 1", false);
  ASSERT_EQ(cap.code, 0) << cap.out;
  EXPECT_FALSE(cap.out.empty());
  EXPECT_EQ(ctrm("caption" + kTiny + "--checkpoint " + ckpt + " -d " + data + " -i 99").code, 2);
}

TEST(Cli, PipelineResumesAfterInterruption) {
  const auto dir = workdir("pipeline");
  const std::string args = "pipeline" + kTiny + "-s train.epochs=1 ";
  const auto whole = ctrm(args + "--report " + (dir / "whole.json").string());
  ASSERT_EQ(whole.code, 0) << whole.out;
  for (int i = 0; i < 5 && !fs::exists(dir / "part.json"); ++i) {
    const auto r = ctrm(args + "--checkpoint-dir " + (dir / "ck").string() + " --max-epochs 1 --report " +
                        (dir / "part.json").string());
    ASSERT_EQ(r.code, 0) << r.out;
  }
  ASSERT_TRUE(fs::exists(dir / "part.json"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "part.json")), nlohmann::json::parse(slurp(dir / "whole.json")));
}

TEST(Cli, EvalCorpus) {
  const auto r = ctrm("eval --corpus " + (fs::path(CTRM_TEST_DATA) / "golden_corpus.jsonl").string(), false);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto expected = nlohmann::json::parse(slurp(fs::path(CTRM_TEST_DATA) / "golden_scores.json"));
  const auto got = nlohmann::json::parse(r.out);
  EXPECT_NEAR(got["bleu4"].get<double>(), expected["bleu4"].get<double>(), 1e-9);
  EXPECT_NEAR(got["cider"].get<double>(), expected["cider"].get<double>(), 1e-6);
}

TEST(Cli, MiniConfigPipeline) {
  const auto dir = workdir("mini");
  const auto config = fs::path(CTRM_TEST_DATA) / ".." / ".." / "configs" / "mini.json";
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = ctrm("pipeline -c " + config.string() + " -o " + (dir / "m.ckpt").string(), false);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(secs, 120.0);
  const auto report = nlohmann::json::parse(r.out);
  EXPECT_EQ(report["stages"].size(), 3u);
  EXPECT_GT(report["evaluation"]["bleu4"].get<double>(), 0.0);
  const auto cap = ctrm("caption -c " + config.string() + " --checkpoint " + (dir / "m.ckpt").string() + " -i 0", false);
  EXPECT_EQ(cap.code, 0);
}

TEST(Cli, ZeroLearningRateTrainEvaluatesLikeInitialCheckpoint) {
  const auto dir = workdir("lr0");
  const std::string common = kTiny + "-s train.seed=4 ";
  ASSERT_EQ(ctrm("train" + common + "-s train.epochs=1 -s train.learning_rate=0 -o " + (dir / "a.ckpt").string()).code, 0);
  ASSERT_EQ(ctrm("train" + common + "-s train.epochs=1 -s train.learning_rate=0 -o " + (dir / "b.ckpt").string() +
                 " --init " + (dir / "a.ckpt").string()).code, 0);
  const auto a = ctrm("eval" + common + "--checkpoint " + (dir / "a.ckpt").string(), false);
  const auto b = ctrm("eval" + common + "--checkpoint " + (dir / "b.ckpt").string(), false);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
}
