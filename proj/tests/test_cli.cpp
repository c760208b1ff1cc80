#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tdit/cli.hpp"
#include "tdit/synthdata.hpp"
#include "tdit/training.hpp"

using namespace tdit;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "tdit");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tdit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small model and corpus so a few training steps take milliseconds.
  std::string write_config() const {
    const nlohmann::json j = {
        {"model",
         {{"blocks", 1}, {"model_dim", 8}, {"heads", 1}, {"head_dim", 8}, {"text_dim", 8},
          {"vocab_size", 9}, {"grid", 8}, {"patch", 4}, {"caption_len", 1}, {"max_events", 4},
          {"mlp_ratio", 2}}},
        {"corpus", {{"num_videos", 4}}},
        {"train", {{"total_steps", 3}, {"batch_size", 2}, {"warmup_steps", 2}}},
        {"sample", {{"steps", 8}, {"interval", {1, 4}}}}};
    std::ofstream(path("config.json")) << j.dump(2);
    return path("config.json");
  }

  std::string write_script() const {
    CorpusConfig c;
    c.num_videos = 1;
    c.cut_probability = 1.0;
    save_script(generate_corpus(c).records[0].script, path("script.json"));
    return path("script.json");
  }

  void train_small() {
    const std::string cfg = write_config();
    ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", path("corpus")}).code, kExitOk);
    const auto r = run({"train", "--config", cfg, "--data", path("corpus"), "--out", path("run")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpListsEveryFlag) {
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, kExitOk);
  for (const char* sub : {"gen-data", "train", "sample", "viz-attn", "check-properties", "eval"})
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
  const std::vector<std::pair<std::string, std::vector<std::string>>> flags = {
      {"gen-data", {"--config", "--out", "--seed", "--num-videos"}},
      {"train", {"--config", "--data", "--out", "--mode", "--resume", "--steps", "--lr", "--grad-clip"}},
      {"sample", {"--ckpt", "--script", "--out", "--steps", "--cfg-scale", "--interval", "--seed", "--no-cuts",
                  "--pgm-dir", "--first-frame"}},
      {"viz-attn", {"--script", "--mode", "--L", "--format", "--out"}},
      {"check-properties", {"--trials", "--seed", "--mode", "--report"}},
      {"eval", {"--ckpt", "--data", "--report"}},
  };
  for (const auto& [sub, names] : flags) {
    const auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, kExitOk);
    for (const auto& f : names) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
  }
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"check-properties", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data"}).code, kExitUsage);  // --out is required
  EXPECT_EQ(run({"check-properties", "--trials", "many"}).code, kExitUsage);
}

TEST_F(Cli, BadInputsExitTwo) {
  EXPECT_EQ(run({"sample", "--ckpt", path("none.ckpt"), "--script", path("none.json"), "--out", path("v.json")}).code,
            kExitValidation);
  std::ofstream(path("bad.json")) << "{ not json";
  EXPECT_EQ(run({"gen-data", "--config", path("bad.json"), "--out", path("c")}).code, kExitValidation);
  std::ofstream(path("unknown.json")) << R"({"model": {"wings": 2}})";
  const auto r = run({"gen-data", "--config", path("unknown.json"), "--out", path("c")});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("wings"), std::string::npos);
  EXPECT_EQ(run({"check-properties", "--mode", "hard-mask"}).code, kExitValidation);
  EXPECT_EQ(run({"check-properties", "--dims", "7"}).code, kExitValidation);
  EXPECT_EQ(run({"train", "--data", path("missing"), "--out", path("run")}).code, kExitValidation);
}

TEST_F(Cli, GenDataIsDeterministicAndRecordsConfig) {
  const std::string cfg = write_config();
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", path("a"), "--seed", "5"}).code, kExitOk);
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", path("b"), "--seed", "5"}).code, kExitOk);
  for (const auto& e : fs::directory_iterator(path("a") + "/videos"))
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(path("b")) / "videos" / e.path().filename()));
  const auto rc = nlohmann::json::parse(slurp(path("a") + "/run_config.json"));
  EXPECT_EQ(rc.at("corpus").at("seed"), 5);
  EXPECT_EQ(rc.at("corpus").at("num_videos"), 4);
  EXPECT_EQ(rc.at("command"), "gen-data");
  EXPECT_EQ(read_corpus(path("a")).records.size(), 4u);
}

TEST_F(Cli, CheckPropertiesExitCodes) {
  const auto van = run({"check-properties", "--mode", "vanilla-rope", "--trials", "20", "--report", path("v.json")});
  EXPECT_EQ(van.code, kExitPropertyFailure);
  const auto rep = nlohmann::json::parse(slurp(path("v.json")));
  EXPECT_FALSE(rep.at("bias").at("argmax").at("counterexamples").empty());
  EXPECT_TRUE(fs::exists(path("v.json.run_config.json")));
  EXPECT_EQ(run({"check-properties", "--mode", "rerope", "--probe", "flat", "--dims", "64", "--L", "4", "8",
                 "--trials", "50"})
                .code,
            kExitOk);
  // Gaussian probes break the argmax property for ReRoPE as well.
  EXPECT_EQ(run({"check-properties", "--mode", "rerope", "--trials", "50"}).code, kExitPropertyFailure);
}

TEST_F(Cli, VizAttnWritesOneFilePerLength) {
  const std::string script = write_script();
  const auto r = run({"viz-attn", "--script", script, "--mode", "rerope", "--L", "4", "8", "16", "--format", "csv",
                      "--out", path("viz")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* L : {"4", "8", "16"})
    EXPECT_TRUE(fs::exists(path("viz") + "/bias_rerope_L" + L + ".csv")) << L;
  EXPECT_TRUE(fs::exists(path("viz") + "/run_config.json"));
  EXPECT_EQ(run({"viz-attn", "--script", script, "--format", "png", "--out", path("viz2")}).code, kExitValidation);
  EXPECT_FALSE(fs::exists(path("viz2")));
}

TEST_F(Cli, TrainWritesCheckpointLogAndConfig) {
  train_small();
  for (const char* f : {"model.ckpt", "optimizer.ckpt", "loss.csv", "run_config.json"})
    EXPECT_TRUE(fs::exists(path("run") + "/" + f)) << f;
  std::ifstream log(path("run") + "/loss.csv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,loss,grad_norm");
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 3u);
  const auto rc = nlohmann::json::parse(slurp(path("run") + "/run_config.json"));
  EXPECT_EQ(rc.at("train").at("total_steps"), 3);
  EXPECT_EQ(rc.at("model").at("model_dim"), 8);
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  const std::string cfg = write_config();
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", path("corpus")}).code, kExitOk);
  ASSERT_EQ(run({"train", "--config", cfg, "--data", path("corpus"), "--out", path("full"), "--steps", "4"}).code,
            kExitOk);
  ASSERT_EQ(run({"train", "--config", cfg, "--data", path("corpus"), "--out", path("part"), "--steps", "2"}).code,
            kExitOk);
  const auto r = run({"train", "--data", path("corpus"), "--out", path("part"), "--resume", "--steps", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto a = load_train_state(path("full") + "/model.ckpt", path("full") + "/optimizer.ckpt");
  const auto b = load_train_state(path("part") + "/model.ckpt", path("part") + "/optimizer.ckpt");
  EXPECT_EQ(a.step, 4u);
  EXPECT_EQ(b.step, 4u);
  EXPECT_EQ(a.model.params(), b.model.params());
  EXPECT_EQ(slurp(path("full") + "/loss.csv"), slurp(path("part") + "/loss.csv"));
}

TEST_F(Cli, ResumeWithoutCheckpointFails) {
  const std::string cfg = write_config();
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", path("corpus")}).code, kExitOk);
  EXPECT_EQ(run({"train", "--config", cfg, "--data", path("corpus"), "--out", path("none"), "--resume"}).code,
            kExitValidation);
}

TEST_F(Cli, SampleIsByteIdenticalAcrossRuns) {
  train_small();
  const std::string script = write_script(), ckpt = path("run") + "/model.ckpt";
  for (const char* out : {"v1.json", "v2.json"})
    ASSERT_EQ(run({"sample", "--ckpt", ckpt, "--script", script, "--out", path(out), "--seed", "3",
                   "--steps", "8"})
                  .code,
              kExitOk);
  EXPECT_EQ(slurp(path("v1.json")), slurp(path("v2.json")));
  EXPECT_FALSE(slurp(path("v1.json")).empty());
  const auto rc = nlohmann::json::parse(slurp(path("v1.json.run_config.json")));
  EXPECT_EQ(rc.at("sample").at("seed"), 3);
  EXPECT_EQ(rc.at("sample").at("steps"), 8);
  EXPECT_EQ(rc.at("command"), "sample");

  ASSERT_EQ(run({"sample", "--ckpt", ckpt, "--script", script, "--out", path("v3.json"), "--seed", "4",
                 "--steps", "8", "--no-cuts", "--pgm-dir", path("frames")})
                .code,
            kExitOk);
  EXPECT_NE(slurp(path("v1.json")), slurp(path("v3.json")));
  EXPECT_TRUE(fs::exists(path("frames") + "/frame_0000.pgm"));
}

TEST_F(Cli, SampleRejectsFirstFrameForPlainModel) {
  train_small();
  const std::string script = write_script();
  ASSERT_EQ(run({"gen-data", "--out", path("c1"), "--num-videos", "1"}).code, kExitOk);
  const auto r = run({"sample", "--ckpt", path("run") + "/model.ckpt", "--script", script, "--out", path("v.json"),
                      "--first-frame", path("c1") + "/videos/000000.json"});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_FALSE(fs::exists(path("v.json")));
  EXPECT_FALSE(fs::exists(path("v.json.run_config.json")));
}

TEST_F(Cli, FailedCommandsLeaveNoPartialOutputs) {
  const std::string cfg = write_config();
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", path("corpus")}).code, kExitOk);
  // Grid mismatch between the model and the corpus is detected before training.
  std::ofstream(path("grid.json")) << R"({"model": {"grid": 16, "patch": 4}})";
  EXPECT_EQ(run({"train", "--config", path("grid.json"), "--data", path("corpus"), "--out", path("run")}).code,
            kExitValidation);
  EXPECT_FALSE(fs::exists(path("run")));
  // A corpus index that references a missing video.
  fs::remove(path("corpus") + "/videos/000002.json");
  EXPECT_EQ(run({"train", "--config", cfg, "--data", path("corpus"), "--out", path("run2")}).code, kExitValidation);
  EXPECT_FALSE(fs::exists(path("run2")));
  EXPECT_NE(run({"check-properties", "--trials", "5", "--report", path("no/such/dir/r.json")}).code, kExitOk);
}

TEST_F(Cli, EvalWritesReport) {
  train_small();
  const auto r = run({"eval", "--ckpt", path("run") + "/model.ckpt", "--data", path("corpus"), "--report",
                      path("eval.json"), "--steps", "4", "--limit", "2", "--property-trials", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("eval.json")));
  for (const char* k : {"timing_accuracy", "zero_cut_fraction_no_cuts", "cut_hit_fraction", "properties"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.at("videos"), 2);
  EXPECT_TRUE(fs::exists(path("eval.json.run_config.json")));
}
