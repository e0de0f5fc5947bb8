#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clmlf/cli.hpp"
#include "clmlf/image_io.hpp"
#include "test_util.hpp"

using namespace clmlf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int rc = 0;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome r;
  r.rc = cli::dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

const char* kSmallRun = R"([train]
batch_size = 16
epochs = 2
learning_rate = 0.001
seed = 4

[model]
d_t = 16
text_layers = 1
text_heads = 2
text_ff = 32
max_len = 8
d_i = 16
conv_blocks = 2
image_size = 16

[fusion]
fusion_layers = 1
image_layers = 1
heads = 2
ff = 32

[augmentation]
text = "stub"
)";

/// Synthesizes a 120-example corpus and trains the small model once for the
/// whole suite.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testutil::temp_dir("cli");
    write(dir_ / "spec.json", R"({"num_examples": 120, "seed": 5})");
    synth_ = run({"synth", "--spec", (dir_ / "spec.json").string(), "--out", (dir_ / "data").string()});
    write(dir_ / "run.toml", kSmallRun);
    train_ = run({"train", "--config", (dir_ / "run.toml").string(), "--data", (dir_ / "data").string(), "--out",
                  (dir_ / "run").string()});
  }
  static fs::path dir_;
  static Outcome synth_;
  static Outcome train_;
};

fs::path CliPipeline::dir_;
Outcome CliPipeline::synth_;
Outcome CliPipeline::train_;

}  // namespace

TEST(Cli, UsageAndExitCodes) {
  Outcome r = run({});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("usage: clmlf"), std::string::npos);
  EXPECT_EQ(run({"--help"}).rc, 0);
  EXPECT_EQ(run({"frobnicate"}).rc, 2);
  EXPECT_EQ(run({"eval", "--data", "x.jsonl"}).rc, 2);
  EXPECT_EQ(run({"train", "--epochs", "many"}).rc, 2);
  r = run({"eval", "--help"});
  EXPECT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("--checkpoint"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const auto dir = testutil::temp_dir("cli_errors");
  Outcome r = run({"eval", "--checkpoint", (dir / "none.ckpt").string(), "--data", "x.jsonl"});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("none.ckpt"), std::string::npos);
  write(dir / "bad.toml", "[train]\nlearnig_rate = 0.1\n");
  r = run({"train", "--config", (dir / "bad.toml").string()});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("unknown config key: train.learnig_rate"), std::string::npos);
  write(dir / "broken.toml", "[train\n");
  r = run({"train", "--config", (dir / "broken.toml").string()});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("broken.toml:1"), std::string::npos);
  r = run({"train"});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("no training data"), std::string::npos);
}

TEST(Cli, RunConfigRoundTrip) {
  const auto dir = testutil::temp_dir("cli_config");
  write(dir / "run.toml", std::string(kSmallRun) + "\n[data]\ntrain = \"d/train.jsonl\"\n");
  const cli::RunConfig cfg = cli::load_run_config(dir / "run.toml");
  EXPECT_EQ(cfg.train.epochs, 2);
  EXPECT_EQ(cfg.train.model.encoder.d_t, 16);
  EXPECT_EQ(fs::path(cfg.train_path), (dir / "d" / "train.jsonl").lexically_normal());
  write(dir / "again.toml", cli::to_toml(cfg));
  const cli::RunConfig back = cli::load_run_config(dir / "again.toml");
  auto a = cli::to_json(back), b = cli::to_json(cfg);
  EXPECT_EQ(fs::path(a["output"]["dir"].get<std::string>()), fs::absolute("run").lexically_normal());
  a.erase("output");
  b.erase("output");
  EXPECT_EQ(a, b);
}

TEST_F(CliPipeline, SynthWritesSplits) {
  ASSERT_EQ(synth_.rc, 0) << synth_.err;
  EXPECT_NE(synth_.out.find("120 examples (96/12/12)"), std::string::npos);
  for (const char* f : {"all.jsonl", "train.jsonl", "val.jsonl", "test.jsonl", "synonyms.txt", "spec.json"})
    EXPECT_TRUE(fs::exists(dir_ / "data" / f)) << f;
}

TEST_F(CliPipeline, TrainWritesOutputs) {
  ASSERT_EQ(train_.rc, 0) << train_.err;
  for (const char* f : {"model.ckpt", "metrics.json", "history.csv", "config.toml"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  const auto metrics = nlohmann::json::parse(slurp(dir_ / "run" / "metrics.json"));
  EXPECT_TRUE(metrics["test"].contains("accuracy"));
  EXPECT_TRUE(metrics["val"].contains("macro_f1"));
  std::istringstream history(slurp(dir_ / "run" / "history.csv"));
  int lines = 0;
  for (std::string line; std::getline(history, line);) ++lines;
  EXPECT_EQ(lines, 3);
  // The resolved config re-loads to the same run.
  const cli::RunConfig resolved = cli::load_run_config(dir_ / "run" / "config.toml");
  EXPECT_EQ(resolved.train.epochs, 2);
  EXPECT_TRUE(fs::path(resolved.train_path).is_absolute());
}

TEST_F(CliPipeline, EvalMatchesTrainMetrics) {
  ASSERT_EQ(train_.rc, 0);
  const Outcome r = run({"eval", "--checkpoint", (dir_ / "run" / "model.ckpt").string(), "--data",
                     (dir_ / "data" / "test.jsonl").string(), "--out", (dir_ / "eval" / "m.json").string()});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto metrics = nlohmann::json::parse(slurp(dir_ / "run" / "metrics.json"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "eval" / "m.json")), metrics["test"]);
}

TEST_F(CliPipeline, EmbedWithProjection) {
  ASSERT_EQ(train_.rc, 0);
  const Outcome r = run({"embed", "--checkpoint", (dir_ / "run" / "model.ckpt").string(), "--data",
                     (dir_ / "data" / "val.jsonl").string(), "--out", (dir_ / "emb.csv").string(), "--project",
                     (dir_ / "xy.csv").string()});
  ASSERT_EQ(r.rc, 0) << r.err;
  std::istringstream emb(slurp(dir_ / "emb.csv")), xy(slurp(dir_ / "xy.csv"));
  std::string header;
  std::getline(emb, header);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 17);
  std::getline(xy, header);
  EXPECT_EQ(header, "id,label,x,y");
  int rows = 0;
  for (std::string line; std::getline(xy, line);) ++rows;
  EXPECT_EQ(rows, 12);
}

TEST_F(CliPipeline, AttentionOverlays) {
  ASSERT_EQ(train_.rc, 0);
  const Outcome r = run({"attn", "--checkpoint", (dir_ / "run" / "model.ckpt").string(), "--data",
                     (dir_ / "data" / "test.jsonl").string(), "--out", (dir_ / "attn").string(), "--count", "3"});
  ASSERT_EQ(r.rc, 0) << r.err;
  int pngs = 0;
  for (const auto& entry : fs::directory_iterator(dir_ / "attn")) {
    const Image img = read_image(entry.path());
    EXPECT_EQ(img.height, 16);
    EXPECT_EQ(img.width, 16);
    ++pngs;
  }
  EXPECT_EQ(pngs, 3);
  const Outcome bad = run({"attn", "--checkpoint", (dir_ / "run" / "model.ckpt").string(), "--data",
                       (dir_ / "data" / "test.jsonl").string(), "--out", (dir_ / "attn2").string(), "--token", "99"});
  EXPECT_EQ(bad.rc, 1);
}

TEST_F(CliPipeline, AugmentPreview) {
  ASSERT_EQ(synth_.rc, 0);
  const Outcome r = run({"augment-preview", "--config", (dir_ / "run.toml").string(), "--data",
                     (dir_ / "data" / "train.jsonl").string(), "--out", (dir_ / "preview").string(), "--count",
                     "4"});
  ASSERT_EQ(r.rc, 0) << r.err;
  int pngs = 0;
  for (const auto& entry : fs::directory_iterator(dir_ / "preview")) {
    if (entry.path().extension() != ".png") continue;
    const Image pair = read_image(entry.path());
    EXPECT_EQ(pair.height, 16);
    EXPECT_EQ(pair.width, 32);
    ++pngs;
  }
  EXPECT_EQ(pngs, 4);
  std::istringstream tsv(slurp(dir_ / "preview" / "texts.tsv"));
  int lines = 0;
  for (std::string line; std::getline(tsv, line);) ++lines;
  EXPECT_EQ(lines, 5);
}
