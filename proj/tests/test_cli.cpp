#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "test_util.hpp"

namespace {

std::string cli_bin() {
  const char* bin = std::getenv("UNIGRAPH_CLI_BIN");
  if (!bin) throw std::runtime_error("UNIGRAPH_CLI_BIN not set");
  return bin;
}

int run(const std::string& args, const std::string& out_file = "/dev/null") {
  const std::string cmd = cli_bin() + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(Cli, InvalidCommandPrintsUsageAndExits2) {
  testutil::TempDir dir("cli_usage");
  EXPECT_EQ(run("frobnicate", dir.file("out.txt")), 2);
  const std::string out = testutil::read_file(dir.file("out.txt"));
  EXPECT_NE(out.find("Usage"), std::string::npos);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run("--help"), 0); }

TEST(Cli, MissingInputFileExits1) {
  testutil::TempDir dir("cli_err");
  EXPECT_EQ(run("sample-ppr --nodes /nonexistent.jsonl --edges /nonexistent.jsonl --anchor 0",
                dir.file("out.txt")),
            1);
  const std::string out = testutil::read_file(dir.file("out.txt"));
  EXPECT_NE(out.find("error:"), std::string::npos);
}

TEST(Cli, UnknownConfigKeyExits1) {
  testutil::TempDir dir("cli_cfg");
  testutil::write_file(dir.file("bad.json"), "{\"mask_rt\": 0.5}");
  EXPECT_EQ(run("gradcheck --config " + dir.file("bad.json"), dir.file("out.txt")), 1);
  EXPECT_NE(testutil::read_file(dir.file("out.txt")).find("mask_rt"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  testutil::TempDir dir("cli_grad");
  EXPECT_EQ(run("gradcheck", dir.file("out.txt")), 0);
  EXPECT_NE(testutil::read_file(dir.file("out.txt")).find("gradcheck PASS"), std::string::npos);
}

TEST(Cli, SamplePprEmitsJson) {
  testutil::TempDir dir("cli_ppr");
  ASSERT_EQ(run("gen-synth --out " + dir.file("g") + " --classes 2 --per-class 10 --seed 3"), 0);
  ASSERT_EQ(run("sample-ppr --nodes " + dir.file("g/nodes.jsonl") + " --edges " + dir.file("g/edges.jsonl") +
                    " --anchor 0 --topk 5",
                dir.file("ppr.json")),
            0);
  auto j = nlohmann::json::parse(testutil::read_file(dir.file("ppr.json")));
  EXPECT_EQ(j["anchor"], 0);
  ASSERT_TRUE(j["nodes"].is_array());
  ASSERT_TRUE(j["scores"].is_array());
  EXPECT_EQ(j["nodes"].size(), j["scores"].size());
  EXPECT_LE(j["nodes"].size(), 6u);
  bool has_anchor = false;
  for (const auto& v : j["nodes"])
    if (v.get<long long>() == 0) has_anchor = true;
  EXPECT_TRUE(has_anchor);
}

TEST(Cli, EndToEndPipeline) {
  testutil::TempDir dir("cli_e2e");
  const std::string g = dir.file("g");
  const std::string small =
      " --hidden-size 16 --max-len 16 --topk 8 --batch-anchors 4 --set num_lm_layers=1 --set num_gnn_layers=2";

  ASSERT_EQ(run("gen-synth --out " + g + " --classes 2 --per-class 10 --intra 0.4 --inter 0.05 --seed 5"), 0);
  ASSERT_TRUE(std::filesystem::exists(g + "/nodes.jsonl"));
  ASSERT_TRUE(std::filesystem::exists(g + "/edges.jsonl"));
  ASSERT_TRUE(std::filesystem::exists(g + "/splits.json"));
  ASSERT_TRUE(std::filesystem::exists(g + "/nodes.jsonl.manifest.json"));

  ASSERT_EQ(run("pretrain --nodes " + g + "/nodes.jsonl --edges " + g + "/edges.jsonl --splits " + g +
                    "/splits.json --out-checkpoint " + dir.file("m.ckpt") + " --log " + dir.file("log.jsonl") +
                    " --steps 6 --seed 5" + small,
                dir.file("pretrain.txt")),
            0);
  ASSERT_TRUE(std::filesystem::exists(dir.file("m.ckpt")));
  ASSERT_TRUE(std::filesystem::exists(dir.file("m.ckpt.manifest.json")));

  // six step reports, each a JSON object with the loss identity
  {
    std::ifstream f(dir.file("log.jsonl"));
    std::string line;
    int count = 0;
    while (std::getline(f, line)) {
      auto j = nlohmann::json::parse(line);
      EXPECT_NEAR(j["loss_total"].get<double>(),
                  j["loss_mask"].get<double>() + 0.1 * j["loss_latent"].get<double>(), 1e-6);
      ++count;
    }
    EXPECT_EQ(count, 6);
  }

  ASSERT_EQ(run("embed --checkpoint " + dir.file("m.ckpt") + " --nodes " + g + "/nodes.jsonl --edges " + g +
                    "/edges.jsonl --out " + dir.file("emb.tsv") + " --lm-cls-out " + dir.file("lm_cls.tsv") +
                    small,
                dir.file("embed.txt")),
            0);
  ASSERT_TRUE(std::filesystem::exists(dir.file("emb.tsv")));
  ASSERT_TRUE(std::filesystem::exists(dir.file("lm_cls.tsv")));

  ASSERT_EQ(run("fewshot --embeddings " + dir.file("emb.tsv") + " --nodes " + g + "/nodes.jsonl --edges " + g +
                    "/edges.jsonl --splits " + g + "/splits.json --ways 2 --shots 2 --tasks 10 --seed 1 --out " +
                    dir.file("few.json") + small,
                dir.file("few.txt")),
            0);
  auto few = nlohmann::json::parse(testutil::read_file(dir.file("few.json")));
  EXPECT_EQ(few["N"], 2);
  EXPECT_EQ(few["K"], 2);
  EXPECT_EQ(few["num_tasks"], 10);

  ASSERT_EQ(run("probe --embeddings " + dir.file("emb.tsv") + " --nodes " + g + "/nodes.jsonl --edges " + g +
                    "/edges.jsonl --splits " + g + "/splits.json --lr 0.01 --epochs 50 --out " +
                    dir.file("probe.json") + small,
                dir.file("probe.txt")),
            0);
  auto probe = nlohmann::json::parse(testutil::read_file(dir.file("probe.json")));
  EXPECT_TRUE(probe.contains("test_accuracy"));
  auto probe_manifest = nlohmann::json::parse(testutil::read_file(dir.file("probe.json.manifest.json")));
  EXPECT_EQ(probe_manifest["config"]["probe_epochs"].get<int>(), 50);

  ASSERT_EQ(run("emit-instructions --nodes " + g + "/nodes.jsonl --edges " + g + "/edges.jsonl --splits " + g +
                    "/splits.json --embeddings " + dir.file("emb.tsv") + " --template citation --split test --out " +
                    dir.file("inst.jsonl") + small,
                dir.file("inst.txt")),
            0);
  ASSERT_TRUE(std::filesystem::exists(dir.file("inst.jsonl")));
  std::ifstream f(dir.file("inst.jsonl"));
  std::string line;
  ASSERT_TRUE(std::getline(f, line));
  auto rec = nlohmann::json::parse(line);
  EXPECT_TRUE(rec.contains("prompt"));
  EXPECT_TRUE(rec.contains("embedding_rows"));
  EXPECT_TRUE(rec.contains("target"));
}

TEST(Cli, FlagOverridesConfigFile) {
  testutil::TempDir dir("cli_flag");
  testutil::write_file(dir.file("c.json"), "{\"mask_rate\": 0.75}");
  ASSERT_EQ(run("gen-synth --out " + dir.file("g") + " --classes 2 --per-class 5 --config " + dir.file("c.json") +
                    " --mask-rate 0.5 --seed 1"),
            0);
  auto manifest = nlohmann::json::parse(testutil::read_file(dir.file("g/nodes.jsonl.manifest.json")));
  EXPECT_DOUBLE_EQ(manifest["config"]["mask_rate"].get<double>(), 0.5);
}

TEST(Cli, PaperProfileEchoedIntoManifest) {
  testutil::TempDir dir("cli_paper");
  ASSERT_EQ(run("gen-synth --out " + dir.file("g") + " --classes 2 --per-class 5 --profile paper --seed 1"), 0);
  auto manifest = nlohmann::json::parse(testutil::read_file(dir.file("g/nodes.jsonl.manifest.json")));
  EXPECT_DOUBLE_EQ(manifest["config"]["lr"].get<double>(), 2e-5);
  EXPECT_EQ(manifest["config"]["ppr_topk"].get<int>(), 128);
}
