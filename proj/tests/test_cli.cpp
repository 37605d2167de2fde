#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int status = -1;
  std::string output;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// A scratch directory holding a tiny synthetic dataset; commands run inside it.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run("generate-synthetic --out data/manifest.json --per-class 4 --frames 20 --joints 5 --seed 1").status, 0);
  }

  Outcome run(const std::string& args) const {
    const fs::path log = dir_.path() / "last_output.txt";
    const std::string cmd = "cd '" + dir_.path().string() + "' && CMKM_OUTPUT_ROOT='" + (dir_.path() / "out").string() +
                            "' '" CMKM_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(log)};
  }

  // Small-batch training flags shared by the pre-training commands.
  static std::string quick() { return " --manifest data/manifest.json --epochs 1 --set batch_size=8 --set dataset.frames=20"; }

  static std::string eval_flags(const std::string& run_dir) {
    return " --manifest data/manifest.json --set dataset.frames=20 --set evaluation.epochs=3"
           " --set 'evaluation.checkpoints.inertial=\"out/" + run_dir + "/inertial_final.cmkt\"'"
           " --set 'evaluation.checkpoints.skeleton=\"out/" + run_dir + "/skeleton_final.cmkt\"'";
  }

  static std::string guidance() {
    return " --set 'guidance_checkpoints.inertial=\"out/gi/inertial_final.cmkt\"'"
           " --set 'guidance_checkpoints.skeleton=\"out/gs/skeleton_final.cmkt\"'";
  }

  void pretrain_guidance() {
    ASSERT_EQ(run("pretrain-unimodal --modality inertial -o gi" + quick()).status, 0);
    ASSERT_EQ(run("pretrain-unimodal --modality skeleton -o gs" + quick()).status, 0);
  }

  json results(const std::string& run_dir) const { return json::parse(slurp(out() / run_dir / "results.json")); }
  fs::path out() const { return dir_.path() / "out"; }

  cmkm::testing::TempDir dir_{"cli"};
};

std::vector<double> logged_losses(const fs::path& log) {
  std::vector<double> out;
  std::istringstream in(slurp(log));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line).at("loss").get<double>());
  return out;
}

}  // namespace

TEST_F(Cli, MissingManifestIsReported) {
  const auto r = run("pretrain-unimodal --modality inertial --manifest nope.json --epochs 1");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("dataset.manifest not found: nope.json"), std::string::npos) << r.output;
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
  const auto r = run("pretrain-unimodal --modality inertial --set bacth_size=8" + quick());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("bacth_size"), std::string::npos) << r.output;
}

TEST_F(Cli, UnimodalSmokeAndRerunDeterminism) {
  ASSERT_EQ(run("pretrain-unimodal --modality skeleton --seed 4 -o a" + quick()).status, 0);
  EXPECT_TRUE(fs::exists(out() / "a" / "skeleton_final.cmkt"));
  EXPECT_TRUE(fs::exists(out() / "a" / "config.json"));
  ASSERT_EQ(run("pretrain-unimodal --modality skeleton --seed 4 -o b" + quick()).status, 0);
  const auto a = logged_losses(out() / "a" / "train_log.jsonl");
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a, logged_losses(out() / "b" / "train_log.jsonl"));
}

TEST_F(Cli, CmcSmokeEchoesResolvedConfig) {
  ASSERT_EQ(run("pretrain-multimodal --set framework=cmc -o cmc" + quick()).status, 0);
  EXPECT_TRUE(fs::exists(out() / "cmc" / "inertial_final.cmkt"));
  EXPECT_TRUE(fs::exists(out() / "cmc" / "skeleton_final.cmkt"));
  const json echo = json::parse(slurp(out() / "cmc" / "config.json"));
  EXPECT_EQ(echo.at("tau").get<double>(), 0.1);
  EXPECT_EQ(echo.at("framework"), "cmc");
  EXPECT_EQ(echo.at("optimizer").at("plateau_patience_epochs"), 20);
}

TEST_F(Cli, CmkmWithoutGuidanceIsADocumentedError) {
  const auto r = run("pretrain-multimodal -o x" + quick());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("cmc_cmkm requires guidance_checkpoints"), std::string::npos) << r.output;
}

TEST_F(Cli, EvaluationModesWriteTheirTables) {
  pretrain_guidance();
  ASSERT_EQ(run("pretrain-multimodal -o mm" + quick() + guidance()).status, 0);

  ASSERT_EQ(run("evaluate --mode linear -o lin" + eval_flags("mm")).status, 0);
  ASSERT_EQ(results("lin").size(), 1u);
  EXPECT_EQ(results("lin")[0].at("method"), "cmc_cmkm");
  ASSERT_EQ(run("pretrain-multimodal --set framework=cmc -o cmc" + quick()).status, 0);
  ASSERT_EQ(run("evaluate --mode linear -o lin_cmc" + eval_flags("cmc")).status, 0);
  EXPECT_EQ(results("lin_cmc")[0].at("method"), "cmc");

  const auto self = run("evaluate --mode retrieve --set evaluation.score_on_train=true -o ret" + eval_flags("mm"));
  ASSERT_EQ(self.status, 0) << self.output;
  for (const auto& row : results("ret")) EXPECT_EQ(row.at("value").get<double>(), 1.0);

  ASSERT_EQ(run("evaluate --mode semisup --set 'evaluation.fractions=[0.5]' --set evaluation.repeats=2"
                " --set evaluation.baselines=false -o semi" + eval_flags("mm"))
                .status,
            0);
  EXPECT_EQ(results("semi").size(), 1u);
  const std::string csv = slurp(out() / "semi" / "results.csv");
  EXPECT_NE(csv.find("ci_low"), std::string::npos);
  EXPECT_NE(csv.find("ci_high"), std::string::npos);
  EXPECT_TRUE(fs::exists(out() / "semi" / "semisup.svg"));

  ASSERT_EQ(run("finetune --mode topk --set 'evaluation.k_values=[0,1]' --epochs 1 --set batch_size=8 -o topk" +
                eval_flags("mm") + guidance())
                .status,
            0);
  const json topk = results("topk");
  ASSERT_EQ(topk.size(), 2u);
  EXPECT_EQ(topk[0].at("top_k"), 0);
  EXPECT_EQ(topk[1].at("top_k"), 1);

  const auto exported = run("export-embeddings --split all --out emb.csv" + eval_flags("mm"));
  ASSERT_EQ(exported.status, 0) << exported.output;
  std::istringstream lines(slurp(dir_.path() / "emb.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 1 + 24);
}

TEST_F(Cli, CheckpointOfTheWrongModalityIsRejected) {
  pretrain_guidance();
  const auto r = run(
      "evaluate --mode retrieve --manifest data/manifest.json --set dataset.frames=20 --set evaluation.modality=\"inertial\""
      " --set 'evaluation.checkpoints.inertial=\"out/gs/skeleton_final.cmkt\"' -o bad");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("evaluation.checkpoints.inertial"), std::string::npos) << r.output;
}

TEST_F(Cli, ConvertCsvDataset) {
  std::ofstream(dir_.path() / "i0.csv") << "1,2\n3,4\n";
  std::ofstream(dir_.path() / "s0.csv") << "0,0,1,1\n0,1,1,2\n";
  std::ofstream(dir_.path() / "index.csv") << "inertial,skeleton,label,subject_id\ni0.csv,s0.csv,0,1\n";
  const auto r = run("convert-dataset --format csv --source index.csv --coords 2 --classes 2 --out conv/manifest.json");
  ASSERT_EQ(r.status, 0) << r.output;
  const json m = json::parse(slurp(dir_.path() / "conv" / "manifest.json"));
  EXPECT_EQ(m.at("samples").size(), 1u);
  EXPECT_EQ(m.at("num_joints"), 2);
}
