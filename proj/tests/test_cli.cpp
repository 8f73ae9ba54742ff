#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "twirgcn_cli_test";

const char* kWorld =
    " --positions 3 --holders 4 --min-tenure 6 --athletes 6 --teams 3 --awards 2"
    " --first-year 1950 --last-year 1999 --per-category 12";

const char* kFast = " --dim 8 --bases 2 --batch_size_train 8 --learning_rate 0.01 --max_epochs 3";

struct Result {
  int status;
  std::string err;
};

Result cli(const std::string& args) {
  const auto err = kRoot / "stderr.txt";
  const std::string cmd = std::string(TWIRGCN_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  std::ifstream in(err);
  std::ostringstream s;
  s << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, s.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json json_file(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }

  static std::string dir(const std::string& name) { return (kRoot / name).string(); }

  static std::string dataset() {
    static const std::string d = [] {
      const auto path = dir("data");
      EXPECT_EQ(cli("generate --seed 5 --out " + path + kWorld).status, 0);
      return path;
    }();
    return d;
  }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli("").status, 2);
  EXPECT_EQ(cli("frobnicate").status, 2);
  EXPECT_EQ(cli("train").status, 2);
  auto r = cli("train --data " + dir("missing"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("error: code=usage"), std::string::npos) << r.err;
  r = cli("train --data " + dataset() + " --layers two --out " + dir("bad_cfg"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("code=config"), std::string::npos) << r.err;
  EXPECT_EQ(cli("eval --data " + dataset() + " --out " + dir("no_model")).status, 2);
  EXPECT_EQ(cli("--help").status, 0);
}

TEST_F(Cli, GenerateIsDeterministicAndRefusesToOverwrite) {
  const auto again = dir("data_again");
  ASSERT_EQ(cli("generate --seed 5 --out " + again + kWorld).status, 0);
  for (const char* f : {"facts.tsv", "train.jsonl", "valid.jsonl", "test.jsonl", "templates.jsonl",
                        "generation.json", "manifest.json"})
    EXPECT_EQ(slurp(fs::path(dataset()) / f), slurp(fs::path(again) / f)) << f;
  EXPECT_EQ(cli("generate --seed 5 --out " + again + kWorld).status, 2);
  EXPECT_EQ(cli("generate --seed 6 --force --out " + again + kWorld).status, 0);
  EXPECT_NE(slurp(fs::path(dataset()) / "facts.tsv"), slurp(fs::path(again) / "facts.tsv"));
  auto gen = json_file(fs::path(dataset()) / "generation.json");
  EXPECT_EQ(gen["per_category"]["explicit"], 12);
  EXPECT_EQ(gen["world"]["seed"], 5);
}

TEST_F(Cli, TrainEvalAnalyzePipeline) {
  const auto train = dir("train"), eval = dir("eval"), analyze = dir("analyze");
  ASSERT_EQ(cli("train --data " + dataset() + " --out " + train + kFast).status, 0);
  auto manifest = json_file(fs::path(train) / "manifest.json");
  EXPECT_EQ(manifest["subcommand"], "train");
  EXPECT_EQ(manifest["config"]["dim"], 8);
  EXPECT_EQ(manifest["inputs"].size(), 3u);
  EXPECT_EQ(manifest["outputs"], (nlohmann::json{"model.bin", "epochs.tsv", "summary.json"}));
  std::istringstream log(slurp(fs::path(train) / "epochs.tsv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 1u + 4u);

  const auto model = (fs::path(train) / "model.bin").string();
  ASSERT_EQ(cli("eval --data " + dataset() + " --model " + model + " --out " + eval).status, 0);
  auto metrics = json_file(fs::path(eval) / "metrics.json");
  EXPECT_EQ(metrics["hits"].size(), 3u);
  EXPECT_GT(metrics["candidates"].get<int>(), 0);

  const auto preds = (fs::path(eval) / "predictions.jsonl").string();
  ASSERT_EQ(cli("analyze --data " + dataset() + " --model " + model + " --predictions " + preds +
                " --compare " + preds + " --out " + analyze)
                .status,
            0);
  auto analysis = json_file(fs::path(analyze) / "analysis.json");
  EXPECT_GT(analysis["question_time_probe"]["count"].get<int>(), 0);
  EXPECT_EQ(analysis["overlap"]["overall"]["only_a"], 0);
}

TEST_F(Cli, UntrainedEvalAndRuntimeFailures) {
  const auto eval = dir("eval_untrained");
  ASSERT_EQ(cli("eval --untrained --data " + dataset() + " --out " + eval + kFast).status, 0);
  auto manifest = json_file(fs::path(eval) / "manifest.json");
  EXPECT_TRUE(manifest["config"]["untrained"].get<bool>());

  const auto bad = kRoot / "bad.bin";
  std::ofstream(bad) << "not a checkpoint";
  auto r = cli("eval --data " + dataset() + " --model " + bad.string() + " --out " + dir("eval_bad"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("error: code=checkpoint"), std::string::npos) << r.err;
}

TEST_F(Cli, AblateWritesPairedReport) {
  const auto out = dir("ablate");
  ASSERT_EQ(cli("ablate --data " + dataset() + " --out " + out + kFast).status, 0);
  auto rep = json_file(fs::path(out) / "ablation.json");
  EXPECT_TRUE(rep["epoch0_identical"].get<bool>());
  EXPECT_TRUE(rep.contains("hits1_delta"));
  EXPECT_TRUE(rep["overlap"]["overall"].contains("only_with_gating"));
}
