#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / ("acda_cli_" + std::to_string(::getpid()));

struct Result {
  int code = -1;
  std::string output;
};

Result acda(const std::string& args) {
  fs::create_directories(kWork);
  const auto log = kWork / "last_output.txt";
  const std::string cmd = std::string("\"") + ACDA_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& extra = "") {
  fs::create_directories(kWork);
  const auto p = kWork / name;
  std::ofstream(p) << "dataset:\n  n_source: 32\n  n_target: 32\n"
                      "training:\n  pretrain_epochs: 1\n  align_epochs: 1\n  batch_size: 16\n  kmeans_iterations: 3\n"
                   << extra;
  return p;
}

std::string out(const std::string& name) { return (kWork / name).string(); }

}  // namespace

TEST(Cli, RunWritesLogsSummaryAndManifest) {
  const auto cfg = write_config("run.yaml");
  const auto r = acda("run --config " + cfg.string() + " --seeds 3 --out-dir " + out("run"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(fs::exists(kWork / "run" / ("seed" + std::to_string(s) + ".jsonl")));
  const auto summary = slurp(kWork / "run" / "summary.csv");
  EXPECT_EQ(summary.rfind("seed,final_target_acc,final_source_acc,wall_clock_s\n", 0), 0u) << summary;
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
  EXPECT_NE(r.output.find("over 3 seed(s)"), std::string::npos) << r.output;
  std::ifstream in(kWork / "run" / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest["command"], "run");
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
  EXPECT_GE(manifest["artifacts"].size(), 4u);
}

TEST(Cli, MissingConfigIsAValidationError) {
  const auto r = acda("run --config " + out("nope.yaml") + " --out-dir " + out("missing"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("nope.yaml"), std::string::npos) << r.output;
}

TEST(Cli, UnknownKeyIsRejected) {
  const auto cfg = write_config("typo.yaml", "  learnin_rate: 0.1\n");
  const auto r = acda("run --config " + cfg.string() + " --out-dir " + out("typo"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("training.learnin_rate"), std::string::npos) << r.output;
}

TEST(Cli, DryRunTrainsNothing) {
  const auto cfg = write_config("dry.yaml");
  const auto r = acda("run --config " + cfg.string() + " --seeds 3 --dry-run --out-dir " + out("dry"));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("config_hash"), std::string::npos);
  EXPECT_FALSE(fs::exists(kWork / "dry" / "seed0.jsonl"));
  EXPECT_FALSE(fs::exists(kWork / "dry" / "summary.csv"));
}

TEST(Cli, SweepRejectsDuplicateGridValues) {
  const auto cfg = write_config("sweep.yaml");
  const auto r = acda("sweep --config " + cfg.string() + " --seeds 3 --param delta --grid 0.1,0.1 --out-dir " +
                      out("sweep_dup"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("duplicate"), std::string::npos) << r.output;
  EXPECT_EQ(acda("sweep --config " + cfg.string() + " --param gamma --dry-run --out-dir " + out("sweep_bad")).code, 1);
}

TEST(Cli, AblationHasFiveRows) {
  const auto cfg = write_config("abl.yaml");
  const auto r = acda("ablation --config " + cfg.string() + " --seeds 3 --out-dir " + out("abl"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(kWork / "abl" / "ablation.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,mean,stderr,seeds");
  std::set<std::string> names;
  while (std::getline(in, line)) names.insert(line.substr(0, line.find(',')));
  EXPECT_EQ(names, (std::set<std::string>{"source-only", "same-layer", "no-conditioning", "no-attention", "full"}));
  EXPECT_EQ(acda("ablation --config " + cfg.string() + " --seeds 2 --out-dir " + out("abl2")).code, 1);
}

TEST(Cli, EmbedIsDeterministicAndCoversBothDomains) {
  const auto cfg = write_config("emb.yaml");
  ASSERT_EQ(acda("run --config " + cfg.string() + " --seeds 5 --out-dir " + out("emb_run")).code, 0);
  const auto ckpt = (kWork / "emb_run" / "seed4.ckpt").string();
  ASSERT_EQ(acda("embed --checkpoint " + ckpt + " --out-dir " + out("emb1")).code, 0);
  ASSERT_EQ(acda("embed --checkpoint " + ckpt + " --out-dir " + out("emb2")).code, 0);
  const auto a = slurp(kWork / "emb1" / "embeddings.csv");
  EXPECT_EQ(a, slurp(kWork / "emb2" / "embeddings.csv"));
  std::istringstream lines(a);
  std::string line;
  std::getline(lines, line);
  int n = 0;
  std::set<std::string> domains;
  while (std::getline(lines, line)) {
    domains.insert(line.substr(0, line.find(',')));
    ++n;
  }
  EXPECT_EQ(n, 64);
  EXPECT_EQ(domains, (std::set<std::string>{"source", "target"}));
}

TEST(Cli, IngestAndArchiveDataset) {
  const auto cfg = write_config("ing.yaml");
  const auto root = kWork / "images";
  for (const char* d : {"source", "target"})
    for (const char* c : {"a", "b"}) {
      fs::create_directories(root / d / c);
      for (int i = 0; i < 4; ++i) {
        std::ofstream img(root / d / c / ("x" + std::to_string(i) + ".pgm"), std::ios::binary);
        img << "P5\n16 16\n255\n";
        for (int k = 0; k < 256; ++k) img.put(static_cast<char>(std::string(c) == "a" ? k % 50 : 200 + k % 50));
      }
    }
  ASSERT_EQ(acda("ingest --config " + cfg.string() + " --dataset folder:" + root.string() + " --out-dir " +
                 out("ingest"))
                .code,
            0);
  EXPECT_TRUE(fs::exists(kWork / "ingest" / "dataset.acda"));
  const auto r = acda("run --config " + cfg.string() + " --seeds 1 --dataset archive:" +
                      (kWork / "ingest" / "dataset.acda").string() + " --out-dir " + out("from_archive"));
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(acda("frobnicate").code, 1);
  EXPECT_EQ(acda("--help").code, 0);
  EXPECT_EQ(acda("run --dataset mnist --dry-run --out-dir " + out("bad_ds")).code, 1);
}
