#pragma once

// Multi-seed experiment drivers behind the command-line tool: plain runs,
// the five-row ablation, one-parameter sweeps and embedding dumps. Every
// driver writes its artifacts under an output directory and records them in
// a manifest; result tables are rebuilt from the per-run logs.

#include "acda/config.hpp"
#include "acda/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace acda::experiment {

using trainer::ExperimentConfig;
using trainer::RunRecord;

struct ResultRow {
  std::string label;
  double mean = 0.0;
  double stderr_ = 0.0;  // sample standard deviation / sqrt(n)
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
};

double mean(std::span<const double> xs);
double standard_error(std::span<const double> xs);

class ResultsTable {
 public:
  static constexpr std::size_t kMinSeeds = 3;

  // Throws ConfigError when fewer than kMinSeeds accuracies are given.
  void add(std::string label, std::vector<std::uint64_t> seeds, std::vector<double> accuracies);
  const std::vector<ResultRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const ResultRow& at(const std::string& label) const;

  // Columns: <key_header>,mean,stderr,seeds.
  void write_csv(const std::filesystem::path& path, const std::string& key_header = "variant") const;

 private:
  std::vector<ResultRow> rows_;
};

// Artifact index written to <out_dir>/manifest.json after every addition so
// that an interrupted command still leaves a consistent listing.
class Manifest {
 public:
  Manifest(std::filesystem::path out_dir, std::string command, std::string config_hash);
  void add(const std::string& kind, const std::filesystem::path& path);
  const nlohmann::json& json() const { return doc_; }

 private:
  void flush() const;
  std::filesystem::path out_dir_;
  nlohmann::json doc_;
};

using Logger = std::function<void(const std::string&)>;

struct RunOutputs {
  std::vector<RunRecord> records;
  std::vector<std::filesystem::path> logs;
};

// Trains one model per seed. Writes <dir>/seed<k>.jsonl, <dir>/seed<k>_curves.csv
// and, when requested, <dir>/seed<k>.ckpt.
RunOutputs run_seeds(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                     const std::filesystem::path& dir, Manifest& manifest, bool checkpoints = true,
                     const Logger& log = {});

// Mean/stderr row built from completed run logs only.
ResultRow summarize_logs(const std::string& label, std::span<const std::filesystem::path> logs);

struct AblationVariant {
  std::string name;
  ExperimentConfig config;
};

// source-only, same-layer, no-conditioning, no-attention, full.
std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base);

ResultsTable run_ablation(const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                          const std::filesystem::path& out_dir, Manifest& manifest, const Logger& log = {});

struct SweepSpec {
  std::string parameter;  // "delta" or "lambda"
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;

  void validate() const;
  ExperimentConfig apply(const ExperimentConfig& base, double value) const;
};

std::vector<double> parse_grid(const std::string& text);

// Writes <out_dir>/sweep_<parameter>.csv with columns value,mean,stderr.
ResultsTable run_sweep(const SweepSpec& spec, const ExperimentConfig& base, const std::filesystem::path& out_dir,
                       Manifest& manifest, const Logger& log = {});

// One row per sample: domain,label,e_1..e_d with source rows first.
void write_embedding_csv(const std::filesystem::path& path, const backbone::Backbone& net,
                         const data::DomainPairDataset& dataset);

// Rebuilds the experiment configuration stored in a checkpoint.
ExperimentConfig checkpoint_config(const std::filesystem::path& checkpoint);

std::string format_double(double v);

}  // namespace acda::experiment
