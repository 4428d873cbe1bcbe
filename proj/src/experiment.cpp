#include "acda/experiment.hpp"

#include "acda/archive.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace acda::experiment {

namespace fs = std::filesystem;

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double standard_error(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  const auto n = static_cast<double>(xs.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

// ---- ResultsTable ----------------------------------------------------------

void ResultsTable::add(std::string label, std::vector<std::uint64_t> seeds, std::vector<double> accuracies) {
  if (accuracies.size() < kMinSeeds)
    throw ConfigError("results row '" + label + "' needs at least " + std::to_string(kMinSeeds) +
                      " seeds for a standard error, got " + std::to_string(accuracies.size()));
  if (seeds.size() != accuracies.size()) throw ShapeError("results row '" + label + "': seed/accuracy count mismatch");
  ResultRow row;
  row.label = std::move(label);
  row.mean = mean(accuracies);
  row.stderr_ = standard_error(accuracies);
  row.seeds = std::move(seeds);
  row.accuracies = std::move(accuracies);
  rows_.push_back(std::move(row));
}

const ResultRow& ResultsTable::at(const std::string& label) const {
  for (const auto& r : rows_)
    if (r.label == label) return r;
  throw std::out_of_range("no results row '" + label + "'");
}

void ResultsTable::write_csv(const fs::path& path, const std::string& key_header) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << key_header << ",mean,stderr,seeds\n";
  for (const auto& r : rows_) {
    std::string seeds;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
    out << r.label << ',' << format_double(r.mean) << ',' << format_double(r.stderr_) << ',' << seeds << '\n';
  }
}

// ---- Manifest --------------------------------------------------------------

Manifest::Manifest(fs::path out_dir, std::string command, std::string config_hash) : out_dir_(std::move(out_dir)) {
  doc_ = {{"command", std::move(command)}, {"config_hash", std::move(config_hash)}, {"artifacts", nlohmann::json::array()}};
  fs::create_directories(out_dir_);
  flush();
}

void Manifest::add(const std::string& kind, const fs::path& path) {
  doc_["artifacts"].push_back({{"kind", kind}, {"path", fs::relative(path, out_dir_).generic_string()}});
  flush();
}

void Manifest::flush() const {
  const auto tmp = out_dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write manifest in " + out_dir_.string());
    out << doc_.dump(2) << '\n';
  }
  fs::rename(tmp, out_dir_ / "manifest.json");
}

// ---- runs ------------------------------------------------------------------

namespace {

void write_curves(const fs::path& path, const RunRecord& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "epoch,phase,l_ce,l_cross_ali,l_same_ali,l_ali,l_all,source_acc,target_acc\n";
  for (const auto& e : r.epochs)
    out << e.epoch << ',' << e.phase << ',' << format_double(e.losses.l_ce) << ','
        << format_double(e.losses.l_cross_ali) << ',' << format_double(e.losses.l_same_ali) << ','
        << format_double(e.losses.l_ali) << ',' << format_double(e.losses.l_all) << ','
        << format_double(e.source_acc) << ',' << format_double(e.target_acc) << '\n';
}

}  // namespace

RunOutputs run_seeds(const ExperimentConfig& config, std::span<const std::uint64_t> seeds, const fs::path& dir,
                     Manifest& manifest, bool checkpoints, const Logger& log) {
  config.validate();
  fs::create_directories(dir);
  RunOutputs outputs;
  for (const auto seed : seeds) {
    const auto stem = "seed" + std::to_string(seed);
    const auto data = trainer::make_dataset(config, seed);
    trainer::Trainer tr(config, data, seed);
    tr.set_diagnostics_dir(dir);
    auto record = tr.run();

    const auto log_path = dir / (stem + ".jsonl");
    trainer::write_run_log(log_path, record);
    manifest.add("run_log", log_path);
    const auto curves = dir / (stem + "_curves.csv");
    write_curves(curves, record);
    manifest.add("curves", curves);
    if (checkpoints) {
      const auto ckpt = dir / (stem + ".ckpt");
      trainer::save_checkpoint(ckpt, tr.model(), config, seed);
      manifest.add("checkpoint", ckpt);
    }
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s seed %llu: target acc %.4f, source acc %.4f (%.1f s)", dir.string().c_str(),
                    static_cast<unsigned long long>(seed), record.final_target_acc, record.final_source_acc,
                    record.wall_clock_s);
      log(buf);
    }
    outputs.records.push_back(std::move(record));
    outputs.logs.push_back(log_path);
  }
  return outputs;
}

ResultRow summarize_logs(const std::string& label, std::span<const fs::path> logs) {
  ResultsTable t;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accs;
  for (const auto& p : logs) {
    const auto r = trainer::read_run_log(p);
    seeds.push_back(r.seed);
    accs.push_back(r.final_target_acc);
  }
  t.add(label, std::move(seeds), std::move(accs));
  return t.rows().front();
}

// ---- ablation --------------------------------------------------------------

std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base) {
  std::vector<AblationVariant> out;
  auto full = base;
  full.use_attention = full.use_cross_layer = full.use_label_conditioning = true;

  auto source_only = full;
  source_only.lambda = 0.0;
  out.push_back({"source-only", source_only});

  auto same_layer = full;
  same_layer.use_cross_layer = false;
  out.push_back({"same-layer", same_layer});

  auto no_cond = full;
  no_cond.use_label_conditioning = false;
  out.push_back({"no-conditioning", no_cond});

  auto no_att = full;
  no_att.use_attention = false;
  out.push_back({"no-attention", no_att});

  out.push_back({"full", full});
  return out;
}

ResultsTable run_ablation(const ExperimentConfig& base, std::span<const std::uint64_t> seeds, const fs::path& out_dir,
                          Manifest& manifest, const Logger& log) {
  if (seeds.size() < ResultsTable::kMinSeeds)
    throw ConfigError("seeds: ablation needs at least " + std::to_string(ResultsTable::kMinSeeds) + " seeds");
  ResultsTable table;
  for (const auto& v : ablation_variants(base)) {
    const auto runs = run_seeds(v.config, seeds, out_dir / v.name, manifest, false, log);
    const auto row = summarize_logs(v.name, runs.logs);
    table.add(row.label, row.seeds, row.accuracies);
  }
  const auto csv = out_dir / "ablation.csv";
  table.write_csv(csv, "variant");
  manifest.add("results", csv);
  return table;
}

// ---- sweep -----------------------------------------------------------------

void SweepSpec::validate() const {
  if (parameter != "delta" && parameter != "lambda")
    throw ConfigError("sweep.parameter: expected 'delta' or 'lambda', got '" + parameter + "'");
  if (values.empty()) throw ConfigError("sweep.grid: empty grid");
  std::set<double> seen;
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("sweep.grid: non-finite value");
    if (parameter == "delta" && (v < 0.0 || v > 1.0))
      throw ConfigError("sweep.grid: delta value " + format_double(v) + " outside [0, 1]");
    if (parameter == "lambda" && v < 0.0)
      throw ConfigError("sweep.grid: lambda value " + format_double(v) + " is negative");
    if (!seen.insert(v).second) throw ConfigError("sweep.grid: duplicate value " + format_double(v));
  }
  if (seeds.size() < ResultsTable::kMinSeeds)
    throw ConfigError("seeds: sweep needs at least " + std::to_string(ResultsTable::kMinSeeds) + " seeds per point");
}

ExperimentConfig SweepSpec::apply(const ExperimentConfig& base, double value) const {
  auto cfg = base;
  (parameter == "delta" ? cfg.delta : cfg.lambda) = value;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("sweep.grid: cannot parse '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("sweep.grid: cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

ResultsTable run_sweep(const SweepSpec& spec, const ExperimentConfig& base, const fs::path& out_dir,
                       Manifest& manifest, const Logger& log) {
  spec.validate();
  for (double v : spec.values) spec.apply(base, v);
  ResultsTable table;
  for (double v : spec.values) {
    const auto label = format_double(v);
    const auto runs = run_seeds(spec.apply(base, v), spec.seeds, out_dir / (spec.parameter + "_" + label), manifest,
                                false, log);
    const auto row = summarize_logs(label, runs.logs);
    table.add(row.label, row.seeds, row.accuracies);
  }
  const auto csv = out_dir / ("sweep_" + spec.parameter + ".csv");
  table.write_csv(csv, "value");
  manifest.add("results", csv);
  return table;
}

// ---- embeddings ------------------------------------------------------------

void write_embedding_csv(const fs::path& path, const backbone::Backbone& net, const data::DomainPairDataset& ds) {
  const Matrix es = trainer::embed(net, ds.source.inputs(), ds.input_shape);
  const Matrix et = trainer::embed(net, ds.target.inputs(), ds.input_shape);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "domain,label";
  for (Eigen::Index k = 0; k < es.cols(); ++k) out << ",e_" << (k + 1);
  out << '\n';
  auto emit = [&out](const char* domain, const Matrix& e, const std::vector<int>& labels) {
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      out << domain << ',' << labels[static_cast<std::size_t>(i)];
      for (Eigen::Index k = 0; k < e.cols(); ++k) out << ',' << format_double(e(i, k));
      out << '\n';
    }
  };
  emit("source", es, ds.source.labels());
  emit("target", et, trainer::Evaluator::target_labels(ds));
}

ExperimentConfig checkpoint_config(const fs::path& checkpoint) {
  const auto ar = archive::read(checkpoint);
  if (ar.meta.value("kind", "") != "checkpoint" || !ar.meta.contains("config"))
    throw RuntimeFailure(checkpoint.string() + " is not a checkpoint");
  // JSON is valid YAML, so the stored config goes through the same parser.
  return trainer::parse_config_text(ar.meta.at("config").dump());
}

}  // namespace acda::experiment
