// acda: command-line harness for training runs, ablations, sweeps,
// embedding dumps and image-folder ingestion.
//
// Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.

#include "acda/archive.hpp"
#include "acda/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using acda::experiment::Manifest;
using acda::trainer::DatasetKind;
using acda::trainer::ExperimentConfig;
namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::string seeds;
  std::string out_dir = "acda_out";
  std::string dataset;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_dry_run = true) {
  cmd->add_option("--config", o.config_path, "YAML experiment config (defaults apply when omitted)");
  cmd->add_option("--seeds", o.seeds, "seed count N (seeds 0..N-1) or comma-separated seed list");
  cmd->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--dataset", o.dataset, "shapes | twomoons | folder:<path> | archive:<path>");
  if (with_dry_run) cmd->add_flag("--dry-run", o.dry_run, "validate and print the resolved config only");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  if (text.find(',') == std::string::npos) {
    std::size_t used = 0;
    long long n = -1;
    try {
      n = std::stoll(text, &used);
    } catch (const std::exception&) {
    }
    if (used != text.size() || n < 1) throw acda::ConfigError("--seeds: expected a positive count or a list, got '" + text + "'");
    std::vector<std::uint64_t> out;
    for (long long i = 0; i < n; ++i) out.push_back(static_cast<std::uint64_t>(i));
    return out;
  }
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw acda::ConfigError("--seeds: cannot parse seed '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void apply_dataset_flag(ExperimentConfig& cfg, const std::string& flag) {
  if (flag.empty()) return;
  const auto colon = flag.find(':');
  const auto kind = flag.substr(0, colon);
  const auto path = colon == std::string::npos ? std::string() : flag.substr(colon + 1);
  if (kind == "shapes") cfg.set_dataset(DatasetKind::Shapes);
  else if (kind == "twomoons") cfg.set_dataset(DatasetKind::TwoMoons);
  else if (kind == "folder") cfg.set_dataset(DatasetKind::Folder, path);
  else if (kind == "archive") cfg.set_dataset(DatasetKind::Archive, path);
  else throw acda::ConfigError("--dataset: unknown dataset '" + flag + "'");
  if ((kind == "folder" || kind == "archive") && path.empty())
    throw acda::ConfigError("--dataset: '" + kind + "' needs a path, as in " + kind + ":<path>");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : acda::trainer::load_config(o.config_path);
  apply_dataset_flag(cfg, o.dataset);
  if (!o.seeds.empty()) cfg.seeds = parse_seeds(o.seeds);
  cfg.validate();
  return cfg;
}

void print_config(const ExperimentConfig& cfg) {
  std::cout << cfg.to_json().dump(2) << "\nconfig_hash: " << cfg.hash() << '\n';
}

void say(const std::string& line) { std::cerr << line << std::endl; }

int cmd_run(const CommonOptions& o) {
  const auto cfg = resolve(o);
  if (o.dry_run) {
    print_config(cfg);
    return 0;
  }
  Manifest manifest(o.out_dir, "run", cfg.hash());
  const auto outputs = acda::experiment::run_seeds(cfg, cfg.seeds, o.out_dir, manifest, true, say);

  std::vector<double> accs;
  for (const auto& r : outputs.records) accs.push_back(r.final_target_acc);
  const auto summary = fs::path(o.out_dir) / "summary.csv";
  {
    std::ofstream out(summary, std::ios::trunc);
    out << "seed,final_target_acc,final_source_acc,wall_clock_s\n";
    for (const auto& r : outputs.records)
      out << r.seed << ',' << acda::experiment::format_double(r.final_target_acc) << ','
          << acda::experiment::format_double(r.final_source_acc) << ','
          << acda::experiment::format_double(r.wall_clock_s) << '\n';
  }
  manifest.add("summary", summary);
  std::printf("target accuracy: mean %.4f, stderr %.4f over %zu seed(s)\n", acda::experiment::mean(accs),
              acda::experiment::standard_error(accs), accs.size());
  return 0;
}

void print_table(const acda::experiment::ResultsTable& t, const std::string& key) {
  std::printf("%-16s %8s %8s  seeds\n", key.c_str(), "mean", "stderr");
  for (const auto& r : t.rows())
    std::printf("%-16s %8.4f %8.4f  %zu\n", r.label.c_str(), r.mean, r.stderr_, r.seeds.size());
}

int cmd_ablation(const CommonOptions& o) {
  const auto cfg = resolve(o);
  if (cfg.seeds.size() < acda::experiment::ResultsTable::kMinSeeds)
    throw acda::ConfigError("seeds: ablation needs at least 3 seeds (use --seeds 3)");
  if (o.dry_run) {
    print_config(cfg);
    for (const auto& v : acda::experiment::ablation_variants(cfg)) std::cout << "variant: " << v.name << '\n';
    return 0;
  }
  Manifest manifest(o.out_dir, "ablation", cfg.hash());
  print_table(acda::experiment::run_ablation(cfg, cfg.seeds, o.out_dir, manifest, say), "variant");
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& param, const std::string& grid) {
  const auto cfg = resolve(o);
  acda::experiment::SweepSpec spec{param, acda::experiment::parse_grid(grid), cfg.seeds};
  spec.validate();
  for (double v : spec.values) spec.apply(cfg, v);
  if (o.dry_run) {
    print_config(cfg);
    std::cout << "sweep: " << param << " over " << spec.values.size() << " values\n";
    return 0;
  }
  Manifest manifest(o.out_dir, "sweep", cfg.hash());
  print_table(acda::experiment::run_sweep(spec, cfg, o.out_dir, manifest, say), param);
  return 0;
}

int cmd_embed(const CommonOptions& o, const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) throw acda::ConfigError("--checkpoint: no such file " + checkpoint);
  ExperimentConfig cfg = o.config_path.empty() ? acda::experiment::checkpoint_config(checkpoint)
                                               : acda::trainer::load_config(o.config_path);
  apply_dataset_flag(cfg, o.dataset);
  cfg.validate();
  std::uint64_t seed = acda::archive::read(checkpoint).meta.value("seed", std::uint64_t{0});
  if (!o.seeds.empty()) seed = parse_seeds(o.seeds).front();
  const auto data = acda::trainer::make_dataset(cfg, seed);
  auto model = acda::trainer::make_model(cfg, data.num_classes, seed);
  acda::trainer::load_checkpoint(checkpoint, model);

  Manifest manifest(o.out_dir, "embed", cfg.hash());
  const auto csv = fs::path(o.out_dir) / "embeddings.csv";
  acda::experiment::write_embedding_csv(csv, model.backbone, data);
  manifest.add("embeddings", csv);
  std::printf("wrote %d rows to %s\n", data.source.size() + data.target.size(), csv.string().c_str());
  return 0;
}

int cmd_ingest(const CommonOptions& o) {
  if (o.dataset.rfind("folder:", 0) != 0) throw acda::ConfigError("--dataset: ingest expects folder:<path>");
  const auto cfg = resolve(o);
  if (o.dry_run) {
    print_config(cfg);
    return 0;
  }
  const auto data = acda::trainer::make_dataset(cfg, 0);
  Manifest manifest(o.out_dir, "ingest", cfg.hash());
  const auto out = fs::path(o.out_dir) / "dataset.acda";
  acda::data::save_dataset(out, data);
  manifest.add("dataset", out);
  std::printf("ingested %d source and %d target images into %s (use --dataset archive:%s)\n", data.source.size(),
              data.target.size(), out.string().c_str(), out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  acda::configure_allocator();
  CLI::App app{"acda: cross-layer attention-weighted domain adaptation experiments"};
  app.require_subcommand(1);

  CommonOptions run_o, abl_o, sweep_o, embed_o, ingest_o;
  auto* run = app.add_subcommand("run", "train one model per seed and summarize");
  add_common(run, run_o);
  auto* abl = app.add_subcommand("ablation", "five-row ablation table");
  add_common(abl, abl_o);
  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep over delta or lambda");
  add_common(sweep, sweep_o);
  std::string param = "delta", grid = "0.1,0.3,0.5,0.7,0.9";
  sweep->add_option("--param", param, "delta or lambda")->capture_default_str();
  sweep->add_option("--grid", grid, "comma-separated values")->capture_default_str();
  auto* emb = app.add_subcommand("embed", "dump source and target embeddings from a checkpoint");
  add_common(emb, embed_o, false);
  std::string checkpoint;
  emb->add_option("--checkpoint", checkpoint, "checkpoint written by run")->required();
  auto* ing = app.add_subcommand("ingest", "convert an image folder into a dataset archive");
  add_common(ing, ingest_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(run_o);
    if (abl->parsed()) return cmd_ablation(abl_o);
    if (sweep->parsed()) return cmd_sweep(sweep_o, param, grid);
    if (emb->parsed()) return cmd_embed(embed_o, checkpoint);
    if (ing->parsed()) return cmd_ingest(ingest_o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
