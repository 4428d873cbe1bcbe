#include "acda/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace acda::trainer {

std::string_view dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Shapes: return "shapes";
    case DatasetKind::TwoMoons: return "twomoons";
    case DatasetKind::Folder: return "folder";
    case DatasetKind::Archive: return "archive";
  }
  return "unknown";
}

namespace {

DatasetKind parse_kind(const std::string& s) {
  if (s == "shapes") return DatasetKind::Shapes;
  if (s == "twomoons") return DatasetKind::TwoMoons;
  if (s == "folder") return DatasetKind::Folder;
  if (s == "archive") return DatasetKind::Archive;
  throw ConfigError("dataset.kind: unknown dataset '" + s + "' (shapes, twomoons, folder, archive)");
}

void field_check(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

void ExperimentConfig::set_dataset(DatasetKind kind, std::string path) {
  const bool to_moons = kind == DatasetKind::TwoMoons && dataset.kind != DatasetKind::TwoMoons;
  dataset.kind = kind;
  dataset.path = std::move(path);
  if (to_moons) {
    backbone = backbone::BackboneSpec::default_twomoons();
    projection_target = {16, 1, 1};
  }
}

void ExperimentConfig::validate() const {
  field_check(pretrain_epochs >= 0, "training.pretrain_epochs", "must be >= 0");
  field_check(align_epochs >= 0, "training.align_epochs", "must be >= 0");
  field_check(batch_size >= 2, "training.batch_size", "must be >= 2");
  field_check(std::isfinite(lr) && lr > 0.0, "training.lr", "must be positive");
  field_check(momentum >= 0.0 && momentum < 1.0, "training.momentum", "must lie in [0, 1)");
  field_check(delta >= 0.0 && delta <= 1.0, "training.delta", "must lie in [0, 1]");
  field_check(std::isfinite(lambda) && lambda >= 0.0, "training.lambda", "must be >= 0");
  field_check(kmeans_iterations >= 1, "training.kmeans_iterations", "must be >= 1");
  field_check(!seeds.empty(), "seeds", "at least one seed required");
  field_check(!kernel_multipliers.empty(), "kernel.multipliers", "at least one multiplier required");
  for (double m : kernel_multipliers) field_check(m > 0.0 && std::isfinite(m), "kernel.multipliers", "must be positive");
  field_check(dataset.n_source >= 2, "dataset.n_source", "must be >= 2");
  field_check(dataset.n_target >= 2, "dataset.n_target", "must be >= 2");
  if (dataset.kind == DatasetKind::Folder || dataset.kind == DatasetKind::Archive)
    field_check(!dataset.path.empty(), "dataset.path", "required for folder and archive datasets");
  try {
    dataset.shift.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("dataset.") + e.what());
  }
  field_check(dataset.rotation_degrees >= 0.0 && dataset.rotation_degrees <= 90.0, "dataset.rotation_degrees",
              "must lie in [0, 90]");
  try {
    backbone.validate();
    std::mt19937_64 probe(0);
    projection::ProjectionSet(projection, backbone.tap_shapes(), projection_target, probe);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("backbone/projection: ") + e.what());
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : backbone.blocks) blocks.push_back({b.out_channels, b.kernel_size, b.stride});
  return {
      {"seeds", seeds},
      {"dataset",
       {{"kind", dataset_kind_name(dataset.kind)},
        {"path", dataset.path},
        {"n_source", dataset.n_source},
        {"n_target", dataset.n_target},
        {"shift",
         {{"brightness", dataset.shift.brightness},
          {"noise", dataset.shift.noise},
          {"thickness", dataset.shift.thickness}}},
        {"rotation_degrees", dataset.rotation_degrees}}},
      {"training",
       {{"pretrain_epochs", pretrain_epochs},
        {"align_epochs", align_epochs},
        {"batch_size", batch_size},
        {"lr", lr},
        {"momentum", momentum},
        {"delta", delta},
        {"lambda", lambda},
        {"kmeans_iterations", kmeans_iterations}}},
      {"variant",
       {{"use_attention", use_attention},
        {"use_cross_layer", use_cross_layer},
        {"use_label_conditioning", use_label_conditioning}}},
      {"backbone",
       {{"input", {backbone.input.c, backbone.input.h, backbone.input.w}},
        {"blocks", blocks},
        {"taps", backbone.taps},
        {"embed_dim", backbone.embed_dim}}},
      {"projection",
       {{"variant", projection::variant_name(projection)},
        {"target_shape", {projection_target.c, projection_target.h, projection_target.w}}}},
      {"kernel", {{"multipliers", kernel_multipliers}}},
  };
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- YAML ------------------------------------------------------------------

namespace {

class Section {
 public:
  Section(const YAML::Node& node, std::string path, std::set<std::string> allowed)
      : node_(node), path_(std::move(path)), present_(node && !node.IsNull()) {
    if (!present_) return;
    if (!node_.IsMap()) throw ConfigError(where("") + "expected a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.contains(key)) throw ConfigError(where(key) + "unknown key");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (!present_ || !node_[key]) return;
    try {
      out = node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(key) + "has the wrong type");
    }
  }

  YAML::Node child(const std::string& key) const { return present_ ? node_[key] : YAML::Node(); }
  bool has(const std::string& key) const { return present_ && node_[key]; }
  std::string where(const std::string& key) const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? std::string("config: ") : p + ": ";
  }

 private:
  YAML::Node node_;
  std::string path_;
  bool present_;
};

projection::FeatureShape read_shape(const Section& s, const std::string& key, projection::FeatureShape fallback) {
  std::vector<int> v;
  s.read(key, v);
  if (v.empty()) return fallback;
  if (v.size() != 3) throw ConfigError(s.where(key) + "expected [c, h, w]");
  return {v[0], v[1], v[2]};
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  if (!root || root.IsNull()) return cfg;
  const Section top(root, "", {"seeds", "dataset", "training", "variant", "backbone", "projection", "kernel"});
  top.read("seeds", cfg.seeds);

  const Section ds(top.child("dataset"), "dataset",
                   {"kind", "path", "n_source", "n_target", "shift", "rotation_degrees"});
  std::string kind = "shapes";
  ds.read("kind", kind);
  std::string path;
  ds.read("path", path);
  cfg.set_dataset(parse_kind(kind), path);
  ds.read("n_source", cfg.dataset.n_source);
  ds.read("n_target", cfg.dataset.n_target);
  ds.read("rotation_degrees", cfg.dataset.rotation_degrees);
  const Section shift(ds.child("shift"), "dataset.shift", {"brightness", "noise", "thickness"});
  shift.read("brightness", cfg.dataset.shift.brightness);
  shift.read("noise", cfg.dataset.shift.noise);
  shift.read("thickness", cfg.dataset.shift.thickness);

  const Section tr(top.child("training"), "training",
                   {"pretrain_epochs", "align_epochs", "batch_size", "lr", "momentum", "delta", "lambda",
                    "kmeans_iterations"});
  tr.read("pretrain_epochs", cfg.pretrain_epochs);
  tr.read("align_epochs", cfg.align_epochs);
  tr.read("batch_size", cfg.batch_size);
  tr.read("lr", cfg.lr);
  tr.read("momentum", cfg.momentum);
  tr.read("delta", cfg.delta);
  tr.read("lambda", cfg.lambda);
  tr.read("kmeans_iterations", cfg.kmeans_iterations);

  const Section var(top.child("variant"), "variant", {"use_attention", "use_cross_layer", "use_label_conditioning"});
  var.read("use_attention", cfg.use_attention);
  var.read("use_cross_layer", cfg.use_cross_layer);
  var.read("use_label_conditioning", cfg.use_label_conditioning);

  const Section bb(top.child("backbone"), "backbone", {"input", "blocks", "taps", "embed_dim"});
  cfg.backbone.input = read_shape(bb, "input", cfg.backbone.input);
  if (bb.has("blocks")) {
    std::vector<std::vector<int>> blocks;
    bb.read("blocks", blocks);
    cfg.backbone.blocks.clear();
    for (const auto& b : blocks) {
      if (b.size() != 3) throw ConfigError("backbone.blocks: each block is [out_channels, kernel_size, stride]");
      cfg.backbone.blocks.push_back({b[0], b[1], b[2]});
    }
  }
  bb.read("taps", cfg.backbone.taps);
  bb.read("embed_dim", cfg.backbone.embed_dim);

  const Section pr(top.child("projection"), "projection", {"variant", "target_shape"});
  if (pr.has("variant")) {
    std::string v;
    pr.read("variant", v);
    cfg.projection = projection::parse_variant(v);
  }
  cfg.projection_target = read_shape(pr, "target_shape", cfg.projection_target);

  const Section k(top.child("kernel"), "kernel", {"multipliers"});
  k.read("multipliers", cfg.kernel_multipliers);

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

data::DomainPairDataset make_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  const auto& d = config.dataset;
  switch (d.kind) {
    case DatasetKind::Shapes: return data::make_shapes_dataset(seed, d.n_source, d.n_target, d.shift);
    case DatasetKind::TwoMoons: return data::make_twomoons_dataset(seed, d.n_source, d.n_target, d.rotation_degrees);
    case DatasetKind::Folder: return data::load_image_folder(d.path, config.backbone.input);
    case DatasetKind::Archive: return data::load_dataset(d.path);
  }
  throw ConfigError("dataset.kind: unknown");
}

}  // namespace acda::trainer
