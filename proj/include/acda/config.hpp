#pragma once

// Experiment configuration: every hyper-parameter of a run, loaded from a
// YAML file whose sections mirror the struct below. Unknown keys are errors.

#include "acda/backbone.hpp"
#include "acda/data.hpp"
#include "acda/projection.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace acda::trainer {

enum class DatasetKind { Shapes, TwoMoons, Folder, Archive };

std::string_view dataset_kind_name(DatasetKind kind);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Shapes;
  std::string path;  // folder root or dataset archive
  int n_source = 512;
  int n_target = 512;
  data::ShiftSpec shift = data::ShiftSpec::default_shift();
  double rotation_degrees = 30.0;
};

struct ExperimentConfig {
  int pretrain_epochs = 10;
  int align_epochs = 40;
  int batch_size = 64;
  double lr = 0.001;
  double momentum = 0.9;
  double delta = 0.7;
  double lambda = 0.3;
  int kmeans_iterations = 20;

  bool use_attention = true;
  bool use_cross_layer = true;
  bool use_label_conditioning = true;

  std::vector<std::uint64_t> seeds{0};
  DatasetConfig dataset;
  backbone::BackboneSpec backbone = backbone::BackboneSpec::default_shapes();
  projection::Variant projection = projection::Variant::Conv3Residual;
  projection::FeatureShape projection_target{32, 4, 4};
  std::vector<double> kernel_multipliers{0.25, 0.5, 1.0, 2.0, 4.0};

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Switches dataset kind and, for two moons, the matching network defaults.
  void set_dataset(DatasetKind kind, std::string path = {});

  nlohmann::json to_json() const;
  // FNV-1a of the canonical JSON form, as 16 hex digits.
  std::string hash() const;
};

ExperimentConfig parse_config_text(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Builds the dataset described by the config for a given seed.
data::DomainPairDataset make_dataset(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace acda::trainer
