#include "acda/config.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace acda;
using namespace acda::trainer;

namespace {

std::string error_of(const std::string& yaml) {
  try {
    parse_config_text(yaml);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, Defaults) {
  const ExperimentConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.delta, 0.7);
  EXPECT_DOUBLE_EQ(cfg.lambda, 0.3);
  EXPECT_EQ(cfg.projection, projection::Variant::Conv3Residual);
  EXPECT_EQ(cfg.kernel_multipliers, (std::vector<double>{0.25, 0.5, 1.0, 2.0, 4.0}));
  EXPECT_TRUE(cfg.use_attention && cfg.use_cross_layer && cfg.use_label_conditioning);
  EXPECT_EQ(cfg.dataset.kind, DatasetKind::Shapes);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(parse_config_text("").hash(), cfg.hash());
}

TEST(Config, ParsesEverySection) {
  const auto cfg = parse_config_text(R"(
seeds: [4, 9]
dataset:
  kind: shapes
  n_source: 64
  n_target: 32
  shift: {brightness: 0.2, noise: 0.05, thickness: 1}
training:
  pretrain_epochs: 2
  align_epochs: 3
  batch_size: 16
  lr: 0.01
  momentum: 0.5
  delta: 0.4
  lambda: 0.9
  kmeans_iterations: 5
variant:
  use_attention: false
  use_label_conditioning: false
backbone:
  blocks: [[8, 3, 1], [16, 3, 2], [16, 3, 2]]
  taps: [0, 1, 2]
  embed_dim: 12
projection:
  variant: conv-1
  target_shape: [16, 4, 4]
kernel:
  multipliers: [1, 2]
)");
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{4, 9}));
  EXPECT_EQ(cfg.dataset.n_target, 32);
  EXPECT_DOUBLE_EQ(cfg.dataset.shift.thickness, 1.0);
  EXPECT_EQ(cfg.batch_size, 16);
  EXPECT_DOUBLE_EQ(cfg.delta, 0.4);
  EXPECT_EQ(cfg.kmeans_iterations, 5);
  EXPECT_FALSE(cfg.use_attention);
  EXPECT_TRUE(cfg.use_cross_layer);
  EXPECT_EQ(cfg.backbone.blocks.size(), 3u);
  EXPECT_EQ(cfg.backbone.blocks[1].stride, 2);
  EXPECT_EQ(cfg.backbone.embed_dim, 12);
  EXPECT_EQ(cfg.projection, projection::Variant::Conv1);
  EXPECT_EQ(cfg.projection_target, (projection::FeatureShape{16, 4, 4}));
  EXPECT_EQ(cfg.kernel_multipliers, (std::vector<double>{1.0, 2.0}));
}

TEST(Config, UnknownKeyNamesItsPath) {
  const auto msg = error_of("training:\n  learning_rate: 0.1\n");
  EXPECT_NE(msg.find("training.learning_rate"), std::string::npos) << msg;
  EXPECT_NE(error_of("bogus: 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(error_of("dataset:\n  shift:\n    blur: 1\n").find("dataset.shift.blur"), std::string::npos);
}

TEST(Config, WrongTypesAndMalformedYaml) {
  EXPECT_NE(error_of("training:\n  lr: fast\n").find("training.lr"), std::string::npos);
  EXPECT_NE(error_of("training: 3\n").find("training"), std::string::npos);
  EXPECT_FALSE(error_of("training: [\n").empty());
  EXPECT_NE(error_of("projection:\n  target_shape: [4, 4]\n").find("projection.target_shape"), std::string::npos);
  EXPECT_NE(error_of("dataset:\n  kind: imagenet\n").find("imagenet"), std::string::npos);
}

TEST(Config, ValidationRejectsOutOfRangeValues) {
  EXPECT_NE(error_of("training:\n  delta: 1.5\n").find("training.delta"), std::string::npos);
  EXPECT_NE(error_of("training:\n  lambda: -1\n").find("training.lambda"), std::string::npos);
  EXPECT_NE(error_of("training:\n  lr: 0\n").find("training.lr"), std::string::npos);
  EXPECT_NE(error_of("training:\n  batch_size: 1\n").find("training.batch_size"), std::string::npos);
  EXPECT_NE(error_of("seeds: []\n").find("seeds"), std::string::npos);
  EXPECT_NE(error_of("kernel:\n  multipliers: [1, -2]\n").find("kernel.multipliers"), std::string::npos);
  EXPECT_NE(error_of("dataset:\n  kind: folder\n").find("dataset.path"), std::string::npos);
  EXPECT_NE(error_of("dataset:\n  shift: {noise: 3}\n").find("dataset."), std::string::npos);
  EXPECT_FALSE(error_of("projection:\n  variant: pool-only\n").empty());
  EXPECT_FALSE(error_of("backbone:\n  taps: [3, 1]\n").empty());
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = parse_config_text("training:\n  delta: 0.5\n");
  const auto b = parse_config_text("training: {delta: 0.5}\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_NE(a.hash(), parse_config_text("training:\n  delta: 0.6\n").hash());
  EXPECT_EQ(parse_config_text(a.to_json().dump()).hash(), a.hash());
}

TEST(Config, TwoMoonsSwitchesNetworkDefaults) {
  const auto cfg = parse_config_text("dataset:\n  kind: twomoons\n  rotation_degrees: 45\n");
  EXPECT_EQ(cfg.dataset.kind, DatasetKind::TwoMoons);
  EXPECT_EQ(cfg.backbone.input, (projection::FeatureShape{2, 1, 1}));
  EXPECT_EQ(cfg.projection_target, (projection::FeatureShape{16, 1, 1}));
  const auto ds = make_dataset(cfg, 0);
  EXPECT_EQ(ds.input_shape, cfg.backbone.input);
  EXPECT_EQ(ds.source.size(), cfg.dataset.n_source);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "acda_test_config.yaml";
  std::ofstream(path) << "training:\n  align_epochs: 7\n";
  EXPECT_EQ(load_config(path).align_epochs, 7);
  std::filesystem::remove(path);
  try {
    load_config(path);
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
}
