#pragma once

// Two-phase training: source-only pretraining on cross-entropy, then joint
// minimization of cross-entropy plus the weighted alignment loss.

#include "acda/alignment.hpp"
#include "acda/backbone.hpp"
#include "acda/config.hpp"
#include "acda/data.hpp"
#include "acda/projection.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace acda::trainer {

using alignment::LossBreakdown;

class NonFiniteLoss : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

struct Model {
  backbone::Backbone backbone;
  projection::ProjectionSet projection;

  std::vector<NamedParameter> parameters() const;
};

Model make_model(const ExperimentConfig& config, int num_classes, std::uint64_t seed);

// v <- momentum v + g; p <- p - lr v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<NamedParameter> params, double lr, double momentum);
  void zero_grad();
  void step();
  const std::vector<NamedParameter>& parameters() const { return params_; }

 private:
  std::vector<NamedParameter> params_;
  std::vector<Vector> velocity_;
  double lr_, momentum_;
};

// Quantities held constant while differentiating the alignment loss.
struct AlignmentContext {
  attention::AttentionMatrix w;
  alignment::PairKernels cross_kernels;
  kernels::KernelSpec same_kernel;
};

struct Objective {
  Tensor l_all;
  LossBreakdown breakdown;
  AlignmentContext context;
  int classes_used = -1;  // -1 when conditioning is not active
};

// Builds L_all for one source/target batch. When `frozen` is given its
// attention and kernels are reused instead of being recomputed. Target
// pseudo-labels are required only when label conditioning is active.
Objective alignment_objective(const Model& model, const ExperimentConfig& config, const Tensor& src_x,
                              std::span<const int> src_y, const Tensor& tgt_x, std::span<const int> tgt_pseudo,
                              const AlignmentContext* frozen = nullptr);

struct EpochRecord {
  int epoch = 0;  // 1-based across both phases
  std::string phase;
  LossBreakdown losses;  // batch means
  double source_acc = 0.0;
  double target_acc = 0.0;
  int conditioning_skips = 0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::vector<LossBreakdown> steps;
  double final_target_acc = 0.0;
  double final_source_acc = 0.0;
  double wall_clock_s = 0.0;
};

// Only path to target-domain labels.
class Evaluator {
 public:
  static double accuracy(const backbone::Backbone& net, const Tensor& inputs, std::span<const int> labels);
  static double source_accuracy(const backbone::Backbone& net, const data::DomainPairDataset& ds);
  static double target_accuracy(const backbone::Backbone& net, const data::DomainPairDataset& ds);
  static const std::vector<int>& target_labels(const data::DomainPairDataset& ds);
};

// argmax-of-logits accuracy; throws on an empty set.
double evaluate(const backbone::Backbone& net, const Tensor& inputs, std::span<const int> labels);

// (n, embed_dim) embeddings computed in chunks without building a graph.
Matrix embed(const backbone::Backbone& net, const Matrix& inputs, const projection::FeatureShape& shape);

class Trainer {
 public:
  Trainer(ExperimentConfig config, const data::DomainPairDataset& data, std::uint64_t seed);

  void pretrain();
  void align();
  RunRecord run();

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const RunRecord& record() const { return record_; }
  const ExperimentConfig& config() const { return config_; }

  // Directory receiving a diagnostic dump when a loss turns non-finite.
  void set_diagnostics_dir(std::filesystem::path dir) { diagnostics_dir_ = std::move(dir); }

 private:
  std::vector<int> shuffled(int n, std::mt19937_64& rng) const;
  void refresh_pseudo_labels(int epoch);
  void finish_epoch(const std::string& phase, const std::vector<LossBreakdown>& steps, int skips);
  [[noreturn]] void abort_non_finite(const LossBreakdown& b, std::span<const int> src_rows,
                                     std::span<const int> tgt_rows);

  ExperimentConfig config_;
  const data::DomainPairDataset& data_;
  std::uint64_t seed_;
  Model model_;
  SgdMomentum optimizer_;
  std::mt19937_64 source_rng_, target_rng_;
  std::vector<int> pseudo_labels_;
  RunRecord record_;
  std::optional<std::filesystem::path> diagnostics_dir_;
  int epoch_ = 0;
};

// Line-delimited JSON: one object per epoch, then one summary object.
void write_run_log(const std::filesystem::path& path, const RunRecord& record);
RunRecord read_run_log(const std::filesystem::path& path);

// Named-array checkpoint of all model parameters plus the network specs.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const ExperimentConfig& config,
                     std::uint64_t seed);
// Loads parameters into `model`; throws naming the first mismatching array.
std::uint64_t load_checkpoint(const std::filesystem::path& path, Model& model);

}  // namespace acda::trainer
