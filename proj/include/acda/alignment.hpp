#pragma once

// Alignment objectives: attention-weighted cross-layer MMD, same-layer MMD on
// the embeddings, their delta/lambda combination with the supervised loss,
// and class-conditioned alignment driven by k-means pseudo-labels.

#include "acda/attention.hpp"
#include "acda/kernels.hpp"
#include "acda/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace acda::alignment {

using attention::AttentionMatrix;
using kernels::KernelSpec;

// Kernel for every (target layer i, source layer j) pair.
class PairKernels {
 public:
  PairKernels(int m, std::vector<KernelSpec> specs);
  static PairKernels broadcast(int m, const KernelSpec& spec);

  int m() const { return m_; }
  const KernelSpec& at(int i, int j) const { return specs_.at(static_cast<std::size_t>(i * m_ + j)); }

 private:
  int m_;
  std::vector<KernelSpec> specs_;
};

// Median-heuristic kernel family per pair, from the pooled flattened
// features of source layer j and target layer i.
PairKernels median_pair_kernels(std::span<const Tensor> src_feats, std::span<const Tensor> tgt_feats,
                                std::span<const double> multipliers = kernels::default_multipliers());

// sum_i sum_j w(i, j) * mmd2(src_j, tgt_i). Features are flattened per sample.
Tensor cross_layer_loss(std::span<const Tensor> src_feats, std::span<const Tensor> tgt_feats,
                        const AttentionMatrix& w, const PairKernels& kernels);
Tensor cross_layer_loss(std::span<const Tensor> src_feats, std::span<const Tensor> tgt_feats,
                        const AttentionMatrix& w, const KernelSpec& spec);

// mmd2 between the final embeddings.
Tensor same_layer_loss(const Tensor& f_src, const Tensor& f_tgt, const KernelSpec& spec);

struct LossBreakdown {
  double l_ce = 0.0;
  double l_cross_ali = 0.0;
  double l_same_ali = 0.0;
  double l_ali = 0.0;
  double l_all = 0.0;
  double delta = 0.0;
  double lambda = 0.0;
  std::optional<AttentionMatrix> w;

  // |l_ali - (delta l_cross + (1-delta) l_same)| and |l_all - (l_ce + lambda l_ali)|.
  double identity_residual() const;
};

// l_ali = delta l_cross + (1 - delta) l_same; l_all = l_ce + lambda l_ali.
LossBreakdown combine(double l_cross, double l_same, double l_ce, double delta, double lambda);

struct PseudoLabels {
  std::vector<int> labels;              // one per target sample
  std::vector<int> centroid_assignment;  // cluster index -> class index
  Matrix centroids;                     // K x d
};

struct KMeansOptions {
  int iterations = 20;
};

// K-means on target embeddings with centroids initialized at per-class source
// means; a class absent from the source falls back to k-means++ seeding.
PseudoLabels pseudo_label(const Matrix& tgt_embeddings, const Matrix& src_embeddings,
                          std::span<const int> src_labels, int num_classes, std::uint64_t seed,
                          KMeansOptions options = {});

struct ConditionedLoss {
  Tensor loss;
  int classes_used = 0;  // zero means the batch had no class present on both sides
};

// Mean over classes present in both the labeled source batch and the
// pseudo-labeled target batch of the cross-layer loss restricted to that
// class's samples.
ConditionedLoss conditioned_cross_layer_loss(std::span<const Tensor> src_feats, std::span<const int> src_labels,
                                             std::span<const Tensor> tgt_feats, std::span<const int> tgt_pseudo,
                                             const AttentionMatrix& w, const PairKernels& kernels);

}  // namespace acda::alignment
