#pragma once

// Dynamic cross-layer attention. For every target layer i the weights over
// source layers j are the mean of two softmaxes: one over the averaged
// channel Gram r(t_i) r(s_j)^T and one over the averaged spatial Gram
// r(t_i)^T r(s_j), where r flattens a c x h x w tensor to c x (h*w).
//
// Weights are computed from tensor values only and never enter the
// differentiation graph.

#include "acda/tensor.hpp"

#include <span>
#include <vector>

namespace acda::attention {

// c x h x w -> c x (h*w); row k is channel plane k in row-major (h, w) order.
Matrix reshape_r(std::span<const double> feat, int c, int h, int w);

// Inverse of reshape_r.
std::vector<double> unreshape_r(const Matrix& r);

struct PairSimilarity {
  double channel_gram = 0.0;  // avg(r(t) r(s)^T), c x c
  double spatial_gram = 0.0;  // avg(r(t)^T r(s)), (h*w) x (h*w)
};

// Both batches have shape (b, c, h, w). The Gram averages are taken over
// every (target sample, source sample) pair of the mini-batch.
PairSimilarity pair_similarities(const Tensor& tgt_i, const Tensor& src_j);

// Row-stochastic m x m matrix with strictly positive entries; row i is a
// target layer, column j a source layer.
class AttentionMatrix {
 public:
  explicit AttentionMatrix(Matrix w);
  static AttentionMatrix uniform(int m);

  const Matrix& weights() const { return w_; }
  int m() const { return static_cast<int>(w_.rows()); }
  double operator()(int i, int j) const { return w_(i, j); }

 private:
  Matrix w_;
};

// Assembles weights from precomputed similarity tables (m x m, [target][source]).
AttentionMatrix weights_from_similarities(const Matrix& channel_sim, const Matrix& spatial_sim);

AttentionMatrix attention_weights(std::span<const Tensor> tgt_feats, std::span<const Tensor> src_feats);

}  // namespace acda::attention
