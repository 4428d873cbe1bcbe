#include "acda/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace acda::attention {

Matrix reshape_r(std::span<const double> feat, int c, int h, int w) {
  if (c < 1 || h < 1 || w < 1) throw ShapeError("reshape_r: dimensions must be positive");
  if (feat.size() != static_cast<std::size_t>(c) * h * w) throw ShapeError("reshape_r: size mismatch");
  return ConstMatrixMap(feat.data(), c, static_cast<Eigen::Index>(h) * w);
}

std::vector<double> unreshape_r(const Matrix& r) { return {r.data(), r.data() + r.size()}; }

PairSimilarity pair_similarities(const Tensor& tgt_i, const Tensor& src_j) {
  if (tgt_i.rank() != 4 || src_j.rank() != 4)
    throw ShapeError("pair_similarities: expected (b, c, h, w) batches");
  for (std::size_t k = 1; k < 4; ++k)
    if (tgt_i.dim(k) != src_j.dim(k))
      throw ShapeError("pair_similarities: shape " + shape_string(tgt_i.shape()) + " vs " +
                       shape_string(src_j.shape()));
  const int c = tgt_i.dim(1), hw = tgt_i.dim(2) * tgt_i.dim(3);
  const int bt = tgt_i.dim(0), bs = src_j.dim(0);
  if (bt < 1 || bs < 1) throw ShapeError("pair_similarities: empty batch");

  // Both Grams are bilinear, so their mean over all sample pairs equals the
  // Gram of the two batch means.
  Matrix mt = Matrix::Zero(c, hw), ms = Matrix::Zero(c, hw);
  for (int b = 0; b < bt; ++b) mt += ConstMatrixMap(tgt_i.value().data() + static_cast<std::size_t>(b) * c * hw, c, hw);
  for (int b = 0; b < bs; ++b) ms += ConstMatrixMap(src_j.value().data() + static_cast<std::size_t>(b) * c * hw, c, hw);
  mt /= bt;
  ms /= bs;

  // avg(A B^T) over c x c = sum_p colsum(A)_p colsum(B)_p / c^2
  // avg(A^T B) over hw x hw = sum_a rowsum(A)_a rowsum(B)_a / hw^2
  PairSimilarity s;
  s.channel_gram = mt.colwise().sum().dot(ms.colwise().sum()) / (static_cast<double>(c) * c);
  s.spatial_gram = mt.rowwise().sum().dot(ms.rowwise().sum()) / (static_cast<double>(hw) * hw);
  return s;
}

AttentionMatrix::AttentionMatrix(Matrix w) : w_(std::move(w)) {
  if (w_.rows() < 1 || w_.rows() != w_.cols()) throw ShapeError("AttentionMatrix: must be square with m >= 1");
  for (Eigen::Index i = 0; i < w_.rows(); ++i) {
    if (!(w_.row(i).minCoeff() > 0.0) || !w_.row(i).allFinite())
      throw std::invalid_argument("AttentionMatrix: entries must be positive and finite");
    if (std::abs(w_.row(i).sum() - 1.0) > 1e-6)
      throw std::invalid_argument("AttentionMatrix: row " + std::to_string(i) + " does not sum to 1");
  }
}

AttentionMatrix AttentionMatrix::uniform(int m) {
  if (m < 1) throw ShapeError("AttentionMatrix::uniform: m must be >= 1");
  return AttentionMatrix(Matrix::Constant(m, m, 1.0 / m));
}

namespace {

Eigen::RowVectorXd stable_softmax(const Eigen::RowVectorXd& logits) {
  const Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

}  // namespace

AttentionMatrix weights_from_similarities(const Matrix& channel_sim, const Matrix& spatial_sim) {
  if (channel_sim.rows() < 1) throw ShapeError("attention_weights: m must be >= 1");
  if (channel_sim.rows() != channel_sim.cols() || spatial_sim.rows() != channel_sim.rows() ||
      spatial_sim.cols() != channel_sim.cols())
    throw ShapeError("attention_weights: similarity tables must be m x m");
  const Eigen::Index m = channel_sim.rows();
  Matrix w(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    w.row(i) = 0.5 * stable_softmax(channel_sim.row(i)) + 0.5 * stable_softmax(spatial_sim.row(i));
  // Softmax underflow can produce exact zeros for extreme logit gaps.
  w = w.cwiseMax(std::numeric_limits<double>::min());
  for (Eigen::Index i = 0; i < m; ++i) w.row(i) /= w.row(i).sum();
  return AttentionMatrix(std::move(w));
}

AttentionMatrix attention_weights(std::span<const Tensor> tgt_feats, std::span<const Tensor> src_feats) {
  if (tgt_feats.empty()) throw ShapeError("attention_weights: need at least one layer");
  if (tgt_feats.size() != src_feats.size()) throw ShapeError("attention_weights: layer count mismatch");
  const auto m = static_cast<Eigen::Index>(tgt_feats.size());
  Matrix channel(m, m), spatial(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto s = pair_similarities(tgt_feats[i], src_feats[j]);
      channel(i, j) = s.channel_gram;
      spatial(i, j) = s.spatial_gram;
    }
  return weights_from_similarities(channel, spatial);
}

}  // namespace acda::attention
