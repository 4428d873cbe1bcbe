#include "acda/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

namespace acda::alignment {

PairKernels::PairKernels(int m, std::vector<KernelSpec> specs) : m_(m), specs_(std::move(specs)) {
  if (m < 1 || specs_.size() != static_cast<std::size_t>(m) * m)
    throw ShapeError("PairKernels: expected m*m kernel specs");
}

PairKernels PairKernels::broadcast(int m, const KernelSpec& spec) {
  return PairKernels(m, std::vector<KernelSpec>(static_cast<std::size_t>(std::max(m, 0)) * std::max(m, 0), spec));
}

namespace {

void check_layers(std::span<const Tensor> src, std::span<const Tensor> tgt, int m) {
  if (src.size() != tgt.size() || src.empty()) throw ShapeError("alignment: source/target layer counts differ");
  if (static_cast<int>(src.size()) != m)
    throw ShapeError("alignment: attention is " + std::to_string(m) + "x" + std::to_string(m) + " but " +
                     std::to_string(src.size()) + " layers were given");
  const Shape& ref = src[0].shape();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].rank() < 2 || tgt[i].rank() < 2) throw ShapeError("alignment: features must be batched");
    if (!std::equal(ref.begin() + 1, ref.end(), src[i].shape().begin() + 1, src[i].shape().end()) ||
        !std::equal(ref.begin() + 1, ref.end(), tgt[i].shape().begin() + 1, tgt[i].shape().end()))
      throw ShapeError("alignment: projected features must share one shape, got " + shape_string(src[i].shape()) +
                       " and " + shape_string(tgt[i].shape()));
  }
}

}  // namespace

PairKernels median_pair_kernels(std::span<const Tensor> src_feats, std::span<const Tensor> tgt_feats,
                                std::span<const double> multipliers) {
  check_layers(src_feats, tgt_feats, static_cast<int>(src_feats.size()));
  const int m = static_cast<int>(src_feats.size());
  std::vector<KernelSpec> specs;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      specs.push_back(kernels::median_kernel(src_feats[j].as_rows(), tgt_feats[i].as_rows(), multipliers));
  return PairKernels(m, std::move(specs));
}

Tensor cross_layer_loss(std::span<const Tensor> src_feats, std::span<const Tensor> tgt_feats,
                        const AttentionMatrix& w, const PairKernels& kernels) {
  check_layers(src_feats, tgt_feats, w.m());
  if (kernels.m() != w.m()) throw ShapeError("cross_layer_loss: kernel table size differs from attention");
  const int m = w.m();
  std::vector<Tensor> flat_src, flat_tgt, terms;
  std::vector<double> coeffs;
  for (int i = 0; i < m; ++i) {
    flat_src.push_back(flatten_rows(src_feats[i]));
    flat_tgt.push_back(flatten_rows(tgt_feats[i]));
  }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      terms.push_back(kernels::mmd2_biased(flat_src[j], flat_tgt[i], kernels.at(i, j)));
      coeffs.push_back(w(i, j));
    }
  return weighted_sum(terms, coeffs);
}

Tensor cross_layer_loss(std::span<const Tensor> src_feats, std::span<const Tensor> tgt_feats,
                        const AttentionMatrix& w, const KernelSpec& spec) {
  return cross_layer_loss(src_feats, tgt_feats, w, PairKernels::broadcast(w.m(), spec));
}

Tensor same_layer_loss(const Tensor& f_src, const Tensor& f_tgt, const KernelSpec& spec) {
  return kernels::mmd2_biased(flatten_rows(f_src), flatten_rows(f_tgt), spec);
}

double LossBreakdown::identity_residual() const {
  const double r1 = std::abs(l_ali - (delta * l_cross_ali + (1.0 - delta) * l_same_ali));
  const double r2 = std::abs(l_all - (l_ce + lambda * l_ali));
  return std::max(r1, r2);
}

LossBreakdown combine(double l_cross, double l_same, double l_ce, double delta, double lambda) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("combine: delta must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw std::invalid_argument("combine: lambda must be nonnegative");
  LossBreakdown b;
  b.l_ce = l_ce;
  b.l_cross_ali = l_cross;
  b.l_same_ali = l_same;
  b.delta = delta;
  b.lambda = lambda;
  b.l_ali = delta * l_cross + (1.0 - delta) * l_same;
  b.l_all = l_ce + lambda * b.l_ali;
  return b;
}

namespace {

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

// Index of the nearest centroid; ties go to the lowest index.
int nearest(const Matrix& x, Eigen::Index i, const Matrix& centroids, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = sq_dist(x, i, centroids, k);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

PseudoLabels pseudo_label(const Matrix& tgt, const Matrix& src, std::span<const int> src_labels, int num_classes,
                          std::uint64_t seed, KMeansOptions options) {
  if (num_classes < 1) throw std::invalid_argument("pseudo_label: need at least one class");
  if (tgt.rows() < num_classes) throw std::invalid_argument("pseudo_label: fewer target samples than classes");
  if (src.rows() != static_cast<Eigen::Index>(src_labels.size()))
    throw ShapeError("pseudo_label: source label count mismatch");
  if (src.rows() > 0 && src.cols() != tgt.cols()) throw ShapeError("pseudo_label: embedding dimension mismatch");

  const Eigen::Index d = tgt.cols();
  const int k_count = num_classes;
  Matrix centroids = Matrix::Zero(k_count, d);
  std::vector<int> counts(static_cast<std::size_t>(k_count), 0);
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    const int y = src_labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k_count) throw std::invalid_argument("pseudo_label: source label out of range");
    centroids.row(y) += src.row(i);
    ++counts[static_cast<std::size_t>(y)];
  }

  // k-means++ seeding for classes without source samples.
  std::mt19937_64 rng(seed);
  std::vector<int> seeded;
  for (int k = 0; k < k_count; ++k)
    if (counts[static_cast<std::size_t>(k)] > 0) {
      centroids.row(k) /= counts[static_cast<std::size_t>(k)];
      seeded.push_back(k);
    }
  for (int k = 0; k < k_count; ++k) {
    if (counts[static_cast<std::size_t>(k)] > 0) continue;
    std::vector<double> weight(static_cast<std::size_t>(tgt.rows()), 1.0);
    if (!seeded.empty())
      for (Eigen::Index i = 0; i < tgt.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int s : seeded) best = std::min(best, sq_dist(tgt, i, centroids, s));
        weight[static_cast<std::size_t>(i)] = best;
      }
    const bool all_zero = std::all_of(weight.begin(), weight.end(), [](double w) { return w <= 0.0; });
    if (all_zero) std::fill(weight.begin(), weight.end(), 1.0);
    std::discrete_distribution<Eigen::Index> pick(weight.begin(), weight.end());
    centroids.row(k) = tgt.row(pick(rng));
    seeded.push_back(k);
  }

  std::vector<int> assign(static_cast<std::size_t>(tgt.rows()), -1);
  for (int iter = 0; iter < options.iterations; ++iter) {
    bool changed = false;
    std::vector<double> dist(assign.size());
    std::vector<int> sizes(static_cast<std::size_t>(k_count), 0);
    for (Eigen::Index i = 0; i < tgt.rows(); ++i) {
      const int a = nearest(tgt, i, centroids, &dist[static_cast<std::size_t>(i)]);
      changed |= a != assign[static_cast<std::size_t>(i)];
      assign[static_cast<std::size_t>(i)] = a;
      ++sizes[static_cast<std::size_t>(a)];
    }
    // An empty cluster takes the point farthest from its centroid among
    // clusters that can spare one.
    for (int k = 0; k < k_count; ++k) {
      if (sizes[static_cast<std::size_t>(k)] > 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < tgt.rows(); ++i) {
        const auto iu = static_cast<std::size_t>(i);
        if (sizes[static_cast<std::size_t>(assign[iu])] < 2) continue;
        if (far < 0 || dist[iu] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) break;
      const auto fu = static_cast<std::size_t>(far);
      --sizes[static_cast<std::size_t>(assign[fu])];
      assign[fu] = k;
      dist[fu] = 0.0;
      sizes[static_cast<std::size_t>(k)] = 1;
      changed = true;
    }
    Matrix next = Matrix::Zero(k_count, d);
    for (Eigen::Index i = 0; i < tgt.rows(); ++i) next.row(assign[static_cast<std::size_t>(i)]) += tgt.row(i);
    for (int k = 0; k < k_count; ++k)
      if (sizes[static_cast<std::size_t>(k)] > 0) centroids.row(k) = next.row(k) / sizes[static_cast<std::size_t>(k)];
    if (!changed) break;
  }

  PseudoLabels out;
  out.centroid_assignment.resize(static_cast<std::size_t>(k_count));
  for (int k = 0; k < k_count; ++k) out.centroid_assignment[static_cast<std::size_t>(k)] = k;
  out.labels.reserve(assign.size());
  for (int a : assign) out.labels.push_back(out.centroid_assignment[static_cast<std::size_t>(a)]);
  out.centroids = std::move(centroids);
  return out;
}

ConditionedLoss conditioned_cross_layer_loss(std::span<const Tensor> src_feats, std::span<const int> src_labels,
                                             std::span<const Tensor> tgt_feats, std::span<const int> tgt_pseudo,
                                             const AttentionMatrix& w, const PairKernels& kernels) {
  check_layers(src_feats, tgt_feats, w.m());
  if (src_labels.size() != static_cast<std::size_t>(src_feats[0].dim(0)) ||
      tgt_pseudo.size() != static_cast<std::size_t>(tgt_feats[0].dim(0)))
    throw ShapeError("conditioned_cross_layer_loss: label count differs from batch size");

  std::map<int, std::vector<int>> src_rows, tgt_rows;
  for (std::size_t r = 0; r < src_labels.size(); ++r) src_rows[src_labels[r]].push_back(static_cast<int>(r));
  for (std::size_t r = 0; r < tgt_pseudo.size(); ++r) tgt_rows[tgt_pseudo[r]].push_back(static_cast<int>(r));

  std::vector<Tensor> per_class;
  for (const auto& [cls, rows_s] : src_rows) {
    const auto it = tgt_rows.find(cls);
    if (it == tgt_rows.end()) continue;
    std::vector<Tensor> s, t;
    for (std::size_t l = 0; l < src_feats.size(); ++l) {
      s.push_back(select_rows(src_feats[l], rows_s));
      t.push_back(select_rows(tgt_feats[l], it->second));
    }
    per_class.push_back(cross_layer_loss(s, t, w, kernels));
  }

  ConditionedLoss out;
  out.classes_used = static_cast<int>(per_class.size());
  if (per_class.empty()) {
    out.loss = Tensor::zeros({1});
    return out;
  }
  std::vector<double> coeffs(per_class.size(), 1.0 / static_cast<double>(per_class.size()));
  out.loss = weighted_sum(per_class, coeffs);
  return out;
}

}  // namespace acda::alignment
