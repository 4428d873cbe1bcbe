#pragma once

// Gaussian multi-kernel machinery and the biased (V-statistic) MMD^2
// estimator used as the distance between two feature batches.

#include "acda/tensor.hpp"

#include <span>
#include <vector>

namespace acda::kernels {

// Convex combination of Gaussian RBF kernels.
class KernelSpec {
 public:
  // Validates: equal non-zero lengths, bandwidths > 0, beta >= 0, sum(beta) = 1 within 1e-9.
  KernelSpec(std::vector<double> bandwidths, std::vector<double> beta);

  // Single RBF with the given bandwidth.
  static KernelSpec single(double bandwidth);

  // {sigma * m for m in multipliers} with uniform beta.
  static KernelSpec geometric(double sigma, std::span<const double> multipliers);

  const std::vector<double>& bandwidths() const { return bandwidths_; }
  const std::vector<double>& beta() const { return beta_; }
  std::size_t size() const { return bandwidths_.size(); }

 private:
  std::vector<double> bandwidths_;
  std::vector<double> beta_;
};

// Default bandwidth multipliers {1/4, 1/2, 1, 2, 4} around the median heuristic.
const std::vector<double>& default_multipliers();

// n x d batch of flattened per-sample features.
class FlatFeatureBatch {
 public:
  explicit FlatFeatureBatch(Matrix data);
  const Matrix& data() const { return data_; }
  Eigen::Index n() const { return data_.rows(); }
  Eigen::Index d() const { return data_.cols(); }

 private:
  Matrix data_;
};

// exp(-|a-b|^2 / (2 bandwidth^2)).
double rbf_kernel(std::span<const double> a, std::span<const double> b, double bandwidth);

double multi_kernel(std::span<const double> a, std::span<const double> b, const KernelSpec& spec);

// Median of the pairwise Euclidean distances over the pooled rows of a and b.
// Returns 1.0 when every pooled sample is identical.
double median_bandwidth(const Matrix& a, const Matrix& b);
double median_bandwidth(const FlatFeatureBatch& a, const FlatFeatureBatch& b);

// Geometric kernel family around the median bandwidth of the pooled batch.
KernelSpec median_kernel(const Matrix& a, const Matrix& b,
                         std::span<const double> multipliers = default_multipliers());

// Value and input gradients of the biased MMD^2 estimator.
struct Mmd2Result {
  double value = 0.0;
  Matrix grad_src;  // filled only when requested
  Matrix grad_tgt;
};

Mmd2Result mmd2_biased_with_grad(const Matrix& src, const Matrix& tgt, const KernelSpec& spec,
                                 bool want_grad);

double mmd2_biased(const Matrix& src, const Matrix& tgt, const KernelSpec& spec);
double mmd2_biased(const FlatFeatureBatch& src, const FlatFeatureBatch& tgt, const KernelSpec& spec);

// Differentiable form over tensors of shape (n, ...) flattened per sample.
Tensor mmd2_biased(const Tensor& src, const Tensor& tgt, const KernelSpec& spec);

}  // namespace acda::kernels
