#include "acda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace acda::kernels {

KernelSpec::KernelSpec(std::vector<double> bandwidths, std::vector<double> beta)
    : bandwidths_(std::move(bandwidths)), beta_(std::move(beta)) {
  if (bandwidths_.empty()) throw std::invalid_argument("KernelSpec: at least one component required");
  if (bandwidths_.size() != beta_.size())
    throw std::invalid_argument("KernelSpec: bandwidths and beta differ in length");
  double total = 0.0;
  for (std::size_t u = 0; u < bandwidths_.size(); ++u) {
    if (!(bandwidths_[u] > 0.0) || !std::isfinite(bandwidths_[u]))
      throw std::invalid_argument("KernelSpec: bandwidth " + std::to_string(u) + " must be positive and finite");
    if (!(beta_[u] >= 0.0)) throw std::invalid_argument("KernelSpec: beta must be nonnegative");
    total += beta_[u];
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("KernelSpec: beta must sum to 1");
}

KernelSpec KernelSpec::single(double bandwidth) { return KernelSpec({bandwidth}, {1.0}); }

KernelSpec KernelSpec::geometric(double sigma, std::span<const double> multipliers) {
  std::vector<double> bw;
  for (double m : multipliers) bw.push_back(sigma * m);
  std::vector<double> beta(bw.size(), bw.empty() ? 0.0 : 1.0 / static_cast<double>(bw.size()));
  return KernelSpec(std::move(bw), std::move(beta));
}

const std::vector<double>& default_multipliers() {
  static const std::vector<double> m{0.25, 0.5, 1.0, 2.0, 4.0};
  return m;
}

FlatFeatureBatch::FlatFeatureBatch(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) throw ShapeError("FlatFeatureBatch: need n >= 1 and d >= 1");
  if (!data_.allFinite()) throw std::invalid_argument("FlatFeatureBatch: non-finite entry");
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("kernel: dimension mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!std::isfinite(a[k]) || !std::isfinite(b[k])) throw std::invalid_argument("kernel: non-finite input");
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

// Pairwise squared Euclidean distances between the rows of a and b.
Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b) {
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix d = -2.0 * (a * b.transpose());
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

// Returns sum_u beta_u k_u and, optionally, sum_u beta_u / sigma_u^2 k_u.
void kernel_matrices(const Matrix& sq, const KernelSpec& spec, Matrix& k, Matrix* g) {
  k.setZero(sq.rows(), sq.cols());
  if (g) g->setZero(sq.rows(), sq.cols());
  for (std::size_t u = 0; u < spec.size(); ++u) {
    const double bw = spec.bandwidths()[u];
    const Matrix ku = (sq.array() * (-0.5 / (bw * bw))).exp().matrix();
    k += spec.beta()[u] * ku;
    if (g) *g += (spec.beta()[u] / (bw * bw)) * ku;
  }
}

}  // namespace

double rbf_kernel(std::span<const double> a, std::span<const double> b, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("rbf_kernel: bandwidth must be positive");
  return std::exp(-squared_distance(a, b) / (2.0 * bandwidth * bandwidth));
}

double multi_kernel(std::span<const double> a, std::span<const double> b, const KernelSpec& spec) {
  const double sq = squared_distance(a, b);
  double k = 0.0;
  for (std::size_t u = 0; u < spec.size(); ++u) {
    const double bw = spec.bandwidths()[u];
    k += spec.beta()[u] * std::exp(-sq / (2.0 * bw * bw));
  }
  return k;
}

double median_bandwidth(const Matrix& a, const Matrix& b) {
  if (a.rows() + b.rows() == 0) throw std::invalid_argument("median_bandwidth: empty batches");
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols())
    throw ShapeError("median_bandwidth: dimension mismatch");
  if (a.rows() + b.rows() < 2) throw std::invalid_argument("median_bandwidth: need at least two samples");
  Matrix pooled(a.rows() + b.rows(), a.rows() > 0 ? a.cols() : b.cols());
  pooled << a, b;
  const Matrix sq = pairwise_sq_dist(pooled, pooled);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) dist.push_back(std::sqrt(sq(i, j)));
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double median = dist[mid];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median > 0.0 ? median : 1.0;
}

double median_bandwidth(const FlatFeatureBatch& a, const FlatFeatureBatch& b) {
  return median_bandwidth(a.data(), b.data());
}

KernelSpec median_kernel(const Matrix& a, const Matrix& b, std::span<const double> multipliers) {
  return KernelSpec::geometric(median_bandwidth(a, b), multipliers);
}

Mmd2Result mmd2_biased_with_grad(const Matrix& src, const Matrix& tgt, const KernelSpec& spec, bool want_grad) {
  if (src.rows() < 1 || tgt.rows() < 1) throw ShapeError("mmd2_biased: empty batch");
  if (src.cols() != tgt.cols())
    throw ShapeError("mmd2_biased: dimension mismatch " + std::to_string(src.cols()) + " vs " +
                     std::to_string(tgt.cols()));
  const double n = static_cast<double>(src.rows());
  const double m = static_cast<double>(tgt.rows());

  Matrix kss, ktt, kst, gss, gtt, gst;
  kernel_matrices(pairwise_sq_dist(src, src), spec, kss, want_grad ? &gss : nullptr);
  kernel_matrices(pairwise_sq_dist(tgt, tgt), spec, ktt, want_grad ? &gtt : nullptr);
  kernel_matrices(pairwise_sq_dist(src, tgt), spec, kst, want_grad ? &gst : nullptr);

  Mmd2Result r;
  r.value = kss.sum() / (n * n) + ktt.sum() / (m * m) - 2.0 * kst.sum() / (n * m);
  if (!want_grad) return r;

  // d/dx k_u(x, y) = -k_u(x, y) (x - y) / sigma_u^2
  const Vector gss_rows = gss.rowwise().sum();
  const Vector gtt_rows = gtt.rowwise().sum();
  const Vector gst_rows = gst.rowwise().sum();
  const Vector gst_cols = gst.colwise().sum().transpose();

  r.grad_src = (-2.0 / (n * n)) * (gss_rows.asDiagonal() * src - gss * src) +
               (2.0 / (n * m)) * (gst_rows.asDiagonal() * src - gst * tgt);
  r.grad_tgt = (-2.0 / (m * m)) * (gtt_rows.asDiagonal() * tgt - gtt * tgt) +
               (2.0 / (n * m)) * (gst_cols.asDiagonal() * tgt - gst.transpose() * src);
  return r;
}

double mmd2_biased(const Matrix& src, const Matrix& tgt, const KernelSpec& spec) {
  return mmd2_biased_with_grad(src, tgt, spec, false).value;
}

double mmd2_biased(const FlatFeatureBatch& src, const FlatFeatureBatch& tgt, const KernelSpec& spec) {
  return mmd2_biased(src.data(), tgt.data(), spec);
}

Tensor mmd2_biased(const Tensor& src, const Tensor& tgt, const KernelSpec& spec) {
  const Matrix s = src.as_rows();
  const Matrix t = tgt.as_rows();
  const bool want_grad = src.requires_grad() || tgt.requires_grad();
  auto res = std::make_shared<Mmd2Result>(mmd2_biased_with_grad(s, t, spec, want_grad));
  auto ps = src.node(), pt = tgt.node();
  return Tensor::make_result({1}, Vector::Constant(1, res->value), {src, tgt}, [ps, pt, res](detail::Node& out) {
    const double g = out.grad[0];
    if (ps->requires_grad)
      ps->grad_buffer() += g * Eigen::Map<const Vector>(res->grad_src.data(), res->grad_src.size());
    if (pt->requires_grad)
      pt->grad_buffer() += g * Eigen::Map<const Vector>(res->grad_tgt.data(), res->grad_tgt.size());
  });
}

}  // namespace acda::kernels
