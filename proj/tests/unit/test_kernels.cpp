#include "acda/kernels.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace acda;
using namespace acda::kernels;

namespace {
std::vector<double> vec(std::initializer_list<double> v) { return v; }
}  // namespace

TEST(KernelSpec, Validation) {
  EXPECT_NO_THROW(KernelSpec(vec({1.0, 2.0}), vec({0.25, 0.75})));
  EXPECT_THROW(KernelSpec(vec({}), vec({})), std::invalid_argument);
  EXPECT_THROW(KernelSpec(vec({1.0}), vec({0.5, 0.5})), std::invalid_argument);
  EXPECT_THROW(KernelSpec(vec({0.0}), vec({1.0})), std::invalid_argument);
  EXPECT_THROW(KernelSpec(vec({1.0, 1.0}), vec({-0.5, 1.5})), std::invalid_argument);
  EXPECT_THROW(KernelSpec(vec({1.0, 1.0}), vec({0.5, 0.6})), std::invalid_argument);
}

TEST(KernelSpec, GeometricFamilyIsUniform) {
  const auto spec = KernelSpec::geometric(2.0, default_multipliers());
  ASSERT_EQ(spec.size(), 5u);
  EXPECT_DOUBLE_EQ(spec.bandwidths()[0], 0.5);
  EXPECT_DOUBLE_EQ(spec.bandwidths()[4], 8.0);
  for (double b : spec.beta()) EXPECT_DOUBLE_EQ(b, 0.2);
}

TEST(RbfKernel, ClosedFormValues) {
  const std::vector<double> a{0.0}, b{1.0}, c{0.3, -2.0};
  EXPECT_NEAR(rbf_kernel(a, b, 1.0), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(rbf_kernel(a, b, 1.0), 0.60653, 1e-5);
  EXPECT_DOUBLE_EQ(rbf_kernel(c, c, 0.7), 1.0);
  EXPECT_DOUBLE_EQ(rbf_kernel(a, b, 1.3), rbf_kernel(b, a, 1.3));
}

TEST(RbfKernel, Errors) {
  const std::vector<double> a{0.0}, b{1.0, 2.0}, nan{std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(rbf_kernel(a, b, 1.0), std::invalid_argument);
  EXPECT_THROW(rbf_kernel(a, nan, 1.0), std::invalid_argument);
  EXPECT_THROW(rbf_kernel(a, a, 0.0), std::invalid_argument);
}

TEST(MultiKernel, MixtureValues) {
  const std::vector<double> a{0.0}, b{1.0};
  EXPECT_DOUBLE_EQ(multi_kernel(a, b, KernelSpec::single(1.7)), rbf_kernel(a, b, 1.7));
  EXPECT_NEAR(multi_kernel(a, b, KernelSpec(vec({1.0, 2.0}), vec({0.5, 0.5}))),
              0.5 * std::exp(-0.5) + 0.5 * std::exp(-0.125), 1e-15);
  EXPECT_NEAR(multi_kernel(a, a, KernelSpec::geometric(0.3, default_multipliers())), 1.0, 1e-15);
}

TEST(MedianBandwidth, Examples) {
  Matrix a(2, 1), b(1, 1);
  a << 0.0, 1.0;
  b << 3.0;
  EXPECT_DOUBLE_EQ(median_bandwidth(a, b), 2.0);

  Matrix same(2, 2);
  same << 1.0, 2.0, 1.0, 2.0;
  EXPECT_DOUBLE_EQ(median_bandwidth(same.topRows(1), same.bottomRows(1)), 1.0);

  std::mt19937_64 rng(1);
  const Matrix x = oracle::random_matrix(5, 3, rng), y = oracle::random_matrix(4, 3, rng);
  EXPECT_NEAR(median_bandwidth(Matrix(3.5 * x), Matrix(3.5 * y)), 3.5 * median_bandwidth(x, y), 1e-12);
}

TEST(MedianBandwidth, EvenCountAveragesMiddlePair) {
  // Pooled {0, 1, 2, 4}: distances {1, 2, 4, 1, 3, 2} -> sorted 1 1 2 2 3 4 -> median 2.
  Matrix a(2, 1), b(2, 1);
  a << 0.0, 1.0;
  b << 2.0, 4.0;
  EXPECT_DOUBLE_EQ(median_bandwidth(a, b), 2.0);
  // Pooled {0, 1, 3, 7}: distances 1 3 7 2 6 4 -> sorted 1 2 3 4 6 7 -> (3 + 4) / 2.
  b << 3.0, 7.0;
  EXPECT_DOUBLE_EQ(median_bandwidth(a, b), 3.5);
}

TEST(MedianBandwidth, Errors) {
  EXPECT_THROW(median_bandwidth(Matrix(0, 2), Matrix(1, 2)), std::invalid_argument);
  EXPECT_THROW(median_bandwidth(Matrix::Zero(1, 2), Matrix::Zero(1, 3)), std::invalid_argument);
}

TEST(FlatFeatureBatch, Validation) {
  EXPECT_THROW(FlatFeatureBatch(Matrix(0, 3)), std::invalid_argument);
  EXPECT_THROW(FlatFeatureBatch(Matrix(2, 0)), std::invalid_argument);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(FlatFeatureBatch{bad}, std::invalid_argument);
}

TEST(Mmd2, SingletonClosedForm) {
  Matrix x(1, 3), y(1, 3);
  x << 0.1, -0.4, 2.0;
  y << 1.0, 0.3, 1.5;
  const double d2 = (x - y).squaredNorm();
  const double sigma = 0.8;
  EXPECT_NEAR(mmd2_biased(x, y, KernelSpec::single(sigma)), 2.0 - 2.0 * std::exp(-d2 / (2 * sigma * sigma)), 1e-14);
}

TEST(Mmd2, MatchesScalarLoop) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const Matrix x = oracle::random_matrix(4, 3, rng), y = oracle::random_matrix(4, 3, rng, 1.5);
    const auto spec = KernelSpec::geometric(1.1, default_multipliers());
    EXPECT_NEAR(mmd2_biased(x, y, spec), oracle::mmd2_loop(x, y, spec.bandwidths(), spec.beta()), 1e-10);
  }
}

TEST(Mmd2, UnequalBatchSizes) {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(3, 2, rng), y = oracle::random_matrix(7, 2, rng);
  const auto spec = KernelSpec(vec({0.5, 2.0}), vec({0.3, 0.7}));
  EXPECT_NEAR(mmd2_biased(x, y, spec), oracle::mmd2_loop(x, y, spec.bandwidths(), spec.beta()), 1e-10);
}

TEST(Mmd2, ZeroSymmetryNonnegativity) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> n(1, 8), d(1, 5);
  for (int t = 0; t < 200; ++t) {
    const int dd = d(rng);
    const Matrix x = oracle::random_matrix(n(rng), dd, rng), y = oracle::random_matrix(n(rng), dd, rng, 2.0);
    const auto spec = median_kernel(x, y);
    EXPECT_NEAR(mmd2_biased(x, x, spec), 0.0, 1e-10);
    EXPECT_NEAR(mmd2_biased(x, y, spec), mmd2_biased(y, x, spec), 1e-12);
    EXPECT_GE(mmd2_biased(x, y, spec), -1e-10);
  }
}

TEST(Mmd2, DimensionMismatch) {
  EXPECT_THROW(mmd2_biased(Matrix::Zero(2, 3), Matrix::Zero(2, 2), KernelSpec::single(1.0)), std::invalid_argument);
}

TEST(Mmd2, FlatBatchOverloadAgrees) {
  std::mt19937_64 rng(5);
  const Matrix x = oracle::random_matrix(4, 3, rng), y = oracle::random_matrix(5, 3, rng);
  const auto spec = KernelSpec::single(1.0);
  EXPECT_EQ(mmd2_biased(FlatFeatureBatch(x), FlatFeatureBatch(y), spec), mmd2_biased(x, y, spec));
}

TEST(Mmd2, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    Tensor x = oracle::random_tensor({4, 2, 3}, rng, 1.0, true);
    Tensor y = oracle::random_tensor({5, 2, 3}, rng, 1.3, true);
    const auto spec = KernelSpec::geometric(1.7, default_multipliers());
    auto build = [&] { return mmd2_biased(x, y, spec); };
    EXPECT_LT(oracle::grad_check(x, build, rng, 24).max_rel_error, 1e-4);
    EXPECT_LT(oracle::grad_check(y, build, rng, 30).max_rel_error, 1e-4);
  }
}

TEST(Mmd2, TensorAndMatrixFormsAgree) {
  std::mt19937_64 rng(7);
  const Tensor x = oracle::random_tensor({3, 4}, rng), y = oracle::random_tensor({2, 4}, rng);
  const auto spec = KernelSpec::single(2.0);
  EXPECT_EQ(mmd2_biased(x, y, spec).item(), mmd2_biased(Matrix(x.as_rows()), Matrix(y.as_rows()), spec));
}
