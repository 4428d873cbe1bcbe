#include "acda/alignment.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace acda;
using namespace acda::alignment;

namespace {

std::vector<Tensor> random_layers(int m, int b, std::mt19937_64& rng, double scale = 1.0, bool param = false) {
  std::vector<Tensor> out;
  for (int i = 0; i < m; ++i) out.push_back(oracle::random_tensor({b, 2, 2, 2}, rng, scale, param));
  return out;
}

// Independent reference: explicit double loop over (i, j) and over samples.
double cross_layer_loop(const std::vector<Tensor>& s, const std::vector<Tensor>& t, const Matrix& w,
                        const KernelSpec& spec) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      total += w(i, j) * oracle::mmd2_loop(Matrix(s[j].as_rows()), Matrix(t[i].as_rows()), spec.bandwidths(),
                                           spec.beta());
  return total;
}

Matrix random_stochastic(int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Matrix w(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) w(i, j) = u(rng);
    w.row(i) /= w.row(i).sum();
  }
  return w;
}

}  // namespace

TEST(CrossLayerLoss, ZeroWhenEverythingIdentical) {
  std::mt19937_64 rng(1);
  const Tensor f = oracle::random_tensor({4, 2, 2, 2}, rng);
  const std::vector<Tensor> s{f, f, f}, t{f, f, f};
  EXPECT_NEAR(cross_layer_loss(s, t, AttentionMatrix::uniform(3), KernelSpec::single(1.0)).item(), 0.0, 1e-9);
}

TEST(CrossLayerLoss, SingleLayerEqualsPairMmd) {
  std::mt19937_64 rng(2);
  const auto s = random_layers(1, 3, rng), t = random_layers(1, 4, rng);
  const auto spec = KernelSpec::geometric(1.0, kernels::default_multipliers());
  EXPECT_DOUBLE_EQ(cross_layer_loss(s, t, AttentionMatrix::uniform(1), spec).item(),
                   kernels::mmd2_biased(flatten_rows(s[0]), flatten_rows(t[0]), spec).item());
}

TEST(CrossLayerLoss, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + trial % 2;
    const auto s = random_layers(m, 3, rng), t = random_layers(m, 2, rng, 1.5);
    const Matrix w = random_stochastic(m, rng);
    const auto spec = KernelSpec::geometric(1.3, kernels::default_multipliers());
    EXPECT_NEAR(cross_layer_loss(s, t, AttentionMatrix(w), spec).item(), cross_layer_loop(s, t, w, spec), 1e-10);
  }
}

TEST(CrossLayerLoss, PairingUsesSourceColumnTargetRow) {
  std::mt19937_64 rng(4);
  const auto s = random_layers(2, 3, rng), t = random_layers(2, 3, rng, 2.0);
  const auto spec = KernelSpec::single(1.0);
  Matrix w(2, 2);
  w << 1.0 - 1e-12, 1e-12, 1e-12, 1.0 - 1e-12;
  const double expected = kernels::mmd2_biased(Matrix(s[0].as_rows()), Matrix(t[0].as_rows()), spec) +
                          kernels::mmd2_biased(Matrix(s[1].as_rows()), Matrix(t[1].as_rows()), spec);
  EXPECT_NEAR(cross_layer_loss(s, t, AttentionMatrix(w), spec).item(), expected, 1e-10);
  // Off-diagonal selection: row 0 picks source layer 1 against target layer 0.
  w << 1e-12, 1.0 - 1e-12, 1.0 - 1e-12, 1e-12;
  const double off = kernels::mmd2_biased(Matrix(s[1].as_rows()), Matrix(t[0].as_rows()), spec) +
                     kernels::mmd2_biased(Matrix(s[0].as_rows()), Matrix(t[1].as_rows()), spec);
  EXPECT_NEAR(cross_layer_loss(s, t, AttentionMatrix(w), spec).item(), off, 1e-10);
}

TEST(CrossLayerLoss, UniformWeightsAverageAllPairs) {
  std::mt19937_64 rng(5);
  const auto s = random_layers(3, 2, rng), t = random_layers(3, 2, rng);
  const auto spec = KernelSpec::single(2.0);
  double sum = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) sum += kernels::mmd2_biased(Matrix(s[j].as_rows()), Matrix(t[i].as_rows()), spec);
  EXPECT_NEAR(cross_layer_loss(s, t, AttentionMatrix::uniform(3), spec).item(), sum / 3.0, 1e-12);
}

TEST(CrossLayerLoss, ShapeErrors) {
  std::mt19937_64 rng(6);
  const auto s = random_layers(2, 2, rng);
  std::vector<Tensor> t{oracle::random_tensor({2, 2, 2, 2}, rng), oracle::random_tensor({2, 3, 2, 2}, rng)};
  EXPECT_THROW(cross_layer_loss(s, t, AttentionMatrix::uniform(2), KernelSpec::single(1.0)), ShapeError);
  EXPECT_THROW(cross_layer_loss(s, s, AttentionMatrix::uniform(3), KernelSpec::single(1.0)), ShapeError);
}

TEST(CrossLayerLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto s = random_layers(2, 3, rng, 1.0, true);
  auto t = random_layers(2, 4, rng, 1.2, true);
  const Matrix w = random_stochastic(2, rng);
  const auto kernels = median_pair_kernels(s, t);
  auto build = [&] { return cross_layer_loss(s, t, AttentionMatrix(w), kernels); };
  for (auto& x : s) EXPECT_LT(oracle::grad_check(x, build, rng, 10).max_rel_error, 1e-4);
  for (auto& x : t) EXPECT_LT(oracle::grad_check(x, build, rng, 10).max_rel_error, 1e-4);
}

TEST(SameLayerLoss, DelegatesToMmd) {
  std::mt19937_64 rng(8);
  const Tensor a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({5, 4}, rng);
  const auto spec = KernelSpec::geometric(1.0, kernels::default_multipliers());
  EXPECT_EQ(same_layer_loss(a, b, spec).item(), kernels::mmd2_biased(a, b, spec).item());
  EXPECT_NEAR(same_layer_loss(a, a, spec).item(), 0.0, 1e-12);
  const Tensor x = oracle::random_tensor({1, 4}, rng), y = oracle::random_tensor({1, 4}, rng);
  const auto single = KernelSpec::single(1.5);
  const double k = kernels::rbf_kernel(std::span<const double>(x.value().data(), 4),
                                       std::span<const double>(y.value().data(), 4), 1.5);
  EXPECT_NEAR(same_layer_loss(x, y, single).item(), 2.0 - 2.0 * k, 1e-14);
  EXPECT_THROW(same_layer_loss(a, Tensor::zeros({2, 3}), spec), std::invalid_argument);
}

TEST(Combine, IdentitiesAndBoundaries) {
  const auto b = combine(1.0, 2.0, 0.5, 0.7, 0.3);
  EXPECT_NEAR(b.l_ali, 1.3, 1e-12);
  EXPECT_NEAR(b.l_all, 0.89, 1e-12);
  EXPECT_LT(b.identity_residual(), 1e-12);
  EXPECT_DOUBLE_EQ(combine(1.7, 9.0, 0.1, 1.0, 0.4).l_ali, 1.7);
  EXPECT_DOUBLE_EQ(combine(1.7, 9.0, 0.1, 0.3, 0.0).l_all, 0.1);
  EXPECT_THROW(combine(1, 1, 1, 1.1, 0.3), std::invalid_argument);
  EXPECT_THROW(combine(1, 1, 1, -0.1, 0.3), std::invalid_argument);
  EXPECT_THROW(combine(1, 1, 1, 0.5, -1.0), std::invalid_argument);
}

TEST(PseudoLabel, SeparableClustersAreRecovered) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 0.3);
  const int per = 40;
  Matrix tgt(2 * per, 2), src(2 * per, 2);
  std::vector<int> y_tgt, y_src;
  for (int i = 0; i < 2 * per; ++i) {
    const int c = i % 2;
    tgt.row(i) << (c ? 4.0 : -4.0) + nd(rng), 1.0 + nd(rng);
    src.row(i) << (c ? 3.0 : -3.0) + nd(rng), nd(rng);
    y_tgt.push_back(c);
    y_src.push_back(c);
  }
  const auto p = pseudo_label(tgt, src, y_src, 2, 0);
  EXPECT_EQ(p.labels, y_tgt);
  EXPECT_EQ(p.centroid_assignment, (std::vector<int>{0, 1}));
}

TEST(PseudoLabel, SingletonClustersWhenTargetCountEqualsK) {
  Matrix tgt(3, 1), src(3, 1);
  tgt << 0.0, 5.0, 10.0;
  src << 0.0, 0.1, 0.2;  // all source means collapse near zero
  const std::vector<int> ys{0, 1, 2};
  const auto p = pseudo_label(tgt, src, ys, 3, 1);
  auto sorted = p.labels;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2}));
}

TEST(PseudoLabel, MissingSourceClassUsesFallbackSeeding) {
  std::mt19937_64 rng(10);
  Matrix tgt(30, 1);
  for (int i = 0; i < 30; ++i) tgt(i, 0) = (i % 3) * 10.0 + 0.01 * i;
  Matrix src(2, 1);
  src << 0.0, 10.0;
  const std::vector<int> ys{0, 1};
  const auto p = pseudo_label(tgt, src, ys, 3, 5);
  for (int i = 0; i < 30; ++i) EXPECT_EQ(p.labels[static_cast<std::size_t>(i)], i % 3);
}

TEST(PseudoLabel, DeterministicAndPermutationEquivariant) {
  std::mt19937_64 rng(11);
  const Matrix tgt = oracle::random_matrix(25, 3, rng), src = oracle::random_matrix(12, 3, rng);
  std::vector<int> ys;
  for (int i = 0; i < 12; ++i) ys.push_back(i % 4);
  const auto a = pseudo_label(tgt, src, ys, 4, 7), b = pseudo_label(tgt, src, ys, 4, 7);
  EXPECT_EQ(a.labels, b.labels);

  std::vector<int> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix permuted(25, 3);
  for (int i = 0; i < 25; ++i) permuted.row(i) = tgt.row(perm[static_cast<std::size_t>(i)]);
  const auto c = pseudo_label(permuted, src, ys, 4, 7);
  for (int i = 0; i < 25; ++i)
    EXPECT_EQ(c.labels[static_cast<std::size_t>(i)], a.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
}

TEST(PseudoLabel, Errors) {
  const std::vector<int> ys{0};
  EXPECT_THROW(pseudo_label(Matrix::Zero(1, 2), Matrix::Zero(1, 2), ys, 2, 0), std::invalid_argument);
  const std::vector<int> bad{5};
  EXPECT_THROW(pseudo_label(Matrix::Zero(4, 2), Matrix::Zero(1, 2), bad, 2, 0), std::invalid_argument);
}

TEST(ConditionedLoss, SingleClassEqualsUnconditioned) {
  std::mt19937_64 rng(12);
  const auto s = random_layers(2, 4, rng), t = random_layers(2, 3, rng);
  const std::vector<int> ys(4, 1), yt(3, 1);
  const auto w = AttentionMatrix::uniform(2);
  const auto kern = median_pair_kernels(s, t);
  const auto c = conditioned_cross_layer_loss(s, ys, t, yt, w, kern);
  EXPECT_EQ(c.classes_used, 1);
  EXPECT_DOUBLE_EQ(c.loss.item(), cross_layer_loss(s, t, w, kern).item());
}

TEST(ConditionedLoss, MeanOverSharedClassesOnly) {
  std::mt19937_64 rng(13);
  const auto s = random_layers(2, 6, rng), t = random_layers(2, 5, rng);
  const std::vector<int> ys{0, 1, 2, 0, 1, 2}, yt{0, 0, 1, 3, 3};
  const auto w = AttentionMatrix::uniform(2);
  const auto kern = PairKernels::broadcast(2, KernelSpec::single(1.0));
  auto subset = [](const std::vector<Tensor>& f, std::vector<int> rows) {
    std::vector<Tensor> out;
    for (const auto& x : f) out.push_back(select_rows(x, rows));
    return out;
  };
  const double c0 = cross_layer_loss(subset(s, {0, 3}), subset(t, {0, 1}), w, kern).item();
  const double c1 = cross_layer_loss(subset(s, {1, 4}), subset(t, {2}), w, kern).item();
  const auto c = conditioned_cross_layer_loss(s, ys, t, yt, w, kern);
  EXPECT_EQ(c.classes_used, 2);
  EXPECT_NEAR(c.loss.item(), 0.5 * (c0 + c1), 1e-12);
}

TEST(ConditionedLoss, DisjointClassesGiveZero) {
  std::mt19937_64 rng(14);
  const auto s = random_layers(2, 2, rng), t = random_layers(2, 2, rng);
  const std::vector<int> ys{0, 0}, yt{1, 1};
  const auto c = conditioned_cross_layer_loss(s, ys, t, yt, AttentionMatrix::uniform(2),
                                              PairKernels::broadcast(2, KernelSpec::single(1.0)));
  EXPECT_EQ(c.classes_used, 0);
  EXPECT_EQ(c.loss.item(), 0.0);
}

TEST(ConditionedLoss, MatchedClassDistributionsBeatUnconditionedOnShiftedMixture) {
  // Class k lives around mean k*3 in both domains; class proportions differ
  // across domains so the unconditioned loss sees a marginal shift.
  std::mt19937_64 rng(15);
  std::normal_distribution<double> nd(0.0, 0.5);
  auto sample = [&](const std::vector<int>& labels) {
    Vector v(static_cast<Eigen::Index>(labels.size() * 4));
    for (std::size_t r = 0; r < labels.size(); ++r)
      for (int k = 0; k < 4; ++k) v[static_cast<Eigen::Index>(r * 4 + k)] = 3.0 * labels[r] + nd(rng);
    return Tensor::constant({static_cast<int>(labels.size()), 1, 2, 2}, v);
  };
  std::vector<int> ys, yt;
  for (int i = 0; i < 60; ++i) ys.push_back(i < 45 ? 0 : 1);
  for (int i = 0; i < 60; ++i) yt.push_back(i < 15 ? 0 : 1);
  const std::vector<Tensor> s{sample(ys)}, t{sample(yt)};
  const auto w = AttentionMatrix::uniform(1);
  const auto kern = median_pair_kernels(s, t);
  const double cond = conditioned_cross_layer_loss(s, ys, t, yt, w, kern).loss.item();
  const double plain = cross_layer_loss(s, t, w, kern).item();
  EXPECT_LT(cond, 0.25 * plain);
  EXPECT_LT(cond, 0.05);
}
