#include "bcisim/learner.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace bcisim;

namespace {

Rng stream(std::uint64_t seed) { return make_stream({seed, 0, 0, Purpose::stream}); }

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix M(r, c);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = standard_normal(rng);
  return M;
}

std::vector<LabeledPair> random_pairs(Rng& rng, int n, Eigen::Index p, Eigen::Index d, const Matrix* W = nullptr,
                                      double noise = 1.0) {
  std::vector<LabeledPair> out;
  for (int i = 0; i < n; ++i) {
    Vector z = normal_vector(rng, p, 1.0);
    Vector o = W ? Vector(*W * z + normal_vector(rng, d, noise)) : normal_vector(rng, d, 1.0);
    out.push_back({z, o, 1, i});
  }
  return out;
}

// Batch ridge through the explicit normal equations with a full inverse.
Matrix normal_equations(const std::vector<LabeledPair>& pairs, Eigen::Index p, Eigen::Index d, double reg) {
  Matrix ZtZ = reg * Matrix::Identity(p, p);
  Matrix ZtO = Matrix::Zero(p, d);
  for (const auto& pr : pairs) {
    ZtZ += pr.z * pr.z.transpose();
    ZtO += pr.z * pr.o.transpose();
  }
  return (ZtZ.inverse() * ZtO).transpose();
}

double rel_diff(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

AggregatedDataset dataset_from(const std::vector<std::vector<LabeledPair>>& reaches) {
  AggregatedDataset ds;
  int k = 1;
  for (const auto& r : reaches) {
    ds.begin_reach(k++);
    for (const auto& p : r) ds.append(p.z, p.o, p.step);
  }
  return ds;
}

}  // namespace

// ----- loss -----------------------------------------------------------------

TEST(Loss, ExactFitIsZero) {
  Rng rng = stream(1);
  const Matrix W = random_matrix(rng, 2, 4);
  const Vector z = normal_vector(rng, 4, 1.0);
  EXPECT_EQ(loss(W, z, W * z), 0.0);
}

TEST(Loss, ScalarExample) { EXPECT_DOUBLE_EQ(loss(Matrix::Constant(1, 1, 0.5), vec({2}), vec({3})), 4.0); }

TEST(Loss, QuadraticInTargetForZeroWeights) {
  Rng rng = stream(2);
  const Matrix W = Matrix::Zero(3, 5);
  const Vector z = normal_vector(rng, 5, 1.0), o = normal_vector(rng, 3, 1.0);
  EXPECT_DOUBLE_EQ(loss(W, z, 2.0 * o), 4.0 * loss(W, z, o));
}

TEST(Loss, DecoderParamsUseConcatenatedWeights) {
  Rng rng = stream(3);
  DecoderParams p = DecoderParams::from_weights(random_matrix(rng, 2, 3 + 1 + 2), 3);
  const Vector z = normal_vector(rng, 6, 1.0), o = normal_vector(rng, 2, 1.0);
  EXPECT_DOUBLE_EQ(loss(p, z, o), loss(p.weights(), z, o));
}

// ----- aggregation ----------------------------------------------------------

TEST(AggregatedDataset, ReachesAreContiguousAndCounted) {
  Rng rng = stream(4);
  AggregatedDataset ds;
  std::size_t expected = 0;
  for (int k = 1; k <= 5; ++k) {
    ds.begin_reach(k);
    for (int t = 0; t < k + 2; ++t) ds.append(normal_vector(rng, 3, 1.0), normal_vector(rng, 1, 1.0), t);
    expected += static_cast<std::size_t>(k + 2);
    EXPECT_EQ(ds.size(), expected);
    ASSERT_EQ(ds.latest_reach().size(), static_cast<std::size_t>(k + 2));
    for (std::size_t t = 0; t < ds.latest_reach().size(); ++t) {
      EXPECT_EQ(ds.latest_reach()[t].reach, k);
      EXPECT_EQ(ds.latest_reach()[t].step, static_cast<int>(t));
    }
  }
  EXPECT_EQ(ds.n_reaches(), 5u);
  EXPECT_THROW(ds.begin_reach(5), std::invalid_argument);
}

// ----- OGD ------------------------------------------------------------------

TEST(OgdUpdate, StationaryPointUnchanged) {
  Rng rng = stream(5);
  const Matrix W = random_matrix(rng, 2, 1 + 1 + 2);
  std::vector<LabeledPair> pairs;
  for (int i = 0; i < 6; ++i) {
    const Vector z = normal_vector(rng, 4, 1.0);
    pairs.push_back({z, W * z, 1, i});
  }
  UpdateRule rule;
  rule.kind = RuleKind::ogd;
  rule.eta0 = 0.3;
  rule.reg = 0.0;
  const DecoderParams next = ogd_update(DecoderParams::from_weights(W, 1), rule, pairs, 3);
  EXPECT_TRUE(next.weights() == W);
}

TEST(OgdUpdate, HandGradientStep) {
  UpdateRule rule;
  rule.kind = RuleKind::ogd;
  rule.eta0 = 0.1;
  rule.reg = 0.0;
  const std::vector<LabeledPair> pairs{{vec({1, 0, 0}), vec({1}), 1, 0}};
  const DecoderParams next = ogd_update(DecoderParams::zeros(1, 1), rule, pairs, 1);
  EXPECT_NEAR(next.F(0, 0), 0.2, 1e-15);
  EXPECT_EQ(next.b[0], 0.0);
  EXPECT_EQ(next.G(0, 0), 0.0);
}

TEST(OgdUpdate, StepShrinksAsInverseSquareRoot) {
  UpdateRule rule;
  rule.eta0 = 0.5;
  EXPECT_DOUBLE_EQ(rule.step_size(1), 0.5);
  EXPECT_DOUBLE_EQ(rule.step_size(4), 0.25);
  EXPECT_DOUBLE_EQ(rule.step_size(100), 0.05);
}

TEST(OgdGradient, MatchesCentralDifferences) {
  Rng rng = stream(6);
  const double reg = 0.3;
  for (int trial = 0; trial < 20; ++trial) {
    const auto pairs = random_pairs(rng, 7, 5, 2);
    const Matrix W = random_matrix(rng, 2, 5);
    const Matrix g = ogd_gradient(W, pairs, reg);
    auto f = [&](const Matrix& M) { return total_loss(M, pairs) + reg * M.squaredNorm(); };
    Matrix fd(2, 5);
    for (Eigen::Index i = 0; i < W.size(); ++i) {
      Matrix a = W, b = W;
      const double h = 1e-5 * std::max(1.0, std::abs(W.data()[i]));
      a.data()[i] += h;
      b.data()[i] -= h;
      fd.data()[i] = (f(a) - f(b)) / (2 * h);
    }
    EXPECT_LT(rel_diff(fd, g), 1e-6);
  }
}

TEST(OgdUpdate, NonFiniteGradientIsDivergence) {
  UpdateRule rule;
  rule.kind = RuleKind::ogd;
  const std::vector<LabeledPair> pairs{{vec({std::numeric_limits<double>::infinity(), 1, 0}), vec({1}), 1, 0}};
  try {
    ogd_update(DecoderParams::zeros(1, 1), rule, pairs, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "divergence: reduce step size");
  }
}

// ----- moving average ------------------------------------------------------

TEST(MaUpdate, LambdaZeroKeepsWeights) {
  Rng rng = stream(7);
  const DecoderParams p = DecoderParams::from_weights(random_matrix(rng, 2, 3 + 1 + 2), 3);
  UpdateRule rule;
  rule.kind = RuleKind::ma;
  rule.lambda = 0.0;
  rule.reg = 0.1;
  EXPECT_TRUE(ma_update(p, rule, random_pairs(rng, 10, 6, 2)).weights() == p.weights());
}

TEST(MaUpdate, LambdaOneReplacesWithReachFit) {
  Rng rng = stream(8);
  const DecoderParams p = DecoderParams::from_weights(random_matrix(rng, 2, 3 + 1 + 2), 3);
  UpdateRule rule;
  rule.kind = RuleKind::ma;
  rule.lambda = 1.0;
  rule.reg = 0.1;
  const auto pairs = random_pairs(rng, 10, 6, 2);
  const AggregatedDataset single = dataset_from({pairs});
  EXPECT_LT(rel_diff(ma_update(p, rule, pairs).weights(), ftl_update(single, 3, 2, 0.1).weights()), 1e-14);
}

TEST(MaUpdate, HalfwayFromZero) {
  UpdateRule rule;
  rule.kind = RuleKind::ma;
  rule.lambda = 0.5;
  rule.reg = 1.0;
  // two pairs with z = e0 and z = 2 e0: the reach fit on the first weight is (1*1 + 2*2) / (1 + 4 + 1)
  const std::vector<LabeledPair> pairs{{vec({1, 0, 0}), vec({1}), 1, 0}, {vec({2, 0, 0}), vec({2}), 1, 1}};
  const DecoderParams next = ma_update(DecoderParams::zeros(1, 1), rule, pairs);
  EXPECT_NEAR(next.F(0, 0), 0.5 * 5.0 / 6.0, 1e-15);
}

// ----- FTL ------------------------------------------------------------------

TEST(FtlUpdate, EmptyDatasetGivesZero) {
  const AggregatedDataset ds;
  EXPECT_TRUE(ftl_update(ds, 4, 2, 0.1).weights().isZero(0.0));
  const RidgeAccumulator acc(7, 2);
  EXPECT_TRUE(acc.solve(0.1).isZero(0.0));
}

TEST(FtlUpdate, ScalarNormalEquations) {
  const std::vector<LabeledPair> pairs{{vec({1}), vec({1}), 1, 0}, {vec({2}), vec({2}), 1, 1}};
  EXPECT_NEAR(ridge_fit(pairs, 1, 1, 1.0)(0, 0), 5.0 / 6.0, 1e-15);
  RidgeAccumulator acc(1, 1);
  acc.add(pairs);
  EXPECT_NEAR(acc.solve(1.0)(0, 0), 5.0 / 6.0, 1e-15);
}

TEST(FtlUpdate, MatchesExplicitNormalEquations) {
  Rng rng = stream(9);
  const auto pairs = random_pairs(rng, 40, 8, 3);
  const Matrix expected = normal_equations(pairs, 8, 3, 0.7);
  EXPECT_LT(rel_diff(ridge_fit(pairs, 8, 3, 0.7), expected), 1e-12);
  RidgeAccumulator acc(8, 3);
  acc.add(pairs);
  EXPECT_LT(rel_diff(acc.solve(0.7), expected), 1e-12);
}

TEST(FtlUpdate, RecoversRealizableMap) {
  Rng rng = stream(10);
  const Matrix Wstar = random_matrix(rng, 3, 6);
  const auto pairs = random_pairs(rng, 60, 6, 3, &Wstar, 0.0);
  EXPECT_LT((ridge_fit(pairs, 6, 3, 1e-10) - Wstar).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FtlUpdate, RankDeficientWithoutRegularization) {
  const std::vector<LabeledPair> pairs{{vec({1, 1}), vec({1}), 1, 0}, {vec({2, 2}), vec({2}), 1, 1}};
  try {
    ridge_fit(pairs, 2, 1, 0.0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "rank deficient: increase regularization");
  }
  RidgeAccumulator acc(2, 1);
  acc.add(pairs);
  EXPECT_THROW(acc.solve(0.0), Error);
  EXPECT_NO_THROW(ridge_fit(pairs, 2, 1, 1e-3));
}

TEST(FtlUpdate, TrainingLossNeverWorseThanEarlierDecoders) {
  Rng rng = stream(11);
  const Matrix Wstar = random_matrix(rng, 2, 5);
  std::vector<std::vector<LabeledPair>> reaches;
  std::vector<Matrix> produced{Matrix::Zero(2, 5)};
  for (int k = 1; k <= 8; ++k) {
    reaches.push_back(random_pairs(rng, 10, 5, 2, &Wstar, 0.5));
    const AggregatedDataset ds = dataset_from(reaches);
    const Matrix ftl = ridge_fit(ds.pairs(), 5, 2, 0.0);
    const double best = total_loss(ftl, ds.pairs());
    for (const auto& W : produced) EXPECT_LE(best, total_loss(W, ds.pairs()) + 1e-12);
    produced.push_back(ftl);
  }
}

TEST(RidgeAccumulator, LossFromStatisticsMatchesDirectSum) {
  Rng rng = stream(12);
  const auto pairs = random_pairs(rng, 30, 6, 2);
  RidgeAccumulator acc(6, 2);
  acc.add(pairs);
  const Matrix W = random_matrix(rng, 2, 6);
  EXPECT_NEAR(acc.loss_of(W), total_loss(W, pairs), 1e-10 * total_loss(W, pairs));
}

// ----- RLS ------------------------------------------------------------------

TEST(RlsUpdate, SinglePairClosedForm) {
  Rng rng = stream(13);
  const Vector z = normal_vector(rng, 4, 1.0), o = normal_vector(rng, 2, 1.0);
  const double reg = 0.5;
  RlsState s(4, 2, reg);
  s.update(z, o);
  // (z z^T + reg I)^{-1} z = z / (|z|^2 + reg)
  const Matrix expected = o * z.transpose() / (z.squaredNorm() + reg);
  EXPECT_LT(rel_diff(s.weights(), expected), 1e-14);
}

TEST(RlsUpdate, ThreePairsEqualBatch) {
  Rng rng = stream(14);
  const auto pairs = random_pairs(rng, 3, 5, 2);
  const RlsState s = rls_update(RlsState(5, 2, 0.1), pairs);
  EXPECT_LT(rel_diff(s.weights(), normal_equations(pairs, 5, 2, 0.1)), 1e-6);
}

TEST(RlsUpdate, LongStreamAtArmScale) {
  Rng rng = stream(15);
  const Eigen::Index p = 75 + 1 + 26, d = 26;
  const Matrix Wstar = random_matrix(rng, d, p);
  const auto pairs = random_pairs(rng, 10000, p, d, &Wstar, 1.0);
  const double reg = 1e-3 * p;
  const RlsState s = rls_update(RlsState(p, d, reg), pairs);
  RidgeAccumulator acc(p, d);
  acc.add(pairs);
  EXPECT_LT(rel_diff(s.weights(), acc.solve(reg)), 1e-4);
}

TEST(RlsUpdate, NeedsPositiveRegularization) { EXPECT_THROW(RlsState(3, 1, 0.0), std::invalid_argument); }

TEST(Learner, RlsTracksFtlAcrossReaches) {
  Rng rng = stream(16);
  const Eigen::Index n = 4, d = 2, p = n + 1 + d;
  for (bool per_step : {false, true}) {
    UpdateRule rls;
    rls.kind = RuleKind::rls;
    rls.reg = 0.05;
    rls.per_step = per_step;
    UpdateRule ftl = rls;
    ftl.kind = RuleKind::ftl;
    ftl.per_step = false;
    Learner a(rls, n, d), b(ftl, n, d);
    AggregatedDataset ds;
    for (int k = 1; k <= 6; ++k) {
      ds.begin_reach(k);
      for (const auto& pr : random_pairs(rng, 9, p, d)) {
        a.observe(pr.z, pr.o);
        b.observe(pr.z, pr.o);
        ds.append(pr.z, pr.o, pr.step);
      }
      a.end_reach(ds, k);
      b.end_reach(ds, k);
      EXPECT_LT(rel_diff(a.params().weights(), b.params().weights()), 1e-9);
    }
  }
}

// ----- regret ---------------------------------------------------------------

TEST(Regret, HindsightPolicyHasZeroRegret) {
  Rng rng = stream(17);
  const auto pairs = random_pairs(rng, 20, 4, 2);
  const AggregatedDataset ds = dataset_from({{pairs.begin(), pairs.begin() + 8}, {pairs.begin() + 8, pairs.end()}});
  const Matrix best = ridge_fit(ds.pairs(), 4, 2, 0.0);
  std::vector<double> losses;
  for (const auto& pr : ds.pairs()) losses.push_back(loss(best, pr.z, pr.o));
  const RegretReport r = regret(losses, ds, 4, 2, 0.0);
  EXPECT_NEAR(r.regret, 0.0, 1e-9);
  EXPECT_NEAR(r.gamma_K, r.regret / 2.0, 1e-15);
  ASSERT_EQ(r.per_reach_loss.size(), 2u);
}

TEST(Regret, TinyStreamMatchesGridSearch) {
  Rng rng = stream(18);
  std::vector<std::vector<LabeledPair>> reaches(3);
  for (int k = 0; k < 3; ++k) {
    for (int t = 0; t < 2; ++t) {
      const double z = uniform(rng, -2.0, 2.0);
      reaches[static_cast<std::size_t>(k)].push_back({vec({z}), vec({1.3 * z + 0.4 * standard_normal(rng)}), k + 1, t});
    }
  }
  const AggregatedDataset ds = dataset_from(reaches);
  const std::vector<double> weights{0.0, 0.8, 2.1};  // executed decoder in each reach
  std::vector<double> losses;
  double executed = 0.0;
  for (const auto& pr : ds.pairs()) {
    const double w = weights[static_cast<std::size_t>(pr.reach - 1)];
    losses.push_back(std::pow(w * pr.z[0] - pr.o[0], 2));
    executed += losses.back();
  }
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100000; ++i) {
    const double w = -5.0 + 1e-4 * i;
    double s = 0.0;
    for (const auto& pr : ds.pairs()) s += std::pow(w * pr.z[0] - pr.o[0], 2);
    best = std::min(best, s);
  }
  EXPECT_NEAR(regret(losses, ds, 1, 1, 0.0).regret, executed - best, 1e-3);
}

TEST(Regret, NonNegativeForArbitraryExecutedDecoders) {
  Rng rng = stream(19);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<LabeledPair>> reaches;
    std::vector<double> losses;
    for (int k = 0; k < 5; ++k) {
      const Matrix W = 0.5 * random_matrix(rng, 2, 4);
      reaches.push_back(random_pairs(rng, 6, 4, 2));
      for (const auto& pr : reaches.back()) losses.push_back(loss(W, pr.z, pr.o));
    }
    const AggregatedDataset ds = dataset_from(reaches);
    EXPECT_GE(regret(losses, ds, 4, 2, 0.0).regret, -1e-9);
    EXPECT_GE(regret(losses, ds, 4, 2, 0.1).regret, -1e-9);
  }
}

TEST(UpdateRule, RejectsInvalidFields) {
  UpdateRule r;
  r.reg = -1.0;
  EXPECT_THROW(r.validate(), std::invalid_argument);
  r = UpdateRule{};
  r.kind = RuleKind::ma;
  r.lambda = 1.5;
  EXPECT_THROW(r.validate(), std::invalid_argument);
}
