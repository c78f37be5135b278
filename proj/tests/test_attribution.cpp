#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <algorithm>
#include <random>

#include "guard_lab/attribution.hpp"
#include "guard_lab/errors.hpp"
#include "guard_lab/synthdata.hpp"
#include "guard_lab/unlearning.hpp"

using namespace guard_lab;

namespace {

Vector random_vec(std::mt19937_64& eng, std::size_t n) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (double& x : v) x = nd(eng);
  return v;
}

// A A^T + shift I with A Gaussian.
SymMatrix random_spd(std::mt19937_64& eng, std::size_t n, double shift) {
  Eigen::MatrixXd a(n, n);
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = nd(eng);
  const Eigen::MatrixXd m = a * a.transpose() + shift * Eigen::MatrixXd::Identity(n, n);
  SymMatrix s(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) s.set(i, j, 0.5 * (m(i, j) + m(j, i)));
  return s;
}

Eigen::MatrixXd to_eigen(const SymMatrix& s) {
  const std::size_t n = s.order();
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = s(i, j);
  return m;
}

Eigen::VectorXd to_eigen(const Vector& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

GenSpec convex_gen(std::uint64_t seed) {
  GenSpec g;
  g.seed = seed;
  g.n = 120;
  g.dim = 3;
  g.num_classes = 4;
  g.forget_frac = 0.1;
  g.overlap = 0.5;
  g.noise_sigma = 1.0;
  return g;
}

// Two tight clusters, classes 0 and 1, with C = 3 (class 2 neutral).
Dataset separated_pair(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd(0.0, 0.3);
  Dataset ds;
  ds.dim = 2;
  ds.num_classes = 3;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    ds.inputs.push_back({(y ? 2.0 : -2.0) + nd(eng), 1.0 + nd(eng)});
    ds.labels.push_back(y);
    ds.retain_idx.push_back(i);
  }
  return ds;
}

}  // namespace

TEST(GuardScore, HandExamples) {
  EXPECT_DOUBLE_EQ(guard_score({1, 0}, {0.5, 2}), 0.5);
  EXPECT_DOUBLE_EQ(guard_score({1, 2}, {-2, 1}), 0.0);
  const Vector v{0.3, -1.7, 2.2};
  EXPECT_DOUBLE_EQ(guard_score(v, v), 0.09 + 2.89 + 4.84);
  EXPECT_THROW(guard_score({1, 2}, {1}), DimensionError);
}

TEST(InfluenceScore, IdentityHessianEqualsGuardScore) {
  std::mt19937_64 eng(1);
  const Vector a = random_vec(eng, 6), b = random_vec(eng, 6);
  EXPECT_NEAR(influence_score(SymMatrix::identity(6), a, b), guard_score(a, b), 1e-14);
}

TEST(InfluenceScore, ScaledIdentityHalves) {
  std::mt19937_64 eng(2);
  const Vector a = random_vec(eng, 5), b = random_vec(eng, 5);
  SymMatrix h = SymMatrix::identity(5);
  h *= 2.0;
  EXPECT_NEAR(influence_score(h, a, b), 0.5 * guard_score(a, b), 1e-14);
}

TEST(InfluenceScore, MatchesEigenExpansion) {
  std::mt19937_64 eng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const SymMatrix h = random_spd(eng, n, 1.0);
    const Vector a = random_vec(eng, n), b = random_vec(eng, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(h));
    double expansion = 0.0;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
      const Eigen::VectorXd v = es.eigenvectors().col(k);
      expansion += v.dot(to_eigen(a)) * v.dot(to_eigen(b)) / es.eigenvalues()(k);
    }
    EXPECT_NEAR(influence_score(h, a, b), expansion, 1e-8) << "n=" << n;
  }
}

TEST(InfluenceScore, SingularHessianIsReported) {
  SymMatrix h(2);
  h.set(0, 0, 1.0);
  EXPECT_THROW(influence_score(h, {1, 1}, {1, 1}), SingularityError);
}

TEST(IfBounds, IsotropicHessianIsTight) {
  SymMatrix h = SymMatrix::identity(4);
  h *= 4.0;
  const Vector a{1.0, -0.5, 2.0, 0.3}, b{0.2, 0.7, 1.1, -0.4};
  const IfBounds bd = if_bounds(inverse_eigen(h), a, b);
  const double ga = guard_score(a, b);
  EXPECT_NEAR(bd.lo, 0.25 * ga, 1e-14);
  EXPECT_NEAR(bd.hi, 0.25 * ga, 1e-14);
  EXPECT_NEAR(influence_score(h, a, b), bd.lo, 1e-14);
}

TEST(IfBounds, SingleModeUsesGlobalExtremes) {
  // With J_j on one eigenvector only q_1 is non-zero, so the bounds are
  // lambda_min * a and lambda_max * a and the exact value lambda_1 * a sits inside.
  SymMatrix h(3);
  h.set(0, 0, 1.0);
  h.set(1, 1, 2.0);
  h.set(2, 2, 4.0);
  const EigenDecomp inv = inverse_eigen(h);
  const Vector jj{0.0, 3.0, 0.0};
  const Vector javg{0.5, 1.0, -2.0};
  const IfBounds bd = if_bounds(inv, javg, jj);
  const double a = guard_score(javg, jj);
  EXPECT_NEAR(bd.q_plus + bd.q_minus, a, 1e-14);
  EXPECT_NEAR(bd.lo, 0.25 * a, 1e-14);
  EXPECT_NEAR(bd.hi, 1.0 * a, 1e-14);
  EXPECT_NEAR(influence_score(h, javg, jj), 0.5 * a, 1e-14);
}

TEST(IfBounds, DegenerateDenominatorThrows) {
  EXPECT_THROW(if_bounds(inverse_eigen(SymMatrix::identity(2)), {1, 0}, {0, 1}), DegenerateError);
}

TEST(IfBounds, HoldOnRandomConvexInstances) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Dataset data = generate(convex_gen(seed)).first;
    const ModelSpec spec{ModelKind::logistic, 3, 4, 0, 1e-2};
    const Vector theta = finetune(spec, data, 0.5, 30, seed).theta;
    const SymMatrix h = hessian(spec, theta, data, data.all_indices());
    const EigenDecomp inv = inverse_eigen(h);
    const Vector javg = avg_grad(spec, theta, data, data.retain_idx);
    for (std::size_t i : data.forget_idx) {
      const Vector g = sample_grad(spec, theta, data.inputs[i], data.labels[i]);
      const IfBounds bd = if_bounds(inv, javg, g);
      const double a_if = influence_score(h, javg, g);
      const double slack = 1e-8 * std::abs(a_if);
      EXPECT_LE(bd.lo - slack, a_if) << seed << "/" << i;
      EXPECT_GE(bd.hi + slack, a_if) << seed << "/" << i;
      EXPECT_NEAR(bd.q_plus + bd.q_minus, guard_score(javg, g), 1e-8 * std::abs(guard_score(javg, g)));
    }
  }
}

TEST(CStar, HandExamples) {
  EXPECT_DOUBLE_EQ(c_star({{0.7, 1.0}, {0.7, -3.0}, {0.7, 0.2}}), 0.7);
  EXPECT_DOUBLE_EQ(c_star({{1.0, 1.0}, {3.0, 1.0}}), 2.0);
  EXPECT_DOUBLE_EQ(c_star({{1.0, 1.0}, {3.0, 2.0}}), 2.6);
  EXPECT_THROW(c_star({{1.0, 0.0}, {2.0, 0.0}}), DegenerateError);
}

TEST(Spearman, RanksWithTies) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // ranks a = 1,2.5,2.5,4 and b = 1,2,3,4: r = 4.5 / sqrt(4.5 * 5)
  EXPECT_NEAR(spearman({1, 2, 2, 5}, {1, 2, 3, 4}), 4.5 / std::sqrt(4.5 * 5.0), 1e-15);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), DegenerateError);
}

TEST(ScaleCancellation, JointRescalingLeavesWeightsUnchanged) {
  std::mt19937_64 eng(9);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    const Vector a = random_vec(eng, 32);
    const double tau = 0.03;
    const GuardWeights w1 = guard_weights(a, tau);
    const GuardWeights w2 = guard_weights(scaled(a, c), c * tau);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(w1.weights[i], w2.weights[i], 1e-12) << c;
  }
}

TEST(LeaveOneOut, DuplicateSampleBarelyMoves) {
  Dataset ds = separated_pair(1000, 4);
  // Duplicate retain sample 0 and mark the copy as the forget set.
  ds.forget_idx.push_back(ds.size());
  ds.inputs.push_back(ds.inputs[0]);
  ds.labels.push_back(ds.labels[0]);
  const ModelSpec spec{ModelKind::logistic, 2, 3, 0, 1e-3};
  const double d = loo_delta(spec, ds, ds.size() - 1, 0.5, 50, 0);
  EXPECT_LE(std::abs(d), 1e-4);
}

TEST(LeaveOneOut, LoneClassMemberHasPositiveDelta) {
  Dataset ds = separated_pair(200, 5);
  ds.forget_idx.push_back(ds.size());
  ds.inputs.push_back({0.0, -2.0});
  ds.labels.push_back(2);
  ds.num_classes = 4;
  const ModelSpec spec{ModelKind::logistic, 2, 4, 0, 1e-2};
  EXPECT_GT(loo_delta(spec, ds, ds.size() - 1, 0.5, 50, 0), 0.0);
}

TEST(LeaveOneOut, SeedInvariantOnConvexModel) {
  const Dataset data = generate(convex_gen(2)).first;
  const ModelSpec spec{ModelKind::logistic, 3, 4, 0, 1e-2};
  for (std::size_t j : {data.forget_idx.front(), data.forget_idx.back()}) {
    const double a = loo_delta(spec, data, j, 0.5, 50, 1);
    const double b = loo_delta(spec, data, j, 0.5, 50, 99);
    EXPECT_LE(std::abs(a - b), 1e-5);
    const double ra = loo_retain_shift(spec, data, j, 0.5, 50, 1);
    const double rb = loo_retain_shift(spec, data, j, 0.5, 50, 99);
    EXPECT_LE(std::abs(ra - rb), 1e-5);
  }
}

TEST(Attribute, ReportOnConvexInstance) {
  const Dataset data = generate(convex_gen(6)).first;
  const ModelSpec spec{ModelKind::logistic, 3, 4, 0, 1e-2};
  const Vector theta = newton_polish(spec, data, data.all_indices(), finetune(spec, data, 0.5, 30, 6).theta).theta;
  AttributionOptions opt;
  opt.compute_loo = true;
  const AttributionReport rep = attribute(spec, data, theta, opt);
  ASSERT_EQ(rep.rows.size(), data.n_forget());
  EXPECT_EQ(rep.damping, 1e-2);
  EXPECT_EQ(rep.theta_hash, theta_hash(theta));
  ASSERT_TRUE(rep.c_star.has_value());
  std::vector<std::pair<double, double>> cs;
  for (const auto& r : rep.rows) {
    EXPECT_FALSE(r.bound_violated) << r.index;
    ASSERT_TRUE(r.if_score && r.lo && r.hi && r.loo && r.loo_retain);
    cs.emplace_back(*r.if_score / r.guard, r.guard);
  }
  EXPECT_DOUBLE_EQ(*rep.c_star, c_star(cs));
  const std::string csv = to_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,guard,if,lo,hi,loo,loo_retain,flags");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(data.n_forget() + 1));
  const auto j = to_json(rep);
  EXPECT_EQ(j["rows"].size(), data.n_forget());
}
