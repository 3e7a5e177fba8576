#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "phynfp/diffops.hpp"
#include "test_support.hpp"

using namespace phynfp;

namespace {

constexpr double kPi = std::numbers::pi;

// a -> c, b -> c with ids a=0, b=1, c=2.
DirectedGraph confluence() { return DirectedGraph(3, {{0, 2}, {1, 2}}, Eigen::MatrixXd::Zero(2, 0)); }

Eigen::MatrixXd dense_of(const DifferenceOperator<double>& op) { return op.dense(); }

// Brute-force DTFT magnitude of a circulant first-difference applied to e^{j w n}.
double circulant_gain(std::size_t n, double omega, double alpha) {
  std::complex<double> num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = std::polar(1.0, omega * static_cast<double>(i));
    const auto prev = std::polar(1.0, omega * static_cast<double>((i + n - 1) % n));
    const auto y = x + alpha * (x - prev);
    num += std::norm(y);
    den += std::norm(x);
  }
  return std::sqrt(num.real() / den.real());
}

}  // namespace

TEST(BaseDifference, PathRowsFollowBoundaryRule) {
  const auto D = build_base_difference(directed_path(3));
  Eigen::MatrixXd expected(3, 3);
  expected << 1, -1, 0,
              -1, 1, 0,
              0, -1, 1;
  EXPECT_EQ(dense_of(D), expected);
}

TEST(BaseDifference, ConfluenceAveragesUpstream) {
  const auto D = build_base_difference(confluence());
  const Eigen::MatrixXd m = dense_of(D);
  EXPECT_DOUBLE_EQ(m(2, 0), -0.5);
  EXPECT_DOUBLE_EQ(m(2, 1), -0.5);
  EXPECT_DOUBLE_EQ(m(2, 2), 1.0);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(m.row(i).sum(), 0.0);
}

TEST(BaseDifference, HeadwaterWithSeveralDownstreamAverages) {
  // 0 -> 1, 0 -> 2: the headwater differences against the mean of its successors.
  const DirectedGraph g(3, {{0, 1}, {0, 2}}, Eigen::MatrixXd::Zero(2, 0));
  const Eigen::MatrixXd m = dense_of(build_base_difference(g));
  EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m(0, 1), -0.5);
  EXPECT_DOUBLE_EQ(m(0, 2), -0.5);
}

TEST(BaseDifference, IsolatedNodeHasZeroRow) {
  const DirectedGraph g(3, {{0, 1}}, Eigen::MatrixXd::Zero(1, 0));
  EXPECT_TRUE(dense_of(build_base_difference(g)).row(2).isZero(0.0));
}

TEST(BaseDifference, AnnihilatesConstants) {
  std::mt19937_64 rng(3);
  std::vector<Edge> edges;
  for (NodeId i = 1; i < 40; ++i) edges.push_back({i, static_cast<NodeId>(rng() % static_cast<std::uint64_t>(i))});
  const DirectedGraph g(40, edges, Eigen::MatrixXd::Zero(39, 0));
  const auto D = build_base_difference(g);
  const Eigen::VectorXd ones = Eigen::VectorXd::Constant(40, 3.25);
  EXPECT_LT((D.matrix() * ones).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(D.apply(ones).isZero(0.0));
}

TEST(D1, UniformSpacingScalesBase) {
  const auto g = directed_path(5);
  const auto D1 = build_d1<double>(g, Eigen::VectorXd::Constant(4, 2.0));
  EXPECT_TRUE(dense_of(D1).isApprox(0.5 * dense_of(build_base_difference(g)), 0.0));
}

TEST(D1, ConfluenceSpacingMatchesHandValues) {
  Eigen::VectorXd dx(2);
  dx << 1.0, 4.0;
  const Eigen::MatrixXd m = dense_of(build_d1<double>(confluence(), dx));
  EXPECT_DOUBLE_EQ(m(2, 0), -0.5);
  EXPECT_DOUBLE_EQ(m(2, 1), -0.125);
  EXPECT_DOUBLE_EQ(m(2, 2), 0.625);
  EXPECT_EQ(m.row(2).sum(), 0.0);
}

TEST(D1, RejectsNonPositiveSpacing) {
  Eigen::VectorXd dx(2);
  dx << 1.0, 0.0;
  EXPECT_THROW(build_d1<double>(confluence(), dx), ValueError);
  dx << 1.0, -2.0;
  EXPECT_THROW(build_d1<double>(confluence(), dx), ValueError);
  EXPECT_THROW(build_d1<double>(confluence(), Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST(D2, UniformElevationScalesBase) {
  const auto g = directed_path(4);
  const auto D2 = build_d2<double>(g, Eigen::VectorXd::Ones(3), Eigen::VectorXd::Constant(3, 3.0));
  EXPECT_TRUE(dense_of(D2).isApprox(3.0 * dense_of(build_base_difference(g)), 0.0));
}

TEST(D2, ZeroElevationGivesZeroOperator) {
  const auto D2 = build_d2<double>(confluence(), Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2));
  EXPECT_TRUE(dense_of(D2).isZero(0.0));
}

TEST(D2, MixedSignsKeepZeroRowSums) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0.1, 3.0), any(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd dx(2), dz(2);
    dx << pos(rng), pos(rng);
    dz << any(rng), -std::abs(any(rng));
    const Eigen::MatrixXd m = dense_of(build_d2<double>(confluence(), dx, dz));
    EXPECT_NEAR(m.row(2).sum(), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(m(2, 0), -0.5 * dz(0) / dx(0));
    EXPECT_DOUBLE_EQ(m(2, 1), -0.5 * dz(1) / dx(1));
  }
}

TEST(Composite, ZeroAlphaIsIdentity) {
  const auto D = build_base_difference(directed_path(5));
  Eigen::VectorXd mu(5);
  mu << 1, -2, 3, 0.5, 7;
  EXPECT_EQ(apply_composite(mu, 0.0, D), mu);
}

TEST(Composite, ConstantsPassThrough) {
  const auto D = build_base_difference(directed_ring(9));
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(9, -1.5);
  for (double alpha : {-0.5, 0.3, 4.0}) EXPECT_EQ(apply_composite(mu, alpha, D), mu);
}

TEST(Composite, MatchesDenseProduct) {
  std::mt19937_64 rng(5);
  const auto D = build_base_difference(directed_path(5));
  const Eigen::VectorXd mu = phynfp::testing::random_matrix(5, 1, rng);
  const Eigen::VectorXd oracle = (Eigen::MatrixXd::Identity(5, 5) + 0.3 * dense_of(D)) * mu;
  EXPECT_LT((apply_composite(mu, 0.3, D) - oracle).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Composite, DimensionMismatch) {
  const auto D = build_base_difference(directed_path(5));
  EXPECT_THROW(apply_composite(Eigen::VectorXd::Ones(4), 0.5, D), ShapeError);
}

TEST(StencilApply, MatchesSparseMatrixOnStackedBlocks) {
  std::mt19937_64 rng(8);
  const DirectedGraph g(4, {{0, 2}, {1, 2}, {2, 3}, {3, 0}}, Eigen::MatrixXd::Zero(4, 0));
  const Eigen::VectorXd dx = phynfp::testing::random_matrix(4, 1, rng, 0.5, 2.0);
  const auto D1 = build_d1<double>(g, dx);
  const Eigen::MatrixXd x = phynfp::testing::random_matrix(12, 3, rng);
  const Eigen::MatrixXd got = D1.apply(x);
  for (Eigen::Index b = 0; b < 3; ++b) {
    const Eigen::MatrixXd want = D1.matrix() * x.middleRows(b * 4, 4);
    EXPECT_LT((got.middleRows(b * 4, 4) - want).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(ClosedForm, DifferenceMagnitude) {
  EXPECT_EQ(closed_form_diff_magnitude(0.0), 0.0);
  EXPECT_NEAR(closed_form_diff_magnitude(kPi), 2.0, 1e-15);
  EXPECT_NEAR(closed_form_diff_magnitude(kPi / 2), std::sqrt(2.0), 1e-15);
  EXPECT_THROW(closed_form_diff_magnitude(-0.1), ValueError);
  EXPECT_THROW(closed_form_diff_magnitude(kPi + 1e-6), ValueError);
}

TEST(ClosedForm, CompositeMagnitude) {
  for (double alpha : {-3.0, 0.0, 0.5, 7.0}) EXPECT_EQ(closed_form_composite_magnitude(0.0, alpha), 1.0);
  EXPECT_NEAR(closed_form_composite_magnitude(kPi, 0.5), 2.0, 1e-15);
  EXPECT_NEAR(closed_form_composite_magnitude(kPi, -0.25), 0.5, 1e-15);
  EXPECT_NEAR(closed_form_composite_magnitude(kPi, 1.0), 3.0, 1e-15);
}

TEST(ClosedForm, MonotoneForNonNegativeAlpha) {
  for (double alpha : {0.25, 1.0, 2.0}) {
    double prev = -1.0;
    for (double w : ring_frequencies(64)) {
      const double m = closed_form_composite_magnitude(w, alpha);
      EXPECT_GE(m, prev);
      prev = m;
    }
  }
}

TEST(Empirical, SpecExamples) {
  EXPECT_NEAR(empirical_response(256, 0.0, 1.0).magnitude, 1.0, 1e-12);
  EXPECT_NEAR(empirical_response(256, kPi, 1.0).magnitude, 3.0, 1e-12);
  EXPECT_NEAR(empirical_response(64, 2 * kPi * 8 / 64, 0.0).magnitude, 1.0, 1e-12);
}

TEST(Empirical, MatchesCirculantOracleAndClosedForm) {
  for (double alpha : {0.0, 0.5, 1.0, -0.3}) {
    for (double w : ring_frequencies(32)) {
      const double emp = empirical_response(32, w, alpha).magnitude;
      EXPECT_NEAR(emp, circulant_gain(32, w, alpha), 1e-12);
      EXPECT_NEAR(emp, closed_form_composite_magnitude(w, alpha), 1e-12);
    }
  }
  for (double w : ring_frequencies(32)) {
    EXPECT_NEAR(empirical_difference_response(32, w).magnitude, closed_form_diff_magnitude(w), 1e-12);
  }
}

TEST(Empirical, RejectsNonPeriodicFrequency) {
  EXPECT_THROW(empirical_response(64, 0.1, 1.0), ValueError);
  EXPECT_THROW(empirical_response(4, 0.0, 1.0), ValueError);
}

TEST(RingFrequencies, CoversZeroToPi) {
  const auto w = ring_frequencies(8);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w.front(), 0.0);
  EXPECT_NEAR(w.back(), kPi, 1e-15);
}
