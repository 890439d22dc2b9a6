#include "rpenkf/liftestim.hpp"
#include "rpenkf/sdesim.hpp"

#include <gtest/gtest.h>

using namespace rpenkf;

namespace {

PathSeries square_loop(bool reversed = false) {
  Matrix Y(2, 5);
  Y << 0, 1, 1, 0, 0,
       0, 0, 1, 1, 0;
  if (reversed) Y = Y.rowwise().reverse().eval();
  return PathSeries(TimeGrid(1.0, 4), Y);
}

double shoelace(const Matrix& poly) {
  double s = 0.0;
  for (Index k = 0; k + 1 < poly.cols(); ++k)
    s += poly(0, k) * poly(1, k + 1) - poly(0, k + 1) * poly(1, k);
  return 0.5 * s;
}

}  // namespace

TEST(SubsampleLag, MustBePositive) { EXPECT_THROW(SubsampleLag(0), RangeError); }

TEST(SubsampleInterpolate, Examples) {
  GaussianStream s(1);
  Matrix Y(2, 11);
  s.fill(Y);
  const PathSeries p(TimeGrid(0.1, 10), Y);
  EXPECT_EQ((subsample_interpolate(p, SubsampleLag(1)).values() - Y).norm(), 0.0);

  const PathSeries line = subsample_interpolate(p, SubsampleLag(10));
  for (Index k = 0; k <= 10; ++k) {
    const Vector expect = Y.col(0) + (Y.col(10) - Y.col(0)) * (static_cast<double>(k) / 10.0);
    EXPECT_LT((line.values().col(k) - expect).norm(), 1e-14);
  }
  EXPECT_THROW(subsample_interpolate(p, SubsampleLag(11)), RangeError);

  Matrix z(1, 5);
  z << 0, 1, 0, 1, 0;
  const PathSeries zz = subsample_interpolate(PathSeries(TimeGrid(1.0, 4), z), SubsampleLag(2));
  EXPECT_EQ(zz.values().norm(), 0.0);
}

TEST(AreaProcess, StraightLineHasNoArea) {
  Matrix Y(2, 6);
  for (Index k = 0; k < 6; ++k) Y.col(k) << 0.3 * k, -1.2 * k;
  EXPECT_LT(area_process(PathSeries(TimeGrid(0.1, 5), Y)).values().cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AreaProcess, UnitSquareMatchesShoelace) {
  const PathSeries sq = square_loop();
  const AreaProcess A = area_process(sq);
  EXPECT_DOUBLE_EQ(A.component(4, 0, 1), shoelace(sq.values()));
  EXPECT_DOUBLE_EQ(A.component(4, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(A.component(4, 1, 0), -1.0);
  for (std::size_t k = 0; k <= 4; ++k) {
    const Matrix a = A.at(k);
    EXPECT_LT((a + a.transpose()).norm(), 1e-15);
  }
}

TEST(AreaProcess, ReversalNegates) {
  EXPECT_DOUBLE_EQ(area_process(square_loop(true)).component(4, 0, 1), -1.0);
}

TEST(AreaProcess, RandomPolygonMatchesShoelace) {
  GaussianStream s(2);
  Matrix Y(2, 30);
  s.fill(Y);
  Y.col(29) = Y.col(0);
  Y = (Y.colwise() - Vector(Y.col(0))).eval();
  EXPECT_NEAR(area_process(PathSeries(TimeGrid(0.1, 29), Y)).component(29, 0, 1), shoelace(Y), 1e-12);
}

TEST(SkewCorrection, TrivialCases) {
  GaussianStream s(3);
  Matrix Y(2, 21);
  s.fill(Y);
  const PathSeries p(TimeGrid(0.1, 20), Y);
  EXPECT_EQ(skew_correction(p, SubsampleLag(1)).norm(), 0.0);
  const PathSeries one(TimeGrid(0.1, 20), Matrix(Y.topRows(1)));
  EXPECT_EQ(skew_correction(one, SubsampleLag(5)).norm(), 0.0);
  const Matrix sc = skew_correction(p, SubsampleLag(5));
  EXPECT_EQ(sc.rows(), 4);
  EXPECT_EQ(sc.cols(), 20);
  const AreaProcess cum = cumulative_skew_correction(p, SubsampleLag(5));
  EXPECT_LT((cum.values().col(20) - sc.rowwise().sum()).norm(), 1e-12);
}

TEST(SkewCorrection, PhysicalBrownianMotionSlope) {
  // Area rate of the fine-minus-coarse correction is gamma / 2 off-diagonal.
  std::vector<double> rates;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto pbm = simulate_physical_bm(-2.0, 1e-2, TimeGrid::covering(1e-3, 10.0), seed, 10);
    rates.push_back(area_rate(cumulative_skew_correction(pbm.w_eps, SubsampleLag(70)), 0, 1));
  }
  std::sort(rates.begin(), rates.end());
  EXPECT_NEAR(rates[1], -1.0, 0.25);
}

TEST(LagDiagnostics, TrivialRowAndMonotonePath) {
  Matrix Y(1, 101);
  for (Index k = 0; k <= 100; ++k) Y(0, k) = std::pow(0.01 * k, 3);
  const PathSeries p(TimeGrid(0.01, 100), Y);
  std::vector<SubsampleLag> lags;
  for (std::size_t t : {1, 2, 5, 10, 25, 50}) lags.emplace_back(t);
  const auto rows = lag_diagnostics(p, lags);
  EXPECT_EQ(rows[0].path_l2, 0.0);
  EXPECT_EQ(rows[0].area_l2, 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(rows[i].path_l2, rows[i - 1].path_l2);
    EXPECT_GE(rows[i].area_l2, 0.0);
  }
}
