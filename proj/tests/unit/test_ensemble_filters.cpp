#include "rpenkf/filters.hpp"

#include <gtest/gtest.h>

using namespace rpenkf;

namespace {

Vector loop_contract(const Matrix& cov, const Matrix& P, const Matrix& L) {
  const Index D = P.rows(), d = P.cols();
  Vector out = Vector::Zero(D);
  for (Index g = 0; g < D; ++g)
    for (Index j = 0; j < d; ++j)
      for (Index r = 0; r < D; ++r)
        for (Index q = 0; q < d; ++q) out(g) += cov(g, j + d * r) * P(r, q) * L(q, j);
  return out;
}

std::shared_ptr<const FilterModel> nonlinear_model() {
  const Matrix Gz = Matrix::Identity(2, 2);
  return std::make_shared<const FilterModel>(
      embed_state_parameter(maps::quadratic(2, -1.0, 0.3), Gz, 0.3 * Matrix::Identity(2, 2)));
}

}  // namespace

TEST(Ensemble, RequiresTwoFiniteMembers) {
  EXPECT_THROW(Ensemble(Matrix::Zero(2, 1)), DimensionError);
  Matrix X = Matrix::Zero(2, 3);
  X(0, 1) = std::nan("");
  EXPECT_THROW(Ensemble{X}, NumericalError);
}

TEST(EmpiricalMoments, HandEvaluatedScalarCase) {
  const Matrix one = Matrix::Ones(1, 1);
  const FilterModel m(maps::linear(one), maps::linear(one), Matrix::Zero(1, 1), Matrix::Zero(1, 1), one);
  Matrix X(1, 2);
  X << 0, 2;
  const GainSet g = empirical_moments(X, m);
  EXPECT_DOUBLE_EQ(g.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(g.cov_xh(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.P(0, 0), 2.0);
}

TEST(EmpiricalMoments, AffineObservationHasNoCorrection) {
  Matrix A(2, 3);
  A << 1, 2, 0, 0, -1, 3;
  const Matrix I = Matrix::Identity(3, 3);
  const FilterModel m(maps::linear(-I), maps::affine(A, Vector::Constant(2, 4.0)), I, Matrix::Zero(2, 3),
                      Matrix::Identity(2, 2));
  GaussianStream s(1);
  Matrix X(3, 50);
  s.fill(X);
  const GainSet g = empirical_moments(X, m);
  EXPECT_EQ(g.cov_xDh.norm(), 0.0);
  EXPECT_EQ(g.Gamma.norm(), 0.0);
}

TEST(EmpiricalMoments, ConstantShiftOfObservationIgnored) {
  GaussianStream s(2);
  Matrix X(3, 20);
  s.fill(X);
  const auto m = nonlinear_model();
  const BatchMap h = m->h();
  const BatchMap shifted("shifted", 3, 2,
                         [h](const Matrix& Z) -> Matrix { return (h.value(Z).array() + 5.0).matrix(); },
                         [h](const Matrix& Z) -> Matrix { return h.jacobian(Z); });
  const FilterModel m2(m->f(), shifted, m->G_sqrt(), m->U(), m->R_sqrt());
  const GainSet a = empirical_moments(X, *m), b = empirical_moments(X, m2);
  EXPECT_LT((a.cov_xh - b.cov_xh).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmpiricalMoments, PermutationInvariant) {
  GaussianStream s(3);
  Matrix X(3, 10);
  s.fill(X);
  const auto m = nonlinear_model();
  const Matrix Xp = X.rowwise().reverse();
  const GainSet a = empirical_moments(X, *m), b = empirical_moments(Xp, *m);
  EXPECT_LT((a.cov_xh - b.cov_xh).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.cov_xDh - b.cov_xDh).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmpiricalMoments, GammaIsHalfContractionWithIdentity) {
  GaussianStream s(4);
  Matrix X(3, 40);
  s.fill(X);
  const auto m = nonlinear_model();
  const GainSet g = empirical_moments(X, *m);
  const Vector viaC = -0.5 * gubinelli_contract(g.cov_xDh, g.P, m->C() * m->C_inv());
  EXPECT_LT((viaC - g.Gamma).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GubinelliContract, NestedLoopOracle) {
  GaussianStream s(5);
  for (Index D = 1; D <= 3; ++D)
    for (Index d = 1; d <= 3; ++d) {
      Matrix cov(D, d * D), P(D, d), L(d, d);
      s.fill(cov);
      s.fill(P);
      s.fill(L);
      EXPECT_LT((gubinelli_contract(cov, P, L) - loop_contract(cov, P, L)).cwiseAbs().maxCoeff(), 1e-13);
      EXPECT_EQ(gubinelli_contract(cov, P, Matrix::Zero(d, d)).norm(), 0.0);
    }
  EXPECT_THROW(gubinelli_contract(Matrix::Zero(2, 3), Matrix::Zero(2, 2), Matrix::Zero(2, 2)), DimensionError);
}

TEST(Embedding, ParameterBlockHasNoNoise) {
  const auto m = nonlinear_model();
  EXPECT_EQ(m->G_sqrt().row(2).norm(), 0.0);
  EXPECT_EQ(m->param_dim(), 1);
  EXPECT_EQ(m->U().cols(), m->G_sqrt().cols());
}

TEST(FilterStep, AffineObservationGivesIdenticalSchemes) {
  const Matrix I = Matrix::Identity(2, 2);
  auto m = std::make_shared<const FilterModel>(maps::rotation(-1.0), maps::affine(2.0 * I, Vector::Ones(2)),
                                               I, 0.5 * I, 0.3 * I);
  GaussianStream s(6);
  Matrix X0(2, 30);
  s.fill(X0);
  FilterState a(m, X0, 1e-3, GaussianStream(7)), b(m, X0, 1e-3, GaussianStream(7));
  GaussianStream obs(8);
  for (int k = 0; k < 200; ++k) {
    const Vector dY = obs.normals(2) * 0.03;
    Matrix dYY(2, 2);
    obs.fill(dYY);
    enkf_step(a, dY);
    rp_enkf_step(b, dY, dYY);
  }
  EXPECT_EQ((a.members() - b.members()).norm(), 0.0);
}

TEST(FilterStep, ZeroGainIsSignalEulerMaruyama) {
  const Matrix I = Matrix::Identity(2, 2);
  auto m = std::make_shared<const FilterModel>(maps::rotation(-1.0), maps::constant(Vector::Ones(2), 2), I,
                                               Matrix::Zero(2, 2), I);
  Matrix X0(2, 5);
  GaussianStream(9).fill(X0);
  FilterState st(m, X0, 0.01, GaussianStream(10));
  st.step(Scheme::rp_enkf, Vector::Ones(2), Matrix::Identity(2, 2));
  GaussianStream ref(10);
  Matrix xi(2, 5);
  ref.fill(xi);
  const Matrix expect = X0 + m->f().value(X0) * 0.01 + xi * 0.1;
  EXPECT_LT((st.members() - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FilterStep, NoDynamicsLeavesEnsembleUnchanged) {
  const Matrix Z = Matrix::Zero(1, 1), one = Matrix::Ones(1, 1);
  auto m = std::make_shared<const FilterModel>(maps::linear(Z), maps::linear(Z), Z, Z, one);
  Matrix X0(1, 4);
  X0 << 1, 2, 3, 4;
  FilterState st(m, X0, 0.1, GaussianStream(1));
  for (int k = 0; k < 10; ++k) st.step(Scheme::enkf, Vector::Ones(1), Matrix::Zero(1, 1));
  EXPECT_EQ((st.members() - X0).norm(), 0.0);
}

TEST(FilterStep, DivergenceFlagged) {
  const Matrix one = Matrix::Ones(1, 1);
  auto m = std::make_shared<const FilterModel>(maps::linear(1e4 * one), maps::linear(Matrix::Zero(1, 1)),
                                               Matrix::Zero(1, 1), Matrix::Zero(1, 1), one);
  FilterState st(m, Matrix::Constant(1, 3, 1.0), 0.1, GaussianStream(1));
  for (int k = 0; k < 10 && !st.diverged(); ++k) st.step(Scheme::enkf, Vector::Zero(1), Matrix::Zero(1, 1));
  EXPECT_TRUE(st.diverged());
}

TEST(RunFilter, MinimalEnsembleAndRecordShape) {
  const auto m = nonlinear_model();
  const GaussianPrior prior{Vector::Zero(3), Matrix::Identity(3, 3)};
  Matrix Y(2, 11);
  GaussianStream(3).fill(Y);
  const LiftedSeries lift = canonical_lift(PathSeries(TimeGrid(0.01, 10), 0.1 * Y));
  const RunRecord rec = run_filter(m, prior, lift, 2, 0, Scheme::rp_enkf);
  EXPECT_EQ(rec.rows(), 11u);
  EXPECT_EQ(rec.var_theta.front().size(), 1);
  EXPECT_FALSE(rec.any_diverged());
  EXPECT_THROW(run_filter(m, prior, lift, 1, 0, Scheme::enkf), DimensionError);
}

TEST(RunFilter, ParametersConstantWithoutGain) {
  const Matrix I = Matrix::Identity(2, 2);
  auto base = embed_state_parameter(maps::rotation(-1.0), I, I);
  auto m = std::make_shared<const FilterModel>(base.f(), maps::constant(Vector::Zero(2), 3), base.G_sqrt(),
                                               Matrix::Zero(2, 2), I);
  const GaussianPrior prior{Vector::Zero(3), Matrix::Identity(3, 3)};
  Matrix Y(2, 51);
  GaussianStream(4).fill(Y);
  RunOptions opt;
  opt.checkpoint_steps = {0, 50};
  const RunRecord rec = run_filter(m, prior, canonical_lift(PathSeries(TimeGrid(0.01, 50), Y)), 10, 1,
                                   Scheme::rp_enkf, opt);
  ASSERT_EQ(rec.checkpoints.size(), 2u);
  EXPECT_EQ((rec.checkpoints[0].second.row(2) - rec.checkpoints[1].second.row(2)).norm(), 0.0);
}

TEST(KalmanBucy, LyapunovFixedPoint) {
  const Matrix one = Matrix::Ones(1, 1), zero = Matrix::Zero(1, 1);
  const PathSeries Y(TimeGrid(1e-2, 2000), Matrix::Zero(1, 2001));
  const auto kb = kalman_bucy_reference(-one, zero, one, zero, one, Vector::Zero(1), one, Y);
  EXPECT_NEAR(kb.covs.back()(0, 0), 0.5, 1e-8);
}

TEST(KalmanBucy, ScalarRiccatiClosedForm) {
  const Matrix one = Matrix::Ones(1, 1), zero = Matrix::Zero(1, 1);
  const double r = 0.3, s0 = 2.0;
  const PathSeries Y(TimeGrid(1e-2, 300), Matrix::Zero(1, 301));
  const auto kb = kalman_bucy_reference(zero, one, zero, zero, r * one, Vector::Zero(1), s0 * one, Y);
  for (std::size_t k : {0, 10, 100, 300}) {
    const double t = 1e-2 * static_cast<double>(k);
    const double exact = 1.0 / (1.0 / s0 + t / r);
    EXPECT_NEAR(kb.covs[k](0, 0), exact, 1e-6 * exact);
  }
}

TEST(KalmanBucy, StaysSymmetricPositive) {
  Matrix F(2, 2);
  F << -1, 0.5, -0.3, -0.2;
  const Matrix I = Matrix::Identity(2, 2);
  Matrix Y(2, 501);
  GaussianStream(5).fill(Y);
  const auto kb = kalman_bucy_reference(F, I, I, 0.2 * I, 0.1 * I, Vector::Zero(2), I,
                                        PathSeries(TimeGrid(1e-2, 500), 0.1 * Y));
  for (const auto& S : kb.covs) {
    EXPECT_LT((S - S.transpose()).norm(), 1e-12);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(S).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Mle, Telescoping) {
  Matrix Z(1, 6);
  Z << 0, 0.3, -0.1, 0.4, 1.0, 1.5;
  const PathSeries p(TimeGrid(0.2, 5), Z);
  EXPECT_NEAR(mle_estimator(maps::constant(Vector::Ones(1), 1), p), 1.5 / 1.0, 1e-14);
  const BatchMap twice = maps::constant(Vector::Constant(1, 2.0), 1);
  EXPECT_NEAR(mle_estimator(twice, p), 0.75, 1e-14);
}

TEST(Mle, ConsistentOnLongRun) {
  const BatchMap f = maps::rotation(-1.0);
  GaussianStream s(6);
  const TimeGrid grid = TimeGrid::covering(1e-3, 400.0);
  const auto dd = driven_parameter_model(0.5, f, brownian_increments(2, grid, s), 1.0, Matrix::Zero(2, 2),
                                         grid, 1, Vector::Zero(2));
  const double theta = mle_estimator(f, dd.Z);
  // Fisher information: int |f|^2 dt; stationary E|f|^2 = 2 E|z|^2 = 2 * 2 * 1 / (2 theta).
  const double se = 1.0 / std::sqrt(4.0 * 400.0);
  EXPECT_NEAR(theta, 0.5, 3.0 * se);
}

TEST(Mle, RoughVersionReducesForConstantDrift) {
  Matrix Z(2, 6);
  GaussianStream(7).fill(Z);
  const PathSeries p(TimeGrid(0.1, 5), Z);
  const BatchMap c = maps::constant((Vector(2) << 1.0, -2.0).finished(), 2);
  EXPECT_NEAR(rp_mle_estimator(c, canonical_lift(p)), mle_estimator(c, p), 1e-12);
}

TEST(Mle, RoughVersionOnSmoothPath) {
  // Canonical lift of a smooth path: rough estimator equals the Ito sum
  // plus the trapezoid (Stratonovich) correction minus the trace term.
  const BatchMap f = maps::quadratic(2, -1.0, 0.2);
  const std::size_t n = 2000;
  Matrix Z(2, static_cast<Index>(n + 1));
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = 1e-3 * static_cast<double>(k);
    Z.col(static_cast<Index>(k)) << std::sin(3 * t), std::cos(2 * t);
  }
  const PathSeries p(TimeGrid(1e-3, n), Z);
  const double rp = rp_mle_estimator(f, canonical_lift(p), Matrix::Zero(2, 2));
  double num = 0.0, den = 0.0;
  const Matrix F = f.value(Z);
  for (std::size_t k = 0; k < n; ++k) {
    const Index kk = static_cast<Index>(k);
    num += 0.5 * (F.col(kk) + F.col(kk + 1)).dot(Z.col(kk + 1) - Z.col(kk));
    den += F.col(kk).squaredNorm() * 1e-3;
  }
  EXPECT_NEAR(rp, num / den, 1e-3);
}

TEST(ParamPosterior, ClosedFormVariance) {
  const PathSeries Y(TimeGrid(1e-3, 2000), Matrix::Zero(1, 2001));
  const auto post = analytic_param_posterior(maps::constant(Vector::Ones(1), 1), Y, Matrix::Ones(1, 1), 1.0);
  for (std::size_t k : {0, 500, 1000, 2000}) {
    const double t = 1e-3 * static_cast<double>(k);
    EXPECT_NEAR(post.variance(static_cast<Index>(k)), 1.0 / (1.0 + t), 1e-12);
  }
  for (Index k = 1; k <= 2000; ++k) {
    EXPECT_GT(post.variance(k), 0.0);
    EXPECT_LE(post.variance(k), post.variance(k - 1));
  }
  EXPECT_THROW(analytic_param_posterior(maps::constant(Vector::Ones(1), 1), Y, Matrix::Ones(1, 1), 0.0),
               RangeError);
}
