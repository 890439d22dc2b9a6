#pragma once

// EnKF and RP-EnKF steps, the state-parameter embedding, run drivers and the
// closed-form references (Kalman-Bucy, likelihood estimators, posterior
// variance of a linear-in-parameter model).

#include "rpenkf/ensemble.hpp"
#include "rpenkf/roughpath.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rpenkf {

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

struct GaussianPrior {
  Vector mean;
  Matrix cov;

  Matrix sample(Index n, GaussianStream& stream) const {
    detail::require_dims(cov.rows() == mean.size() && cov.cols() == mean.size(),
                         "GaussianPrior: covariance shape does not match mean");
    const Matrix S = symmetric_sqrt(cov);
    Matrix xi(mean.size(), n);
    stream.fill(xi);
    return (S * xi).colwise() + mean;
  }
};

namespace maps {

/// (z, theta) -> (F(z, theta), 0_p).
inline BatchMap with_zero_parameter_drift(const BatchMap& F, Index p) {
  const Index d = F.out_dim(), D = F.in_dim();
  return BatchMap(
      F.name() + "_ext", D, d + p,
      [F, d, p](const Matrix& X) -> Matrix {
        Matrix out = Matrix::Zero(d + p, X.cols());
        out.topRows(d) = F.value(X);
        return out;
      },
      nullptr);
}

}  // namespace maps

/// Extended model for x = (z, theta) in R^{d+p}:
///   f = (F(z, theta), 0), h = F, G_sqrt = [G_Z_sqrt; 0], U = G_Z_sqrt.
inline FilterModel embed_state_parameter(const BatchMap& F, const Matrix& G_Z_sqrt,
                                         const Matrix& R_sqrt, Index p) {
  const Index d = F.out_dim();
  detail::require_dims(F.in_dim() == d + p,
                       "embed_state_parameter: F must take R^" + std::to_string(d + p));
  detail::require_dims(G_Z_sqrt.rows() == d,
                       "embed_state_parameter: G_Z_sqrt must have " + std::to_string(d) +
                           " rows, got " + detail::shape(G_Z_sqrt));
  Matrix Gs = Matrix::Zero(d + p, G_Z_sqrt.cols());
  Gs.topRows(d) = G_Z_sqrt;
  FilterModel model(maps::with_zero_parameter_drift(F, p), F, Gs, G_Z_sqrt, R_sqrt);
  model.set_param_dim(p);
  return model;
}

/// Product form F(z, theta) = theta * g(z) with scalar theta.
inline FilterModel embed_state_parameter(const BatchMap& g, const Matrix& G_Z_sqrt,
                                         const Matrix& R_sqrt) {
  return embed_state_parameter(maps::theta_scaled(g), G_Z_sqrt, R_sqrt, 1);
}

// ---------------------------------------------------------------------------
// Filter state and steps
// ---------------------------------------------------------------------------

enum class Scheme { enkf, rp_enkf };

inline const char* to_string(Scheme s) { return s == Scheme::enkf ? "enkf" : "rp_enkf"; }

/// Owns an ensemble and its noise source. In per-member mode every particle
/// draws from its own stream, so two systems of different size can share
/// the streams of their common indices.
class FilterState {
 public:
  static constexpr double divergence_threshold = 1e8;

  FilterState(std::shared_ptr<const FilterModel> model, Matrix members, double dt,
              GaussianStream stream)
      : model_(std::move(model)), X_(std::move(members)), dt_(dt) {
    init_checks();
    streams_.push_back(std::move(stream));
  }

  FilterState(std::shared_ptr<const FilterModel> model, Matrix members, double dt,
              std::vector<GaussianStream> member_streams)
      : model_(std::move(model)), X_(std::move(members)), dt_(dt),
        streams_(std::move(member_streams)), per_member_(true) {
    init_checks();
    detail::require_dims(static_cast<Index>(streams_.size()) == X_.cols(),
                         "FilterState: need one stream per member");
  }

  const FilterModel& model() const noexcept { return *model_; }
  const Matrix& members() const noexcept { return X_; }
  Index size() const noexcept { return X_.cols(); }
  std::size_t step_index() const noexcept { return k_; }
  double dt() const noexcept { return dt_; }
  double time() const noexcept { return static_cast<double>(k_) * dt_; }
  bool diverged() const noexcept { return diverged_; }

  /// One step of either scheme. dYY is ignored by the EnKF.
  void step(Scheme scheme, const Vector& dY, const Matrix& dYY) {
    const FilterModel& m = *model_;
    const Index d = m.obs_dim(), nw = m.noise_dim(), N = X_.cols();
    detail::require_dims(dY.size() == d, "step: dY must have length " + std::to_string(d));
    if (diverged_) return;
    const bool rough = scheme == Scheme::rp_enkf;
    if (rough)
      detail::require_dims(dYY.rows() == d && dYY.cols() == d,
                           "step: dYY must be " + std::to_string(d) + "x" + std::to_string(d));

    const Matrix HX = m.h().value(X_);
    const GainSet g = empirical_moments(X_, HX, m, rough);

    xi_.resize(nw, N);
    eta_.resize(d, N);
    draw();

    const double sdt = std::sqrt(dt_);
    Matrix innov = -(HX * dt_ + (m.U() * xi_ + m.R_sqrt() * eta_) * sdt);
    innov.colwise() += dY;
    Matrix next = X_ + m.f().value(X_) * dt_ + m.G_sqrt() * xi_ * sdt + g.P * innov;
    if (rough) {
      const Vector corr = gubinelli_contract(g.cov_xDh, g.P, dYY * m.C_inv()) + g.Gamma * dt_;
      next.colwise() += corr;
    }
    X_ = std::move(next);
    ++k_;
    const double worst = X_.colwise().norm().maxCoeff();
    if (!(worst <= divergence_threshold)) diverged_ = true;
  }

 private:
  void init_checks() {
    detail::require_dims(X_.rows() == model_->state_dim(),
                         "FilterState: ensemble dimension does not match model");
    if (X_.cols() < 2) throw DimensionError("FilterState: need at least 2 members");
    if (!(dt_ > 0.0)) throw RangeError("FilterState: dt must be positive");
  }

  void draw() {
    if (!per_member_) {
      streams_[0].fill(xi_);
      streams_[0].fill(eta_);
      return;
    }
    for (Index i = 0; i < X_.cols(); ++i) {
      auto& s = streams_[static_cast<std::size_t>(i)];
      for (Index r = 0; r < xi_.rows(); ++r) xi_(r, i) = s.normal();
      for (Index r = 0; r < eta_.rows(); ++r) eta_(r, i) = s.normal();
    }
  }

  std::shared_ptr<const FilterModel> model_;
  Matrix X_;
  double dt_;
  std::vector<GaussianStream> streams_;
  bool per_member_ = false;
  std::size_t k_ = 0;
  bool diverged_ = false;
  Matrix xi_, eta_;
};

inline void enkf_step(FilterState& state, const Vector& dY) {
  state.step(Scheme::enkf, dY, Matrix());
}

inline void rp_enkf_step(FilterState& state, const Vector& dY, const Matrix& dYY) {
  state.step(Scheme::rp_enkf, dY, dYY);
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunRecord {
  std::vector<double> t;
  std::vector<Vector> mean;       ///< ensemble mean, all D components
  std::vector<Vector> var_theta;  ///< ensemble variance of the parameter block
  std::vector<std::uint8_t> diverged;
  std::vector<std::pair<std::size_t, Matrix>> checkpoints;
  std::uint64_t seed = 0;
  std::string config_hash;

  bool any_diverged() const {
    for (auto v : diverged)
      if (v) return true;
    return false;
  }
  std::size_t rows() const noexcept { return t.size(); }
  /// Mean of the parameter block at the last recorded row.
  Vector terminal_theta(Index p) const {
    const Vector& m = mean.back();
    return m.tail(p);
  }
};

struct RunOptions {
  std::size_t record_every = 1;
  std::vector<std::size_t> checkpoint_steps;
};

namespace detail {

inline void record_row(RunRecord& rec, const FilterState& s) {
  const Matrix& X = s.members();
  const Index p = s.model().param_dim();
  const Vector mean = X.rowwise().mean();
  rec.t.push_back(s.time());
  rec.mean.push_back(mean);
  Vector var(p);
  for (Index j = 0; j < p; ++j) {
    const Index r = X.rows() - p + j;
    var(j) = (X.row(r).array() - mean(r)).square().sum() / static_cast<double>(X.cols() - 1);
  }
  rec.var_theta.push_back(var);
  rec.diverged.push_back(s.diverged() ? 1 : 0);
}

}  // namespace detail

/// Draws the initial ensemble from the prior and steps over the lift's grid.
inline RunRecord run_filter(std::shared_ptr<const FilterModel> model, const GaussianPrior& prior,
                            const LiftedSeries& lift, Index N, std::uint64_t seed,
                            Scheme scheme, const RunOptions& opt = {}) {
  detail::require_dims(lift.dim() == model->obs_dim(),
                       "run_filter: lift dimension does not match observation dimension");
  if (N < 2) throw DimensionError("run_filter: N must be >= 2");
  auto prior_stream = GaussianStream::derived(seed, {stream_tag::prior});
  Matrix X0 = prior.sample(N, prior_stream);
  FilterState state(model, std::move(X0), lift.grid().dt(),
                    GaussianStream::derived(seed, {stream_tag::filter}));

  RunRecord rec;
  rec.seed = seed;
  const std::size_t every = std::max<std::size_t>(1, opt.record_every);
  auto maybe_checkpoint = [&](std::size_t k) {
    for (auto c : opt.checkpoint_steps)
      if (c == k) rec.checkpoints.emplace_back(k, state.members());
  };
  detail::record_row(rec, state);
  maybe_checkpoint(0);
  const Index d = lift.dim();
  Matrix dYY = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < lift.n_steps(); ++k) {
    if (scheme == Scheme::rp_enkf) dYY = lift.second_order(k);
    state.step(scheme, lift.increment(k), dYY);
    if (state.diverged()) {
      detail::record_row(rec, state);
      break;
    }
    if ((k + 1) % every == 0 || k + 1 == lift.n_steps()) detail::record_row(rec, state);
    maybe_checkpoint(k + 1);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// References
// ---------------------------------------------------------------------------

struct KalmanBucyPath {
  Matrix means;               ///< D x (n+1)
  std::vector<Matrix> covs;   ///< n+1 entries
};

/// Correlated-noise Kalman-Bucy filter: covariance by RK4 on the Riccati
/// equation, mean by Euler with the pre-step gain, on the same increments.
inline KalmanBucyPath kalman_bucy_reference(const Matrix& F, const Matrix& H, const Matrix& G_sqrt,
                                            const Matrix& U, const Matrix& R, const Vector& m0,
                                            const Matrix& Sigma0, const PathSeries& Y) {
  const Index D = F.rows(), d = H.rows();
  detail::require_dims(F.cols() == D && H.cols() == D && G_sqrt.rows() == D &&
                           U.rows() == d && U.cols() == G_sqrt.cols() && R.rows() == d &&
                           R.cols() == d && m0.size() == D && Sigma0.rows() == D &&
                           Sigma0.cols() == D && Y.dim() == d,
                       "kalman_bucy_reference: inconsistent dimensions");
  const Matrix G = G_sqrt * G_sqrt.transpose();
  const Matrix C = U * U.transpose() + R;
  Eigen::LLT<Matrix> llt(C);
  if (llt.info() != Eigen::Success)
    throw NumericalError("kalman_bucy_reference: C is not positive definite");
  const Matrix Cinv = llt.solve(Matrix::Identity(d, d));
  const Matrix GU = G_sqrt * U.transpose();

  auto gain = [&](const Matrix& S) -> Matrix { return (S * H.transpose() + GU) * Cinv; };
  auto riccati = [&](const Matrix& S) -> Matrix {
    const Matrix K = S * H.transpose() + GU;
    return F * S + S * F.transpose() + G - K * Cinv * K.transpose();
  };

  const std::size_t n = Y.n_steps();
  const double dt = Y.grid().dt();
  KalmanBucyPath out;
  out.means.resize(D, static_cast<Index>(n + 1));
  out.means.col(0) = m0;
  out.covs.reserve(n + 1);
  Matrix S = Sigma0;
  out.covs.push_back(S);
  for (std::size_t k = 0; k < n; ++k) {
    const Vector m = out.means.col(static_cast<Index>(k));
    out.means.col(static_cast<Index>(k) + 1) =
        m + F * m * dt + gain(S) * (Y.increment(k) - H * m * dt);
    const Matrix k1 = riccati(S);
    const Matrix k2 = riccati(S + 0.5 * dt * k1);
    const Matrix k3 = riccati(S + 0.5 * dt * k2);
    const Matrix k4 = riccati(S + dt * k3);
    S += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double asym = (S - S.transpose()).cwiseAbs().maxCoeff();
    S = 0.5 * (S + S.transpose()).eval();
    const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    if (asym > 1e-8 * scale || es.eigenvalues().minCoeff() < -1e-10 * scale)
      throw NumericalError("kalman_bucy_reference: covariance lost positive semidefiniteness at step " +
                           std::to_string(k + 1));
    out.covs.push_back(S);
  }
  return out;
}

/// theta* = sum f(Z_k) . dZ_k / sum |f(Z_k)|^2 dt.
inline double mle_estimator(const BatchMap& f, const PathSeries& Z) {
  const Matrix F = f.value(Matrix(Z.values().leftCols(static_cast<Index>(Z.n_steps()))));
  const Matrix dZ = Z.values().rightCols(F.cols()) - Z.values().leftCols(F.cols());
  const double num = (F.array() * dZ.array()).sum();
  const double den = F.squaredNorm() * Z.grid().dt();
  if (!(den > 0.0)) throw NumericalError("mle_estimator: degenerate denominator");
  return num / den;
}

/// Rough version: the integral of f against the lifted path is expanded as
/// f(Z_k) . dZ_k + tr(Df(Z_k) dZZ_k), and 1/2 tr(Df G) dt is subtracted.
inline double rp_mle_estimator(const BatchMap& f, const LiftedSeries& lift,
                               std::optional<Matrix> G = std::nullopt) {
  const Index d = lift.dim();
  detail::require_dims(f.in_dim() == d && f.out_dim() == d, "rp_mle_estimator: f must map R^d to R^d");
  const Matrix Gm = G ? *G : Matrix::Identity(d, d);
  const Index n = static_cast<Index>(lift.n_steps());
  const Matrix Zl = lift.path().values().leftCols(n);
  const Matrix F = f.value(Zl);
  const Matrix J = f.jacobian(Zl);
  const double dt = lift.grid().dt();
  double num = 0.0, den = 0.0;
  for (Index k = 0; k < n; ++k) {
    const Eigen::Map<const Matrix> Jk(J.col(k).data(), d, d);
    const Vector dz = lift.increment(static_cast<std::size_t>(k));
    num += F.col(k).dot(dz) + (Jk * lift.second_order(static_cast<std::size_t>(k))).trace() -
           0.5 * (Jk * Gm).trace() * dt;
    den += F.col(k).squaredNorm() * dt;
  }
  if (!(den > 0.0)) throw NumericalError("rp_mle_estimator: degenerate denominator");
  return num / den;
}

struct ParamPosterior {
  Vector variance;  ///< per grid point
  Vector mean;      ///< per grid point
};

/// Noise-free observation of a model linear in a scalar parameter:
///   Var_t = (int_0^t g^T Gt^{-1} g ds + 1/var0)^{-1},
///   dm = Var g^T Gt^{-1} (dY - g m dt) - 1/2 Var tr(Dg) dt.
/// The integral uses the trapezoid rule on the grid; the mean is stepped
/// with left-point values.
inline ParamPosterior analytic_param_posterior(const BatchMap& g, const PathSeries& Y,
                                               const Matrix& Gtilde, double var0, double m0 = 0.0) {
  if (!(var0 > 0.0)) throw RangeError("analytic_param_posterior: var0 must be positive");
  const Index d = Y.dim();
  detail::require_dims(g.in_dim() == d && g.out_dim() == d && Gtilde.rows() == d &&
                           Gtilde.cols() == d,
                       "analytic_param_posterior: inconsistent dimensions");
  const Matrix Ginv = Gtilde.llt().solve(Matrix::Identity(d, d));
  const Matrix Gv = g.value(Y.values());
  const Matrix J = g.jacobian(Y.values());
  const std::size_t n = Y.n_steps();
  const double dt = Y.grid().dt();
  ParamPosterior out{Vector(static_cast<Index>(n + 1)), Vector(static_cast<Index>(n + 1))};
  double info = 1.0 / var0;
  out.variance(0) = var0;
  out.mean(0) = m0;
  auto q = [&](Index k) { return Gv.col(k).dot(Ginv * Gv.col(k)); };
  for (std::size_t k = 0; k < n; ++k) {
    const Index kk = static_cast<Index>(k);
    const double v = out.variance(kk);
    const Vector gk = Gv.col(kk);
    const double tr = Eigen::Map<const Matrix>(J.col(kk).data(), d, d).trace();
    out.mean(kk + 1) = out.mean(kk) + v * gk.dot(Ginv * (Y.increment(k) - gk * out.mean(kk) * dt)) -
                       0.5 * v * tr * dt;
    info += 0.5 * dt * (q(kk) + q(kk + 1));
    out.variance(kk + 1) = 1.0 / info;
  }
  return out;
}

}  // namespace rpenkf
