#pragma once

// Data generators: the reference filtering model, the multiscale drivers
// (physical Brownian motion, rescaled Lorenz-63, two-scale potential) and
// the homogenized mobility of a periodic potential.

#include "rpenkf/maps.hpp"
#include "rpenkf/roughpath.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rpenkf {

/// Coefficients of
///   dX = f(X) dt + Gs dW,
///   dY = h(X) dt + U dW + Rs dV,
/// with W an m-dimensional and V a d-dimensional standard Brownian motion.
class FilterModel {
 public:
  FilterModel(BatchMap f, BatchMap h, Matrix G_sqrt, Matrix U, Matrix R_sqrt)
      : f_(std::move(f)),
        h_(std::move(h)),
        Gs_(std::move(G_sqrt)),
        U_(std::move(U)),
        Rs_(std::move(R_sqrt)) {
    const Index D = f_.in_dim(), d = h_.out_dim();
    detail::require_dims(f_.out_dim() == D, "FilterModel: f must map R^D to R^D");
    detail::require_dims(h_.in_dim() == D, "FilterModel: h must take R^D");
    detail::require_dims(Gs_.rows() == D, "FilterModel: G_sqrt must have D rows, got " +
                                              detail::shape(Gs_));
    detail::require_dims(U_.rows() == d && U_.cols() == Gs_.cols(),
                         "FilterModel: U must be " + std::to_string(d) + "x" +
                             std::to_string(Gs_.cols()) + ", got " + detail::shape(U_));
    detail::require_dims(Rs_.rows() == d && Rs_.cols() == d,
                         "FilterModel: R_sqrt must be " + std::to_string(d) + "x" +
                             std::to_string(d) + ", got " + detail::shape(Rs_));
    C_ = U_ * U_.transpose() + Rs_ * Rs_.transpose();
    Eigen::LLT<Matrix> llt(C_);
    if (llt.info() != Eigen::Success)
      throw NumericalError("FilterModel: C = U U^T + R is not positive definite");
    Cinv_ = llt.solve(Matrix::Identity(d, d));
    Cinv_ = 0.5 * (Cinv_ + Cinv_.transpose()).eval();
    B_ = Gs_ * U_.transpose() * Cinv_;
  }

  const BatchMap& f() const noexcept { return f_; }
  const BatchMap& h() const noexcept { return h_; }
  const Matrix& G_sqrt() const noexcept { return Gs_; }
  const Matrix& U() const noexcept { return U_; }
  const Matrix& R_sqrt() const noexcept { return Rs_; }
  const Matrix& C() const noexcept { return C_; }
  const Matrix& C_inv() const noexcept { return Cinv_; }
  const Matrix& B() const noexcept { return B_; }
  Matrix G() const { return Gs_ * Gs_.transpose(); }
  Matrix R() const { return Rs_ * Rs_.transpose(); }

  Index state_dim() const noexcept { return f_.in_dim(); }
  Index obs_dim() const noexcept { return h_.out_dim(); }
  Index noise_dim() const noexcept { return Gs_.cols(); }

  /// Number of trailing state components that are parameters (no drift, no noise).
  Index param_dim() const noexcept { return param_dim_; }
  void set_param_dim(Index p) {
    if (p < 0 || p > state_dim()) throw RangeError("FilterModel: bad parameter count");
    param_dim_ = p;
  }

 private:
  BatchMap f_, h_;
  Matrix Gs_, U_, Rs_;
  Matrix C_, Cinv_, B_;
  Index param_dim_ = 0;
};

struct SignalObservation {
  PathSeries X;
  PathSeries Y;
};

namespace detail {

inline void require_finite_state(const Vector& x, std::size_t k, const char* who) {
  if (!x.allFinite()) throw SimulationError(std::string(who) + ": non-finite state", k);
}

}  // namespace detail

/// Euler-Maruyama of the filtering model; the same xi_k feeds the signal
/// and the correlated part of the observation noise.
inline SignalObservation simulate_filter_model(const FilterModel& model, const Vector& x0,
                                               const TimeGrid& grid, std::uint64_t seed) {
  const Index D = model.state_dim(), d = model.obs_dim(), m = model.noise_dim();
  detail::require_dims(x0.size() == D, "simulate_filter_model: x0 has wrong length");
  auto xi_stream = GaussianStream::derived(seed, {stream_tag::signal});
  auto eta_stream = GaussianStream::derived(seed, {stream_tag::observation});
  const std::size_t n = grid.n_steps();
  const double dt = grid.dt(), sdt = std::sqrt(dt);

  Matrix X(D, static_cast<Index>(n + 1)), Y(d, static_cast<Index>(n + 1));
  X.col(0) = x0;
  Y.col(0).setZero();
  Vector xi(m), eta(d);
  for (std::size_t k = 0; k < n; ++k) {
    const Index kk = static_cast<Index>(k);
    xi_stream.fill(xi);
    eta_stream.fill(eta);
    const Vector x = X.col(kk);
    X.col(kk + 1) = x + model.f().value(x) * dt + model.G_sqrt() * xi * sdt;
    Y.col(kk + 1) = Y.col(kk) + model.h().value(x) * dt + model.U() * xi * sdt +
                    model.R_sqrt() * eta * sdt;
    detail::require_finite_state(X.col(kk + 1), k + 1, "simulate_filter_model");
  }
  return {PathSeries(grid, std::move(X)), PathSeries(grid, std::move(Y))};
}

/// Standard Brownian increments, one dim-vector column per step.
inline Matrix brownian_increments(Index dim, const TimeGrid& grid, GaussianStream& stream) {
  Matrix dW(dim, static_cast<Index>(grid.n_steps()));
  stream.fill(dW);
  return dW * std::sqrt(grid.dt());
}

inline PathSeries cumulative_path(const Matrix& increments, const TimeGrid& grid,
                                  const Vector& start) {
  detail::require_dims(static_cast<std::size_t>(increments.cols()) == grid.n_steps(),
                       "cumulative_path: increment count does not match grid");
  Matrix P(increments.rows(), increments.cols() + 1);
  P.col(0) = start;
  for (Index k = 0; k < increments.cols(); ++k) P.col(k + 1) = P.col(k) + increments.col(k);
  return PathSeries(grid, std::move(P));
}

// ---------------------------------------------------------------------------
// Physical Brownian motion
// ---------------------------------------------------------------------------

struct PhysicalBM {
  PathSeries w_eps;
  PathSeries w0;
};

/// dW^eps = (1/eps) M P dt, dP = -(1/eps) M P dt + dW0 with M = [[1, g], [-g, 1]].
/// eps = 0 returns W^eps = W0 (mathematical Brownian motion).
/// With `substeps` > 1 the Euler scheme runs on a grid refined by that
/// factor and both paths are sampled back on `grid`.
inline PhysicalBM simulate_physical_bm(double gamma, double eps, const TimeGrid& grid,
                                       std::uint64_t seed, int substeps = 1) {
  if (eps < 0.0) throw RangeError("simulate_physical_bm: eps must be >= 0");
  if (substeps < 1) throw RangeError("simulate_physical_bm: substeps must be >= 1");
  auto stream = GaussianStream::derived(seed, {stream_tag::driver});
  const std::size_t n = grid.n_steps();
  const TimeGrid fine(grid.dt() / substeps, n * static_cast<std::size_t>(substeps));
  const Matrix dW0 = brownian_increments(2, fine, stream);
  Matrix W0(2, static_cast<Index>(n + 1));
  W0.col(0).setZero();
  for (std::size_t k = 0; k < n; ++k)
    W0.col(static_cast<Index>(k) + 1) =
        W0.col(static_cast<Index>(k)) +
        dW0.middleCols(static_cast<Index>(k) * substeps, substeps).rowwise().sum();
  PathSeries w0(grid, std::move(W0));
  if (eps == 0.0) return {w0, w0};

  const double h = fine.dt();
  if (h > eps * eps / 10.0) {
    std::ostringstream msg;
    msg << "simulate_physical_bm: dt=" << h << " exceeds eps^2/10=" << eps * eps / 10.0;
    warn(msg.str());
  }
  Matrix M(2, 2);
  M << 1.0, gamma, -gamma, 1.0;
  const Matrix A = M * (h / eps);
  Matrix W(2, static_cast<Index>(n + 1));
  W.col(0).setZero();
  Vector w = Vector::Zero(2), p = Vector::Zero(2);
  for (std::size_t j = 0; j < fine.n_steps(); ++j) {
    const Vector drift = A * p;
    w += drift;
    p += dW0.col(static_cast<Index>(j)) - drift;
    if (!p.allFinite() || p.norm() > 1e12) {
      std::ostringstream msg;
      msg << "simulate_physical_bm: unstable at dt/eps=" << h / eps;
      throw SimulationError(msg.str(), j / static_cast<std::size_t>(substeps) + 1);
    }
    if ((j + 1) % static_cast<std::size_t>(substeps) == 0)
      W.col(static_cast<Index>((j + 1) / static_cast<std::size_t>(substeps))) = w;
  }
  return {PathSeries(grid, std::move(W)), std::move(w0)};
}

// ---------------------------------------------------------------------------
// Lorenz-63
// ---------------------------------------------------------------------------

struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double eps = 0.05;
};

struct LorenzRun {
  PathSeries states;    ///< L^eps on the grid
  Matrix driver_steps;  ///< 2 x n: (1/eps) * integral of (L1, L2) over each step
};

namespace detail {

inline std::array<double, 5> lorenz_rhs(const std::array<double, 5>& s, const LorenzParams& p) {
  const double k = 1.0 / (p.eps * p.eps);
  return {k * p.sigma * (s[1] - s[0]), k * (p.rho * s[0] - s[1] - s[0] * s[2]),
          k * (s[0] * s[1] - p.beta * s[2]), s[0] / p.eps, s[1] / p.eps};
}

inline void rk4_step(std::array<double, 5>& s, double h, const LorenzParams& p) {
  auto axpy = [](const std::array<double, 5>& a, const std::array<double, 5>& b, double c) {
    std::array<double, 5> r;
    for (int i = 0; i < 5; ++i) r[i] = a[i] + c * b[i];
    return r;
  };
  const auto k1 = lorenz_rhs(s, p);
  const auto k2 = lorenz_rhs(axpy(s, k1, 0.5 * h), p);
  const auto k3 = lorenz_rhs(axpy(s, k2, 0.5 * h), p);
  const auto k4 = lorenz_rhs(axpy(s, k3, h), p);
  for (int i = 0; i < 5; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

}  // namespace detail

/// RK4 integration of the 1/eps^2-rescaled Lorenz system, augmented with the
/// running integral of (L1, L2)/eps so the driver increments are integrated
/// to the same order. `substeps` RK4 steps are taken per grid step.
inline LorenzRun simulate_lorenz63(const LorenzParams& p, const Vector& initial,
                                   const TimeGrid& grid, int substeps = 1) {
  detail::require_dims(initial.size() == 3, "simulate_lorenz63: initial state must be 3D");
  if (!(p.eps > 0.0)) throw RangeError("simulate_lorenz63: eps must be positive");
  if (substeps < 1) throw RangeError("simulate_lorenz63: substeps must be >= 1");
  const double dt = grid.dt();
  if (dt > p.eps * p.eps / 10.0) {
    std::ostringstream msg;
    msg << "simulate_lorenz63: dt=" << dt << " exceeds eps^2/10=" << p.eps * p.eps / 10.0;
    warn(msg.str());
  }
  const std::size_t n = grid.n_steps();
  Matrix L(3, static_cast<Index>(n + 1));
  Matrix drv(2, static_cast<Index>(n));
  std::array<double, 5> s{initial(0), initial(1), initial(2), 0.0, 0.0};
  L.col(0) = initial;
  const double h = dt / substeps;
  for (std::size_t k = 0; k < n; ++k) {
    s[3] = s[4] = 0.0;
    for (int j = 0; j < substeps; ++j) detail::rk4_step(s, h, p);
    const Index kk = static_cast<Index>(k);
    L(0, kk + 1) = s[0];
    L(1, kk + 1) = s[1];
    L(2, kk + 1) = s[2];
    drv(0, kk) = s[3];
    drv(1, kk) = s[4];
    if (!std::isfinite(s[0] + s[1] + s[2]) || std::abs(s[0]) + std::abs(s[1]) + std::abs(s[2]) > 1e6)
      throw SimulationError("simulate_lorenz63: trajectory blew up", k + 1);
  }
  return {PathSeries(grid, std::move(L)), std::move(drv)};
}

/// Initial condition near the attractor: a seeded perturbation of `base`
/// evolved for `burn_in` units of unscaled (eps = 1) time.
inline Vector lorenz_spin_up(const LorenzParams& p, const Vector& base, double burn_in,
                             std::uint64_t seed) {
  auto stream = GaussianStream::derived(seed, {stream_tag::prior, 63});
  LorenzParams unit = p;
  unit.eps = 1.0;
  std::array<double, 5> s{base(0) + stream.normal(), base(1) + stream.normal(),
                          base(2) + stream.normal(), 0.0, 0.0};
  const double h = 1e-3;
  const auto steps = static_cast<std::size_t>(std::llround(burn_in / h));
  for (std::size_t k = 0; k < steps; ++k) detail::rk4_step(s, h, unit);
  Vector out(3);
  out << s[0], s[1], s[2];
  return out;
}

// ---------------------------------------------------------------------------
// Two-scale potential
// ---------------------------------------------------------------------------

struct TwoscaleParams {
  double theta = 1.0;
  double eps = 1e-2;
  double sigma = 1.0;
  std::vector<double> amplitudes{1.0, 0.5};  ///< p_i(x) = a_i cos(x)
};

/// Euler-Maruyama of dZ = -theta Z dt - (1/eps) grad p(Z/eps) dt + sqrt(2 sigma) dW
/// with V(z) = |z|^2 / 2.
inline PathSeries simulate_twoscale(const TwoscaleParams& p, const Vector& z0,
                                    const TimeGrid& grid, std::uint64_t seed) {
  const Index d = static_cast<Index>(p.amplitudes.size());
  detail::require_dims(z0.size() == d, "simulate_twoscale: z0 has wrong length");
  if (!(p.eps > 0.0) || !(p.sigma > 0.0))
    throw RangeError("simulate_twoscale: eps and sigma must be positive");
  const double dt = grid.dt();
  double amax = 0.0;
  for (double a : p.amplitudes) amax = std::max(amax, std::abs(a));
  if (amax / p.eps * dt >= 0.5) {
    std::ostringstream msg;
    msg << "simulate_twoscale: (1/eps)|grad p| dt = " << amax / p.eps * dt << " >= 0.5";
    warn(msg.str());
  }
  auto stream = GaussianStream::derived(seed, {stream_tag::driver});
  const std::size_t n = grid.n_steps();
  const double noise = std::sqrt(2.0 * p.sigma * dt);
  Matrix Z(d, static_cast<Index>(n + 1));
  Z.col(0) = z0;
  for (std::size_t k = 0; k < n; ++k) {
    const Index kk = static_cast<Index>(k);
    for (Index i = 0; i < d; ++i) {
      const double z = Z(i, kk);
      // -(1/eps) p_i'(z/eps) with p_i = a_i cos.
      const double fast = p.amplitudes[static_cast<std::size_t>(i)] / p.eps * std::sin(z / p.eps);
      Z(i, kk + 1) = z + (-p.theta * z + fast) * dt + noise * stream.normal();
    }
    detail::require_finite_state(Z.col(kk + 1), k + 1, "simulate_twoscale");
  }
  return PathSeries(grid, std::move(Z));
}

namespace detail {

inline double simpson(const std::function<double(double)>& g, double a, double b,
                      std::size_t panels) {
  const double h = (b - a) / static_cast<double>(panels);
  double s = g(a) + g(b);
  for (std::size_t i = 1; i < panels; ++i)
    s += (i % 2 ? 4.0 : 2.0) * g(a + h * static_cast<double>(i));
  return s * h / 3.0;
}

/// Composite Simpson, doubling from 2^12 panels until successive values
/// agree to `rtol`.
inline double converged_simpson(const std::function<double(double)>& g, double a, double b,
                                double rtol = 1e-8) {
  std::size_t panels = std::size_t{1} << 12;
  double prev = simpson(g, a, b, panels);
  for (int it = 0; it < 8; ++it) {
    panels *= 2;
    const double next = simpson(g, a, b, panels);
    if (std::abs(next - prev) <= rtol * std::abs(next)) return next;
    prev = next;
  }
  throw NumericalError("homogenized_mobility: quadrature did not converge");
}

}  // namespace detail

/// K_ii = L^2 / (C_i Chat_i), C_i = int_0^L exp(-p_i/sigma), Chat_i = int_0^L exp(p_i/sigma).
inline Matrix homogenized_mobility(const std::vector<std::function<double(double)>>& p,
                                   double sigma, double L) {
  if (!(L > 0.0) || !(sigma > 0.0))
    throw RangeError("homogenized_mobility: L and sigma must be positive");
  const Index d = static_cast<Index>(p.size());
  Matrix K = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    const auto& pi = p[static_cast<std::size_t>(i)];
    const double C = detail::converged_simpson([&](double y) { return std::exp(-pi(y) / sigma); }, 0.0, L);
    const double Ch = detail::converged_simpson([&](double y) { return std::exp(pi(y) / sigma); }, 0.0, L);
    K(i, i) = L * L / (C * Ch);
  }
  return K;
}

inline Matrix homogenized_mobility(const TwoscaleParams& p) {
  std::vector<std::function<double(double)>> fns;
  for (double a : p.amplitudes) fns.push_back([a](double x) { return a * std::cos(x); });
  return homogenized_mobility(fns, p.sigma, 2.0 * M_PI);
}

// ---------------------------------------------------------------------------
// Parameter models driven by a given noise path
// ---------------------------------------------------------------------------

struct DrivenData {
  PathSeries Z;
  PathSeries Y;
};

/// Y_0 = 0, Y_{k+1} = Y_k + dZ_k + R_sqrt sqrt(dt) eta_k.
inline PathSeries observe_path(const PathSeries& Z, const Matrix& R_sqrt, std::uint64_t seed) {
  const Index d = Z.dim();
  detail::require_dims(R_sqrt.rows() == d && R_sqrt.cols() == d,
                       "observe_path: R_sqrt has wrong shape " + detail::shape(R_sqrt));
  auto stream = GaussianStream::derived(seed, {stream_tag::observation});
  const double sdt = std::sqrt(Z.grid().dt());
  Matrix Y(d, static_cast<Index>(Z.n_steps() + 1));
  Y.col(0).setZero();
  Vector eta(d);
  for (std::size_t k = 0; k < Z.n_steps(); ++k) {
    stream.fill(eta);
    const Index kk = static_cast<Index>(k);
    Y.col(kk + 1) = Y.col(kk) + Z.increment(k) + R_sqrt * eta * sdt;
  }
  return PathSeries(Z.grid(), std::move(Y));
}

/// Z_{k+1} = Z_k + theta f(Z_k) dt + scale * dDriver_k, then observed with noise R.
inline DrivenData driven_parameter_model(double theta, const BatchMap& f,
                                         const Matrix& driver_steps, double scale,
                                         const Matrix& R_sqrt, const TimeGrid& grid,
                                         std::uint64_t seed, const Vector& z0) {
  const Index d = f.in_dim();
  detail::require_dims(driver_steps.rows() == d &&
                           static_cast<std::size_t>(driver_steps.cols()) == grid.n_steps(),
                       "driven_parameter_model: driver does not match grid/dimension");
  detail::require_dims(z0.size() == d, "driven_parameter_model: z0 has wrong length");
  const double dt = grid.dt();
  Matrix Z(d, driver_steps.cols() + 1);
  Z.col(0) = z0;
  for (Index k = 0; k < driver_steps.cols(); ++k) {
    const Vector z = Z.col(k);
    Z.col(k + 1) = z + theta * f.value(z) * dt + scale * driver_steps.col(k);
    detail::require_finite_state(Z.col(k + 1), static_cast<std::size_t>(k + 1),
                                 "driven_parameter_model");
  }
  PathSeries Zp(grid, std::move(Z));
  PathSeries Y = observe_path(Zp, R_sqrt, seed);
  return {std::move(Zp), std::move(Y)};
}

}  // namespace rpenkf
