#pragma once

// Discrete rough paths on a uniform grid.
//
// A LiftedSeries stores, for every grid step k, the first-order increment
// y_{k+1} - y_k (implicitly, through the path values) and a second-order
// increment dYY_k in R^{d x d}. Increments over longer intervals are
// composed on demand with Chen's relation
//
//     YY_{s,t} = YY_{s,u} + YY_{u,t} + Y_{s,u} (x) Y_{u,t},
//
// so storage stays linear in the number of steps.

#include "rpenkf/core.hpp"

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace rpenkf {

/// Uniform time grid t_k = k * dt, k = 0..n_steps.
class TimeGrid {
 public:
  TimeGrid(double dt, std::size_t n_steps) : dt_(dt), n_steps_(n_steps) {
    if (!(dt > 0.0) || !std::isfinite(dt))
      throw RangeError("TimeGrid: dt must be positive and finite");
  }

  /// Grid covering [0, horizon] with the largest whole number of steps.
  static TimeGrid covering(double dt, double horizon) {
    if (!(horizon >= 0.0)) throw RangeError("TimeGrid: horizon must be >= 0");
    return TimeGrid(dt, static_cast<std::size_t>(std::llround(horizon / dt)));
  }

  double dt() const noexcept { return dt_; }
  std::size_t n_steps() const noexcept { return n_steps_; }
  double time(std::size_t k) const noexcept { return static_cast<double>(k) * dt_; }
  double horizon() const noexcept { return time(n_steps_); }

  bool operator==(const TimeGrid& o) const noexcept {
    return dt_ == o.dt_ && n_steps_ == o.n_steps_;
  }

 private:
  double dt_;
  std::size_t n_steps_;
};

/// Samples y_0..y_n of a d-dimensional path; column k holds y_k.
class PathSeries {
 public:
  PathSeries(TimeGrid grid, Matrix values) : grid_(grid), values_(std::move(values)) {
    detail::require_dims(
        static_cast<std::size_t>(values_.cols()) == grid_.n_steps() + 1,
        "PathSeries: expected " + std::to_string(grid_.n_steps() + 1) +
            " samples, got " + std::to_string(values_.cols()));
    detail::require_dims(values_.rows() >= 1, "PathSeries: dimension must be >= 1");
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  const Matrix& values() const noexcept { return values_; }
  Index dim() const noexcept { return values_.rows(); }
  std::size_t n_steps() const noexcept { return grid_.n_steps(); }

  auto value(std::size_t k) const { return values_.col(static_cast<Index>(k)); }
  Vector increment(std::size_t k) const {
    if (k >= n_steps())
      throw RangeError("PathSeries::increment: step " + std::to_string(k) + " out of range");
    return values_.col(static_cast<Index>(k) + 1) - values_.col(static_cast<Index>(k));
  }

  /// Path values between two indices (inclusive), rebased onto a fresh grid.
  PathSeries slice(std::size_t k_start, std::size_t k_end) const {
    if (k_start > k_end || k_end > n_steps())
      throw RangeError("PathSeries::slice: bad index range");
    return PathSeries(TimeGrid(grid_.dt(), k_end - k_start),
                      values_.middleCols(static_cast<Index>(k_start),
                                         static_cast<Index>(k_end - k_start + 1)));
  }

 private:
  TimeGrid grid_;
  Matrix values_;
};

/// A path together with per-step second-order increments.
class LiftedSeries {
 public:
  /// `second_order` is (d*d) x n_steps; column k is dYY_k in column-major order.
  LiftedSeries(PathSeries path, Matrix second_order)
      : path_(std::move(path)), second_(std::move(second_order)) {
    const Index d = path_.dim();
    detail::require_dims(second_.rows() == d * d &&
                             static_cast<std::size_t>(second_.cols()) == path_.n_steps(),
                         "LiftedSeries: second-order block must be " +
                             std::to_string(d * d) + "x" +
                             std::to_string(path_.n_steps()) + ", got " +
                             detail::shape(second_));
  }

  LiftedSeries(PathSeries path, const std::vector<Matrix>& per_step)
      : LiftedSeries(path, pack(path.dim(), per_step)) {}

  const PathSeries& path() const noexcept { return path_; }
  const TimeGrid& grid() const noexcept { return path_.grid(); }
  Index dim() const noexcept { return path_.dim(); }
  std::size_t n_steps() const noexcept { return path_.n_steps(); }
  const Matrix& second_order_block() const noexcept { return second_; }

  Eigen::Map<const Matrix> second_order(std::size_t k) const {
    return Eigen::Map<const Matrix>(second_.col(static_cast<Index>(k)).data(), dim(), dim());
  }
  Vector increment(std::size_t k) const { return path_.increment(k); }

 private:
  static Matrix pack(Index d, const std::vector<Matrix>& per_step) {
    Matrix out(d * d, static_cast<Index>(per_step.size()));
    for (std::size_t k = 0; k < per_step.size(); ++k) {
      detail::require_dims(per_step[k].rows() == d && per_step[k].cols() == d,
                           "LiftedSeries: second-order increment has wrong shape");
      out.col(static_cast<Index>(k)) =
          Eigen::Map<const Vector>(per_step[k].data(), d * d);
    }
    return out;
  }

  PathSeries path_;
  Matrix second_;
};

/// Hoelder exponent restricted to (1/3, 1/2].
class HoelderExponent {
 public:
  explicit HoelderExponent(double alpha) : alpha_(alpha) {
    if (!(alpha > 1.0 / 3.0 && alpha <= 0.5))
      throw RangeError("HoelderExponent: alpha must lie in (1/3, 1/2]");
  }
  double value() const noexcept { return alpha_; }

 private:
  double alpha_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

struct SymSkew {
  Matrix sym;
  Matrix skew;
};

inline SymSkew sym_skew_split(const Matrix& m) {
  detail::require_dims(m.rows() == m.cols(),
                       "sym_skew_split: matrix must be square, got " + detail::shape(m));
  return {0.5 * (m + m.transpose()), 0.5 * (m - m.transpose())};
}

/// Geometric lift of the piecewise-linear interpolation: every step carries
/// dYY_k = 1/2 dY_k (x) dY_k and no area.
inline LiftedSeries canonical_lift(const PathSeries& path) {
  const Index d = path.dim();
  if (path.n_steps() == 0)
    throw DimensionError("canonical_lift: path must have at least one step");
  Matrix second(d * d, static_cast<Index>(path.n_steps()));
  for (std::size_t k = 0; k < path.n_steps(); ++k) {
    const Vector dy = path.increment(k);
    Eigen::Map<Matrix>(second.col(static_cast<Index>(k)).data(), d, d) =
        0.5 * dy * dy.transpose();
  }
  return LiftedSeries(path, std::move(second));
}

/// Lift whose per-step increments are sym + `skew[k]`; `skew` holds one
/// d x d block per step in the packed (d*d) x n layout.
inline LiftedSeries lift_with_skew(const PathSeries& path, const Matrix& skew_block) {
  LiftedSeries base = canonical_lift(path);
  detail::require_dims(skew_block.rows() == base.second_order_block().rows() &&
                           skew_block.cols() == base.second_order_block().cols(),
                       "lift_with_skew: skew block shape mismatch");
  return LiftedSeries(path, base.second_order_block() + skew_block);
}

struct ComposedIncrement {
  Vector first;
  Matrix second;
};

/// Increments over [t_{k_start}, t_{k_end}], folding Chen's relation left to right.
inline ComposedIncrement chen_compose(const LiftedSeries& lift, std::size_t k_start,
                                      std::size_t k_end) {
  if (!(k_start < k_end) || k_end > lift.n_steps())
    throw RangeError("chen_compose: need 0 <= k_start < k_end <= n_steps, got [" +
                     std::to_string(k_start) + ", " + std::to_string(k_end) + "]");
  const Index d = lift.dim();
  ComposedIncrement acc{Vector::Zero(d), Matrix::Zero(d, d)};
  for (std::size_t k = k_start; k < k_end; ++k) {
    const Vector dy = lift.increment(k);
    acc.second += lift.second_order(k) + acc.first * dy.transpose();
    acc.first += dy;
  }
  return acc;
}

/// Adds sign * 1/2 * dt * M to every second-order increment. With M = I and
/// sign = -1 this maps a Stratonovich lift of Brownian motion to its Ito lift.
inline LiftedSeries shift_by_bv(const LiftedSeries& lift, const Matrix& M, int sign) {
  const Index d = lift.dim();
  detail::require_dims(M.rows() == d && M.cols() == d,
                       "shift_by_bv: expected " + std::to_string(d) + "x" +
                           std::to_string(d) + " matrix, got " + detail::shape(M));
  if (sign != 1 && sign != -1) throw RangeError("shift_by_bv: sign must be +1 or -1");
  const Vector shift = Eigen::Map<const Vector>(M.data(), d * d) *
                       (0.5 * sign * lift.grid().dt());
  Matrix second = lift.second_order_block();
  second.colwise() += shift;
  return LiftedSeries(lift.path(), std::move(second));
}

enum class PairSet {
  all,    ///< every grid pair s < t, O(n^2)
  dyadic  ///< intervals [j 2^m, (j+1) 2^m] only, O(n log n)
};

namespace detail {

template <typename Visit>
void for_each_pair(std::size_t n, PairSet pairs, Visit&& visit) {
  if (pairs == PairSet::all) {
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t t = s + 1; t <= n; ++t) visit(s, t);
    return;
  }
  for (std::size_t len = 1; len <= n; len *= 2)
    for (std::size_t s = 0; s + len <= n; s += len) visit(s, s + len);
}

}  // namespace detail

/// Grid-restricted alpha-Hoelder seminorm: max |y_t - y_s| / (t - s)^alpha.
inline double hoelder_seminorm(const PathSeries& path, double alpha,
                               PairSet pairs = PairSet::all) {
  if (path.n_steps() == 0) throw RangeError("hoelder_seminorm: path has no steps");
  if (!(alpha > 0.0)) throw RangeError("hoelder_seminorm: alpha must be positive");
  const double dt = path.grid().dt();
  double best = 0.0;
  detail::for_each_pair(path.n_steps(), pairs, [&](std::size_t s, std::size_t t) {
    const double num = (path.value(t) - path.value(s)).norm();
    best = std::max(best, num / std::pow(static_cast<double>(t - s) * dt, alpha));
  });
  return best;
}

inline double hoelder_seminorm(const PathSeries& path, HoelderExponent alpha,
                               PairSet pairs = PairSet::all) {
  return hoelder_seminorm(path, alpha.value(), pairs);
}

/// Inhomogeneous rough-path distance
///   rho_alpha = |Y1_0 - Y2_0| + [Y1 - Y2]_alpha + [YY1 - YY2]_{2 alpha},
/// with suprema over grid pairs and the Frobenius norm on second-order terms.
inline double rough_distance(const LiftedSeries& a, const LiftedSeries& b,
                             HoelderExponent alpha, PairSet pairs = PairSet::all) {
  if (!(a.grid() == b.grid()))
    throw DimensionError("rough_distance: lifts live on different grids");
  detail::require_dims(a.dim() == b.dim(), "rough_distance: dimension mismatch");
  const double dt = a.grid().dt();
  const std::size_t n = a.n_steps();
  const double al = alpha.value();
  const Index d = a.dim();

  double first = (a.path().value(0) - b.path().value(0)).norm();
  double path_part = 0.0;
  double area_part = 0.0;

  if (pairs == PairSet::all) {
    // For each left end s, compose both lifts forward incrementally.
    for (std::size_t s = 0; s < n; ++s) {
      Vector ya = Vector::Zero(d), yb = Vector::Zero(d);
      Matrix Ya = Matrix::Zero(d, d), Yb = Matrix::Zero(d, d);
      for (std::size_t t = s + 1; t <= n; ++t) {
        const Vector da = a.increment(t - 1), db = b.increment(t - 1);
        Ya += a.second_order(t - 1) + ya * da.transpose();
        Yb += b.second_order(t - 1) + yb * db.transpose();
        ya += da;
        yb += db;
        const double h = static_cast<double>(t - s) * dt;
        path_part = std::max(path_part, (ya - yb).norm() / std::pow(h, al));
        area_part = std::max(area_part, (Ya - Yb).norm() / std::pow(h, 2.0 * al));
      }
    }
  } else {
    detail::for_each_pair(n, pairs, [&](std::size_t s, std::size_t t) {
      const auto ca = chen_compose(a, s, t);
      const auto cb = chen_compose(b, s, t);
      const double h = static_cast<double>(t - s) * dt;
      path_part = std::max(path_part, (ca.first - cb.first).norm() / std::pow(h, al));
      area_part =
          std::max(area_part, (ca.second - cb.second).norm() / std::pow(h, 2.0 * al));
    });
  }
  return first + path_part + area_part;
}

}  // namespace rpenkf
