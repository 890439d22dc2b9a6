#pragma once

// Skew-symmetric (area) corrections estimated from a single discrete time
// series by comparing the area process of its piecewise-linear interpolation
// with that of a subsampled interpolation.

#include "rpenkf/roughpath.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace rpenkf {

/// Number of fine steps per coarse step.
class SubsampleLag {
 public:
  explicit SubsampleLag(std::size_t tau) : tau_(tau) {
    if (tau == 0) throw RangeError("SubsampleLag: tau must be >= 1");
  }
  std::size_t value() const noexcept { return tau_; }

 private:
  std::size_t tau_;
};

/// Cumulative area A_k = skew(int_0^{t_k} Y_{0,r} (x) dY_r), one packed
/// d*d column per grid point; A_0 = 0.
class AreaProcess {
 public:
  AreaProcess(TimeGrid grid, Index d, Matrix values)
      : grid_(grid), d_(d), values_(std::move(values)) {
    detail::require_dims(values_.rows() == d * d &&
                             static_cast<std::size_t>(values_.cols()) == grid_.n_steps() + 1,
                         "AreaProcess: bad value block " + detail::shape(values_));
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  Index dim() const noexcept { return d_; }
  const Matrix& values() const noexcept { return values_; }

  Eigen::Map<const Matrix> at(std::size_t k) const {
    return Eigen::Map<const Matrix>(values_.col(static_cast<Index>(k)).data(), d_, d_);
  }
  double component(std::size_t k, Index i, Index j) const {
    return values_(i + d_ * j, static_cast<Index>(k));
  }

 private:
  TimeGrid grid_;
  Index d_;
  Matrix values_;
};

inline PathSeries subsample_interpolate(const PathSeries& path, SubsampleLag lag) {
  const std::size_t n = path.n_steps();
  const std::size_t tau = lag.value();
  if (tau > n)
    throw RangeError("subsample_interpolate: tau=" + std::to_string(tau) +
                     " exceeds n_steps=" + std::to_string(n));
  if (tau == 1) return path;

  // Knots 0, tau, 2 tau, ..., m tau and then n when the last block is partial.
  std::vector<std::size_t> knots;
  for (std::size_t k = 0; k <= n; k += tau) knots.push_back(k);
  if (knots.back() != n) knots.push_back(n);

  const Matrix& y = path.values();
  Matrix out(y.rows(), y.cols());
  for (std::size_t b = 0; b + 1 < knots.size(); ++b) {
    const std::size_t k0 = knots[b], k1 = knots[b + 1];
    const auto y0 = y.col(static_cast<Index>(k0));
    const auto y1 = y.col(static_cast<Index>(k1));
    const double span = static_cast<double>(k1 - k0);
    for (std::size_t k = k0; k < k1; ++k) {
      const double w = static_cast<double>(k - k0) / span;
      out.col(static_cast<Index>(k)) = (1.0 - w) * y0 + w * y1;
    }
  }
  out.col(static_cast<Index>(n)) = y.col(static_cast<Index>(n));
  return PathSeries(path.grid(), std::move(out));
}

/// Exact for the piecewise-linear interpolation: within a step the
/// contribution is (y_k - y_0) (x) dy_k + 1/2 dy_k (x) dy_k, and only the first
/// term has a skew part.
inline AreaProcess area_process(const PathSeries& path) {
  const Index d = path.dim();
  const std::size_t n = path.n_steps();
  Matrix A(d * d, static_cast<Index>(n + 1));
  A.col(0).setZero();
  const Matrix& y = path.values();
  for (std::size_t k = 0; k < n; ++k) {
    const Index kk = static_cast<Index>(k);
    const Vector base = y.col(kk) - y.col(0);
    const Vector dy = y.col(kk + 1) - y.col(kk);
    for (Index j = 0; j < d; ++j)
      for (Index i = 0; i < d; ++i)
        A(i + d * j, kk + 1) = A(i + d * j, kk) + 0.5 * (base(i) * dy(j) - base(j) * dy(i));
  }
  return AreaProcess(path.grid(), d, std::move(A));
}

/// Per-step difference between the area increments of the original and the
/// tau-subsampled interpolation, packed as (d*d) x n_steps. Over an interval
/// the cumulative sum estimates how far the fine-scale area exceeds the
/// coarse-scale one.
inline Matrix skew_correction(const PathSeries& path, SubsampleLag lag) {
  const PathSeries coarse = subsample_interpolate(path, lag);
  const Matrix fine_area = area_process(path).values();
  const Matrix coarse_area = area_process(coarse).values();
  const Index n = static_cast<Index>(path.n_steps());
  const Matrix diff = fine_area - coarse_area;
  return diff.rightCols(n) - diff.leftCols(n);
}

/// Cumulative sum of skew_correction, i.e. fine minus coarse area process.
inline AreaProcess cumulative_skew_correction(const PathSeries& path, SubsampleLag lag) {
  const PathSeries coarse = subsample_interpolate(path, lag);
  return AreaProcess(path.grid(), path.dim(),
                     area_process(path).values() - area_process(coarse).values());
}

struct LagRow {
  std::size_t tau;
  double path_l2;
  double area_l2;
};

/// Discrete L2 norms (dt-weighted, over all grid points) of the path and
/// area-process differences between the fine and subsampled interpolations.
inline std::vector<LagRow> lag_diagnostics(const PathSeries& path,
                                           const std::vector<SubsampleLag>& taus) {
  const double dt = path.grid().dt();
  const Matrix fine_area = area_process(path).values();
  std::vector<LagRow> rows;
  rows.reserve(taus.size());
  for (const auto& lag : taus) {
    const PathSeries coarse = subsample_interpolate(path, lag);
    const Matrix coarse_area = area_process(coarse).values();
    const double p = std::sqrt(dt * (path.values() - coarse.values()).squaredNorm());
    const double a = std::sqrt(dt * (fine_area - coarse_area).squaredNorm());
    rows.push_back({lag.value(), p, a});
  }
  return rows;
}

/// Least-squares slope through the origin of one area component against time.
inline double area_rate(const AreaProcess& A, Index i, Index j) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k <= A.grid().n_steps(); ++k) {
    const double t = A.grid().time(k);
    num += t * A.component(k, i, j);
    den += t * t;
  }
  if (den == 0.0) throw RangeError("area_rate: need at least one step");
  return num / den;
}

}  // namespace rpenkf
