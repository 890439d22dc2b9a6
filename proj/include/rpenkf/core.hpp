#pragma once

// Shared vocabulary: linear-algebra aliases, error types, seeded random
// streams and the warning sink used by simulations and config validation.

#include <Eigen/Dense>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rpenkf {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Shapes or dimensions that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Index or parameter outside its admissible range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A simulation or filter produced non-finite or exploding values.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Numerical procedure failed to meet its accuracy contract.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Warnings
// ---------------------------------------------------------------------------

using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Replace the process-wide warning sink; returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::warning_mutex());
  return std::exchange(detail::warning_sink(), std::move(sink));
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// One independent, explicitly seeded Gaussian stream. Every simulation and
/// every filter owns its streams; they are never shared between runs.
class GaussianStream {
 public:
  GaussianStream() : GaussianStream(0) {}
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  /// Stream derived from a seed and a list of tags (run index, member
  /// index, purpose). Distinct tag lists give statistically independent
  /// streams; identical lists give bit-identical streams.
  static GaussianStream derived(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    auto push = [&words](std::uint64_t v) {
      words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
      words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto t : tags) push(t);
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return GaussianStream((static_cast<std::uint64_t>(out[1]) << 32) | out[0]);
  }

  double normal() { return normal_(engine_); }

  /// Fills `out` with standard normals in column-major order.
  template <typename Derived>
  void fill(Eigen::DenseBase<Derived>& out) {
    for (Index j = 0; j < out.cols(); ++j)
      for (Index i = 0; i < out.rows(); ++i) out(i, j) = normal();
  }

  Vector normals(Index n) {
    Vector v(n);
    fill(v);
    return v;
  }

 private:
  boost::random::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
};

// Purpose tags for derived streams.
namespace stream_tag {
inline constexpr std::uint64_t driver = 1;
inline constexpr std::uint64_t observation = 2;
inline constexpr std::uint64_t filter = 3;
inline constexpr std::uint64_t prior = 4;
inline constexpr std::uint64_t member = 5;
inline constexpr std::uint64_t signal = 6;
}  // namespace stream_tag

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

/// Symmetric square root of a symmetric nonnegative definite matrix.
inline Matrix symmetric_sqrt(const Matrix& m) {
  detail::require_dims(m.rows() == m.cols(),
                       "symmetric_sqrt: matrix must be square, got " +
                           detail::shape(m));
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  Vector ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-12 * scale)
    throw NumericalError("symmetric_sqrt: matrix is not nonnegative definite");
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace rpenkf
