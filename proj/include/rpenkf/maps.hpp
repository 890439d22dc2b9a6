#pragma once

// Vector fields evaluated over a whole ensemble at once.
//
// Inputs are in_dim x N (one member per column). value() returns out_dim x N,
// jacobian() returns (out_dim*in_dim) x N where column i is the Jacobian of
// member i stored column-major: entry (j, r) sits at row j + out_dim * r.

#include "rpenkf/core.hpp"

#include <functional>
#include <memory>
#include <string>
#include <utility>

namespace rpenkf {

class BatchMap {
 public:
  using Eval = std::function<Matrix(const Matrix&)>;

  BatchMap(std::string name, Index in_dim, Index out_dim, Eval value, Eval jacobian,
           bool constant_jacobian = false)
      : name_(std::move(name)),
        in_(in_dim),
        out_(out_dim),
        value_(std::move(value)),
        jacobian_(std::move(jacobian)),
        constant_jacobian_(constant_jacobian) {}

  const std::string& name() const noexcept { return name_; }
  Index in_dim() const noexcept { return in_; }
  Index out_dim() const noexcept { return out_; }
  /// True when the Jacobian does not depend on the point (affine maps).
  bool constant_jacobian() const noexcept { return constant_jacobian_; }
  bool has_jacobian() const noexcept { return static_cast<bool>(jacobian_); }

  Matrix value(const Matrix& X) const {
    check(X);
    return value_(X);
  }
  Vector value(const Vector& x) const {
    Matrix X = x;
    return value(X).col(0);
  }

  Matrix jacobian(const Matrix& X) const {
    check(X);
    if (!jacobian_) return fd_jacobian(X);
    return jacobian_(X);
  }
  Matrix jacobian_at(const Vector& x) const {
    Matrix X = x;
    return Eigen::Map<const Matrix>(jacobian(X).data(), out_, in_);
  }

  /// Central finite differences; fallback for maps without an analytic Jacobian.
  Matrix fd_jacobian(const Matrix& X, double h = 1e-6) const {
    check(X);
    Matrix J(out_ * in_, X.cols());
    for (Index r = 0; r < in_; ++r) {
      Matrix Xp = X, Xm = X;
      const Vector step = (X.row(r).cwiseAbs().array().max(1.0) * h).matrix().transpose();
      Xp.row(r) += step.transpose();
      Xm.row(r) -= step.transpose();
      const Matrix diff = value_(Xp) - value_(Xm);
      for (Index i = 0; i < X.cols(); ++i)
        J.block(out_ * r, i, out_, 1) = diff.col(i) / (2.0 * step(i));
    }
    return J;
  }

 private:
  void check(const Matrix& X) const {
    detail::require_dims(X.rows() == in_, name_ + ": expected input dimension " +
                                              std::to_string(in_) + ", got " +
                                              std::to_string(X.rows()));
  }

  std::string name_;
  Index in_, out_;
  Eval value_;
  Eval jacobian_;
  bool constant_jacobian_;
};

namespace maps {

inline Matrix broadcast_jacobian(const Matrix& J, Index n) {
  const Vector flat = Eigen::Map<const Vector>(J.data(), J.size());
  return flat.replicate(1, n);
}

/// x -> A x + b.
inline BatchMap affine(const Matrix& A, const Vector& b, std::string name = "affine") {
  detail::require_dims(b.size() == A.rows(), "affine: offset has wrong length");
  return BatchMap(
      std::move(name), A.cols(), A.rows(),
      [A, b](const Matrix& X) -> Matrix { return (A * X).colwise() + b; },
      [A](const Matrix& X) -> Matrix { return broadcast_jacobian(A, X.cols()); }, true);
}

inline BatchMap linear(const Matrix& A, std::string name = "linear") {
  return affine(A, Vector::Zero(A.rows()), std::move(name));
}

inline BatchMap constant(const Vector& c, Index in_dim) {
  return affine(Matrix::Zero(c.size(), in_dim), c, "constant");
}

/// sign * (z1 - z2, z1 + z2).
inline BatchMap rotation(double sign) {
  Matrix A(2, 2);
  A << 1.0, -1.0, 1.0, 1.0;
  return linear(sign * A, sign < 0 ? "neg_rotation" : "rotation");
}

/// Elementwise x -> a x + b x^2 (a nonlinear map with analytic Jacobian).
inline BatchMap quadratic(Index dim, double a, double b) {
  return BatchMap(
      "quadratic", dim, dim,
      [a, b](const Matrix& X) -> Matrix {
        return (a * X.array() + b * X.array().square()).matrix();
      },
      [dim, a, b](const Matrix& X) -> Matrix {
        Matrix J = Matrix::Zero(dim * dim, X.cols());
        for (Index r = 0; r < dim; ++r)
          J.row(r + dim * r) = (a + 2.0 * b * X.row(r).array()).matrix();
        return J;
      });
}

/// Appends p zero rows to the output of a map on the first in_dim
/// coordinates of an extended state of dimension in_dim + p.
inline BatchMap pad_state(const BatchMap& g, Index p) {
  const Index d = g.in_dim(), out = g.out_dim(), D = d + p;
  return BatchMap(
      g.name() + "_padded", D, out + p,
      [g, d, out, p](const Matrix& X) -> Matrix {
        Matrix Y = Matrix::Zero(out + p, X.cols());
        Y.topRows(out) = g.value(Matrix(X.topRows(d)));
        return Y;
      },
      [g, d, out, p, D](const Matrix& X) -> Matrix {
        const Index O = out + p;
        Matrix J = Matrix::Zero(O * D, X.cols());
        const Matrix Jg = g.jacobian(Matrix(X.topRows(d)));
        for (Index r = 0; r < d; ++r) J.block(O * r, 0, out, X.cols()) = Jg.middleRows(out * r, out);
        return J;
      },
      g.constant_jacobian());
}

/// Product model on the extended state (z, theta) with scalar theta:
/// F(z, theta) = theta * g(z), so DF = [theta * Dg(z), g(z)].
inline BatchMap theta_scaled(const BatchMap& g) {
  detail::require_dims(g.in_dim() == g.out_dim(), "theta_scaled: g must map R^d to R^d");
  const Index d = g.in_dim(), D = d + 1;
  return BatchMap(
      "theta*" + g.name(), D, d,
      [g, d](const Matrix& X) -> Matrix {
        Matrix G = g.value(Matrix(X.topRows(d)));
        return G.array().rowwise() * X.row(d).array();
      },
      [g, d, D](const Matrix& X) -> Matrix {
        const Matrix Z = X.topRows(d);
        const Matrix Jg = g.jacobian(Z);
        Matrix J(d * D, X.cols());
        J.topRows(d * d) = Jg.array().rowwise() * X.row(d).array();
        J.bottomRows(d) = g.value(Z);
        return J;
      });
}

}  // namespace maps
}  // namespace rpenkf
