#pragma once

// Empirical moments over a particle ensemble: the gain P and the
// Ito-Stratonovich correction Gamma, both frozen at one time step.

#include "rpenkf/sdesim.hpp"

#include <string>
#include <utility>

namespace rpenkf {

/// N >= 2 finite members in R^D, one per column.
class Ensemble {
 public:
  explicit Ensemble(Matrix members) : X_(std::move(members)) {
    if (X_.cols() < 2)
      throw DimensionError("Ensemble: need at least 2 members, got " +
                           std::to_string(X_.cols()));
    if (!X_.allFinite()) throw NumericalError("Ensemble: non-finite member");
  }

  const Matrix& members() const noexcept { return X_; }
  Index size() const noexcept { return X_.cols(); }
  Index dim() const noexcept { return X_.rows(); }
  Vector mean() const { return X_.rowwise().mean(); }
  Matrix covariance() const {
    const Matrix Xc = X_.colwise() - mean();
    return Xc * Xc.transpose() / static_cast<double>(size() - 1);
  }

 private:
  Matrix X_;
};

/// cov_xDh is D x (d*D): entry (gamma, j + d*r) is Cov(x_gamma, dh_j/dx_r).
struct GainSet {
  Vector mean;
  Matrix cov_xh;
  Matrix cov_xDh;
  Matrix P;
  Vector Gamma;
};

/// out_g = sum_{j,q,r} cov_xDh[g, j, r] P[r, q] L[q, j].
inline Vector gubinelli_contract(const Matrix& cov_xDh, const Matrix& P, const Matrix& L) {
  const Index D = P.rows(), d = P.cols();
  detail::require_dims(L.rows() == d && L.cols() == d,
                       "gubinelli_contract: L must be " + std::to_string(d) + "x" +
                           std::to_string(d) + ", got " + detail::shape(L));
  detail::require_dims(cov_xDh.rows() == D && cov_xDh.cols() == d * D,
                       "gubinelli_contract: covariance tensor must be " + std::to_string(D) +
                           "x" + std::to_string(d * D) + ", got " + detail::shape(cov_xDh));
  const Matrix PLt = (P * L).transpose();  // d x D, column-major index j + d*r
  return cov_xDh * Eigen::Map<const Vector>(PLt.data(), PLt.size());
}

namespace detail {

/// Centres h-values on member 0 rather than on the mean. The sum against
/// centred states is the same, but constant columns cancel exactly.
inline Matrix centred_on_first(const Matrix& V) { return V.colwise() - V.col(0); }

}  // namespace detail

/// Unbiased empirical moments; cov_xDh is only formed when `with_dh` is set
/// and the observation map is not affine (otherwise it is exactly zero).
/// HX holds h evaluated on the members.
inline GainSet empirical_moments(const Matrix& X, const Matrix& HX, const FilterModel& model,
                                 bool with_dh = true) {
  const Index N = X.cols(), D = model.state_dim(), d = model.obs_dim();
  if (N < 2) throw DimensionError("empirical_moments: need at least 2 members");
  detail::require_dims(X.rows() == D, "empirical_moments: ensemble has dimension " +
                                          std::to_string(X.rows()) + ", model expects " +
                                          std::to_string(D));
  GainSet g;
  g.mean = X.rowwise().mean();
  const Matrix Xc = X.colwise() - g.mean;
  const double inv = 1.0 / static_cast<double>(N - 1);
  g.cov_xh = Xc * detail::centred_on_first(HX).transpose() * inv;
  g.P = g.cov_xh * model.C_inv() + model.B();
  if (with_dh && !model.h().constant_jacobian()) {
    g.cov_xDh = Xc * detail::centred_on_first(model.h().jacobian(X)).transpose() * inv;
    g.Gamma = -0.5 * gubinelli_contract(g.cov_xDh, g.P, Matrix::Identity(d, d));
  } else {
    g.cov_xDh = Matrix::Zero(D, d * D);
    g.Gamma = Vector::Zero(D);
  }
  return g;
}

inline GainSet empirical_moments(const Matrix& X, const FilterModel& model, bool with_dh = true) {
  detail::require_dims(X.rows() == model.state_dim(), "empirical_moments: ensemble has dimension " +
                                                          std::to_string(X.rows()) + ", model expects " +
                                                          std::to_string(model.state_dim()));
  return empirical_moments(X, model.h().value(X), model, with_dh);
}

inline GainSet empirical_moments(const Ensemble& e, const FilterModel& model) {
  return empirical_moments(e.members(), model, true);
}

}  // namespace rpenkf
