#pragma once

// Propagation-of-chaos measurements: N-particle filters coupled to a larger
// reference system through shared per-index noise streams, and 1D
// Wasserstein distances between empirical marginals.

#include "rpenkf/filters.hpp"

#include <algorithm>
#include <map>
#include <vector>

namespace rpenkf {

/// Exact 1D optimal-transport distance between empirical measures,
/// (int_0^1 |Fa^{-1}(u) - Fb^{-1}(u)|^rho du)^{1/rho}. For equal sizes this is
/// the sorted-pairs formula.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b, double rho = 1.0) {
  if (a.empty() || b.empty()) throw DimensionError("wasserstein_1d: empty sample set");
  if (!(rho >= 1.0)) throw RangeError("wasserstein_1d: rho must be >= 1");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  double acc = 0.0;
  if (n == m) {
    for (std::size_t i = 0; i < n; ++i) acc += std::pow(std::abs(a[i] - b[i]), rho);
    return std::pow(acc / static_cast<double>(n), 1.0 / rho);
  }
  // Merge the quantile breakpoints i/n and j/m; work in units of 1/(n m).
  std::size_t i = 0, j = 0;
  std::size_t u = 0;
  const std::size_t total = n * m;
  while (u < total) {
    const std::size_t next_a = (i + 1) * m, next_b = (j + 1) * n;
    const std::size_t next = std::min(next_a, next_b);
    acc += static_cast<double>(next - u) * std::pow(std::abs(a[i] - b[j]), rho);
    u = next;
    if (next == next_a) ++i;
    if (next == next_b) ++j;
  }
  return std::pow(acc / static_cast<double>(total), 1.0 / rho);
}

template <typename Row>
std::vector<double> to_samples(const Row& row) {
  return std::vector<double>(row.data(), row.data() + row.size());
}

struct ChaosConfig {
  std::vector<Index> counts{16, 64, 256};
  Index n_ref = 1024;
  double rho = 1.0;
  std::uint64_t seed_base = 0;
  std::size_t n_seeds = 10;
  std::vector<std::size_t> checkpoint_steps;  ///< empty: terminal step only
  Scheme scheme = Scheme::rp_enkf;
  std::shared_ptr<const FilterModel> model;
  GaussianPrior prior;
  std::shared_ptr<const LiftedSeries> lift;
};

struct ChaosRow {
  Index N;
  double t;
  double coupled_discrepancy;
  Vector wass_theta;
  std::uint64_t seed;
};

namespace detail {

/// Particle i draws its initial value and its noise from streams derived
/// from (seed, i) only, so systems of different sizes agree on shared indices.
inline FilterState coupled_system(const ChaosConfig& cfg, Index N, std::uint64_t seed) {
  const Index D = cfg.model->state_dim();
  Matrix X(D, N);
  std::vector<GaussianStream> streams;
  streams.reserve(static_cast<std::size_t>(N));
  const Matrix S = symmetric_sqrt(cfg.prior.cov);
  for (Index i = 0; i < N; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    auto ps = GaussianStream::derived(seed, {stream_tag::prior, idx});
    X.col(i) = cfg.prior.mean + S * ps.normals(D);
    streams.push_back(GaussianStream::derived(seed, {stream_tag::member, idx}));
  }
  return FilterState(cfg.model, std::move(X), cfg.lift->grid().dt(), std::move(streams));
}

inline std::map<std::size_t, Matrix> run_coupled(const ChaosConfig& cfg, Index N,
                                                 std::uint64_t seed,
                                                 const std::vector<std::size_t>& checkpoints) {
  FilterState s = coupled_system(cfg, N, seed);
  std::map<std::size_t, Matrix> out;
  const LiftedSeries& lift = *cfg.lift;
  auto keep = [&](std::size_t k) {
    if (std::find(checkpoints.begin(), checkpoints.end(), k) != checkpoints.end())
      out.emplace(k, s.members());
  };
  keep(0);
  const Index d = lift.dim();
  Matrix dYY = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < lift.n_steps(); ++k) {
    if (cfg.scheme == Scheme::rp_enkf) dYY = lift.second_order(k);
    s.step(cfg.scheme, lift.increment(k), dYY);
    if (s.diverged()) throw SimulationError("chaos_experiment: filter diverged", k + 1);
    keep(k + 1);
  }
  return out;
}

}  // namespace detail

/// Rows for every (seed, N, checkpoint): the largest coupled distance over
/// the first N indices and the per-parameter Wasserstein distance to the
/// reference ensemble.
inline std::vector<ChaosRow> chaos_experiment(const ChaosConfig& cfg) {
  if (!cfg.model || !cfg.lift) throw DimensionError("chaos_experiment: model and lift are required");
  if (cfg.counts.empty()) throw RangeError("chaos_experiment: no particle counts");
  const Index nmax = *std::max_element(cfg.counts.begin(), cfg.counts.end());
  if (cfg.n_ref < nmax) throw RangeError("chaos_experiment: n_ref must be >= every N");
  if (!(cfg.rho >= 1.0)) throw RangeError("chaos_experiment: rho must be >= 1");
  std::vector<std::size_t> checkpoints = cfg.checkpoint_steps;
  if (checkpoints.empty()) checkpoints.push_back(cfg.lift->n_steps());

  const Index p = cfg.model->param_dim();
  const Index D = cfg.model->state_dim();
  const double dt = cfg.lift->grid().dt();
  std::vector<ChaosRow> rows;
  for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
    const std::uint64_t seed = cfg.seed_base + s;
    const auto ref = detail::run_coupled(cfg, cfg.n_ref, seed, checkpoints);
    for (Index N : cfg.counts) {
      const auto sys = detail::run_coupled(cfg, N, seed, checkpoints);
      for (const auto& [k, X] : sys) {
        const Matrix& Xr = ref.at(k);
        const double disc = (X - Xr.leftCols(N)).colwise().norm().maxCoeff();
        Vector w(p);
        for (Index j = 0; j < p; ++j)
          w(j) = wasserstein_1d(to_samples(Vector(X.row(D - p + j))),
                                to_samples(Vector(Xr.row(D - p + j))), cfg.rho);
        rows.push_back({N, static_cast<double>(k) * dt, disc, w, seed});
      }
    }
  }
  return rows;
}

struct ChaosSummary {
  Index N;
  double t;
  double median_discrepancy;
  Vector median_wass;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw DimensionError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Medians over seeds for each (N, t).
inline std::vector<ChaosSummary> summarize_chaos(const std::vector<ChaosRow>& rows) {
  std::map<std::pair<Index, double>, std::vector<const ChaosRow*>> groups;
  for (const auto& r : rows) groups[{r.N, r.t}].push_back(&r);
  std::vector<ChaosSummary> out;
  for (const auto& [key, g] : groups) {
    std::vector<double> disc;
    const Index p = g.front()->wass_theta.size();
    std::vector<std::vector<double>> w(static_cast<std::size_t>(p));
    for (const auto* r : g) {
      disc.push_back(r->coupled_discrepancy);
      for (Index j = 0; j < p; ++j) w[static_cast<std::size_t>(j)].push_back(r->wass_theta(j));
    }
    Vector mw(p);
    for (Index j = 0; j < p; ++j) mw(j) = median(w[static_cast<std::size_t>(j)]);
    out.push_back({key.first, key.second, median(disc), mw});
  }
  return out;
}

}  // namespace rpenkf
