// Acceptance suite: one PASS/FAIL line per criterion, with the measured
// values, the pinned tolerance and the wall time against its budget where
// one is set.
// Exit status is non-zero when any criterion fails.

#include "rpenkf/rpenkf.hpp"

#include <boost/math/special_functions/bessel.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

using namespace rpenkf;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + num(v[i]);
  return s + "]";
}

// ---------------------------------------------------------------------------

Outcome homogenized_mobility_check() {
  const Matrix K = homogenized_mobility(TwoscaleParams{});
  const double paper[2] = {0.62386, 0.884176};
  const double amp[2] = {1.0, 0.5};
  bool ok = true;
  double worst_rel = 0.0;
  for (Index i = 0; i < 2; ++i) {
    ok = ok && std::abs(K(i, i) - paper[i]) <= 1e-3;
    const double i0 = boost::math::cyl_bessel_i(0, amp[i]);
    const double closed = 1.0 / (i0 * i0);
    worst_rel = std::max(worst_rel, std::abs(K(i, i) - closed) / closed);
  }
  ok = ok && worst_rel < 1e-6 && K(0, 1) == 0.0 && K(1, 0) == 0.0;
  return {ok, "K=diag(" + num(K(0, 0)) + ", " + num(K(1, 1)) + "), Bessel rel err " + num(worst_rel)};
}

Outcome linear_gaussian_check() {
  auto cfg = validate_config({{"experiment", "linear_gaussian_check"}, {"N", 5000}, {"T", 5.0},
                              {"dt", 1e-3}, {"n_runs", 20}, {"R", 0.1}});
  const ExperimentModel em = build_model(cfg);
  std::size_t inside = 0, total = 0;
  double worst_cov = 0.0;
  const std::size_t n = static_cast<std::size_t>(std::llround(cfg.T / cfg.dt));
  RunOptions opt;
  opt.record_every = n;
  for (std::size_t k = 0; k <= n; k += 10) opt.checkpoint_steps.push_back(k);
  for (std::size_t r = 0; r < cfg.n_runs; ++r) {
    const RunData data = generate_data(cfg, r, em);
    const Matrix I = Matrix::Identity(2, 2);
    const KalmanBucyPath kb = kalman_bucy_reference(-I, I, I, Matrix::Zero(2, 2), cfg.R * I, em.prior.mean,
                                                    em.prior.cov, data.Y);
    const RunRecord rec = run_filter(em.model, em.prior, canonical_lift(data.Y), cfg.N, cfg.seed_base + r,
                                     Scheme::enkf, opt);
    for (const auto& [k, X] : rec.checkpoints) {
      const Matrix& S = kb.covs[k];
      const double bound = 3.0 * std::sqrt(S.trace() / static_cast<double>(cfg.N));
      const Vector err = X.rowwise().mean() - kb.means.col(static_cast<Index>(k));
      inside += err.cwiseAbs().maxCoeff() <= bound ? 1 : 0;
      ++total;
      if (k == n) {
        const Matrix Xc = X.colwise() - X.rowwise().mean();
        const Matrix cov = Xc * Xc.transpose() / static_cast<double>(cfg.N - 1);
        worst_cov = std::max(worst_cov, (cov - S).norm() / S.norm());
      }
    }
  }
  const double frac = static_cast<double>(inside) / static_cast<double>(total);
  return {frac >= 0.9 && worst_cov <= 0.10,
          "mean within 3*sqrt(trS/N) at " + num(100 * frac) + "% of " + std::to_string(total) +
              " checkpoints (need >= 90%), worst terminal cov rel err " + num(worst_cov) + " (need <= 0.1)"};
}

Outcome affine_degeneracy_check() {
  const Matrix I = Matrix::Identity(2, 2);
  Matrix A(2, 3);
  A << 1.0, -0.5, 2.0, 0.3, 1.0, -1.0;
  Matrix Gs(3, 2);
  Gs << 1.0, 0.0, 0.2, 0.5, 0.0, 0.0;
  auto model = std::make_shared<const FilterModel>(maps::quadratic(3, -1.0, 0.1),
                                                   maps::affine(A, Vector::Constant(2, 0.7)), Gs, 0.4 * I,
                                                   0.3 * I);
  Matrix X0(3, 50);
  GaussianStream(11).fill(X0);
  FilterState a(model, X0, 1e-3, GaussianStream(12)), b(model, X0, 1e-3, GaussianStream(12));
  GaussianStream obs(13);
  for (int k = 0; k < 1000; ++k) {
    const Vector dY = obs.normals(2) * std::sqrt(1e-3);
    Matrix dYY = 0.5 * dY * dY.transpose();
    dYY(0, 1) += 1e-3 * obs.normal();
    dYY(1, 0) = dYY(0, 1) - 2e-3;
    enkf_step(a, dY);
    rp_enkf_step(b, dY, dYY);
  }
  const bool identical = (a.members().array() == b.members().array()).all();
  return {identical, identical ? "bit-identical after 1000 steps" : "ensembles differ"};
}

Outcome physical_bm_area_check() {
  const auto cfg = validate_config({{"experiment", "pbm_magnetic"}, {"T", 10.0}}, Profile::desk);
  std::vector<double> rates;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pbm = simulate_physical_bm(cfg.gamma, cfg.epsilon, TimeGrid::covering(cfg.dt, cfg.T), seed,
                                          cfg.sim_substeps);
    rates.push_back(area_rate(cumulative_skew_correction(pbm.w_eps, SubsampleLag(cfg.tau)), 0, 1));
  }
  const double med = median(rates);
  return {std::abs(med + 1.0) <= 0.25,
          "dt=" + num(cfg.dt) + " tau=" + std::to_string(cfg.tau) + " median rate " + num(med) +
              " (target -1 +/- 25%), per seed " + list(rates)};
}

struct Paired {
  std::vector<double> rp, enkf;
};

Paired paired_runs(io::json base) {
  Paired p;
  base["scheme"] = "rp_enkf";
  const auto rp = run_experiment(validate_config(base, Profile::desk), false);
  base["scheme"] = "enkf";
  const auto en = run_experiment(validate_config(base, Profile::desk), false);
  for (const auto& r : rp.runs) p.rp.push_back(r.record.terminal_theta(1)(0));
  for (const auto& r : en.runs) p.enkf.push_back(r.record.terminal_theta(1)(0));
  return p;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome robust_recovery_check() {
  const Paired p = paired_runs({{"experiment", "pbm_magnetic"}, {"N", 100}, {"n_runs", 5},
                                {"skew_mode", "subsample"}});
  const double truth = 0.5, m = mean_of(p.rp);
  int wins = 0;
  for (std::size_t r = 0; r < p.rp.size(); ++r)
    wins += std::abs(p.enkf[r] - truth) > std::abs(p.rp[r] - truth) ? 1 : 0;
  return {std::abs(m - truth) < 0.15 && wins >= 4,
          "RP 5-run mean " + num(m) + " (|err| < 0.15), EnKF worse in " + std::to_string(wins) +
              "/5 (need >= 4); RP " + list(p.rp) + " EnKF " + list(p.enkf)};
}

Outcome lorenz_check() {
  const Paired p = paired_runs({{"experiment", "lorenz_fast"}, {"N", 100}, {"n_runs", 5}});
  const double truth = 0.5;
  int wins = 0;
  for (std::size_t r = 0; r < p.rp.size(); ++r)
    wins += std::abs(p.rp[r] - truth) <= std::abs(p.enkf[r] - truth) ? 1 : 0;
  return {wins >= 4, "RP error <= EnKF error in " + std::to_string(wins) + "/5 (need >= 4); RP " + list(p.rp) +
                         " EnKF " + list(p.enkf)};
}

Outcome twoscale_check() {
  const Paired p = paired_runs({{"experiment", "twoscale"}, {"N", 100}, {"n_runs", 5}, {"skew_mode", "zero"}});
  const double truth = 1.0, m = mean_of(p.rp);
  int wins = 0;
  for (std::size_t r = 0; r < p.rp.size(); ++r)
    wins += std::abs(p.enkf[r] - truth) > std::abs(p.rp[r] - truth) ? 1 : 0;
  return {std::abs(m - truth) <= 0.2 && wins >= 4,
          "RP 5-run mean " + num(m) + " (|err| <= 0.2), EnKF worse in " + std::to_string(wins) +
              "/5 (need >= 4); RP " + list(p.rp) + " EnKF " + list(p.enkf)};
}

Outcome appendix_b_check() {
  // dZ = theta dt + dW observed without noise; theta prior N(0, 1).
  const Index N = 10000;
  const double dt = 1e-3, T = 2.0;
  const Matrix one = Matrix::Ones(1, 1);
  auto model = std::make_shared<const FilterModel>(
      embed_state_parameter(maps::constant(Vector::Ones(1), 1), one, Matrix::Zero(1, 1)));
  const TimeGrid grid = TimeGrid::covering(dt, T);
  GaussianStream ds = GaussianStream::derived(0, {stream_tag::driver});
  const auto data = driven_parameter_model(0.7, maps::constant(Vector::Ones(1), 1),
                                           brownian_increments(1, grid, ds), 1.0, Matrix::Zero(1, 1), grid, 0,
                                           Vector::Zero(1));
  Matrix cov = Matrix::Identity(2, 2);
  cov(0, 0) = 1e-2;
  RunOptions opt;
  opt.checkpoint_steps = {500, 1000, 2000};
  const RunRecord rec = run_filter(model, {Vector::Zero(2), cov}, canonical_lift(data.Y), N, 1,
                                   Scheme::rp_enkf, opt);
  const auto post = analytic_param_posterior(maps::constant(Vector::Ones(1), 1), data.Y, one, 1.0);
  bool ok = rec.checkpoints.size() == 3;
  std::vector<double> rel;
  for (const auto& [k, X] : rec.checkpoints) {
    const Vector th = X.row(1).transpose();
    const double var = (th.array() - th.mean()).square().sum() / static_cast<double>(N - 1);
    const double t = static_cast<double>(k) * dt;
    const double closed = 1.0 / (1.0 + t);
    rel.push_back(std::abs(var - closed) / closed);
    ok = ok && rel.back() <= 0.05 && std::abs(post.variance(static_cast<Index>(k)) - closed) < 1e-12;
  }
  return {ok, "relative error of Var(theta) vs 1/(1+t) at t=0.5,1,2: " + list(rel) + " (need <= 0.05)"};
}

Outcome ito_stratonovich_check() {
  // True-model data at dt/2; the dt data are every other sample of the same path.
  const double dt = 1e-3;
  const auto cfg = validate_config({{"experiment", "pbm_magnetic"}, {"epsilon", 0.0}, {"dt", dt / 2},
                                    {"T", 5.0}, {"skew_mode", "zero"}, {"N", 100}});
  const ExperimentModel em = build_model(cfg);
  std::vector<double> ratios;
  for (std::size_t s = 0; s < 10; ++s) {
    const RunData d = generate_data(cfg, s, em);
    const Index n_coarse = (d.Y.values().cols() - 1) / 2;
    Matrix Yc(2, n_coarse + 1);
    for (Index k = 0; k <= n_coarse; ++k) Yc.col(k) = d.Y.values().col(2 * k);
    const PathSeries coarse(TimeGrid(dt, static_cast<std::size_t>(n_coarse)), Yc);
    auto gap = [&](const PathSeries& Y) {
      const LiftedSeries L = canonical_lift(Y);
      RunOptions opt;
      opt.record_every = Y.n_steps();
      const double rp = run_filter(em.model, em.prior, L, cfg.N, s, Scheme::rp_enkf, opt).terminal_theta(1)(0);
      const double en = run_filter(em.model, em.prior, L, cfg.N, s, Scheme::enkf, opt).terminal_theta(1)(0);
      return rp - en;
    };
    ratios.push_back(std::abs(gap(d.Y) / gap(coarse)));
  }
  const double med = median(ratios);
  return {med >= 0.3 && med <= 0.8, "median |gap(dt/2)|/|gap(dt)| = " + num(med) + " (need in [0.3, 0.8]), per seed " +
                                        list(ratios)};
}

Outcome kernel_check() {
  GaussianStream s(21);
  double chen = 0.0;
  for (Index d = 1; d <= 3; ++d)
    for (std::size_t n : {1, 2, 7, 50, 100}) {
      Matrix Y(d, static_cast<Index>(n + 1));
      s.fill(Y);
      const LiftedSeries L = canonical_lift(PathSeries(TimeGrid(0.01, n), Y));
      for (std::size_t mid = 1; mid < n; mid += std::max<std::size_t>(1, n / 5)) {
        const auto a = chen_compose(L, 0, mid), b = chen_compose(L, mid, n), all = chen_compose(L, 0, n);
        const Matrix joined = a.second + b.second + a.first * b.first.transpose();
        chen = std::max(chen, (joined - all.second).cwiseAbs().maxCoeff());
      }
      const Vector dy = Y.col(static_cast<Index>(n)) - Y.col(0);
      const Matrix sym = sym_skew_split(chen_compose(L, 0, n).second).sym;
      chen = std::max(chen, (sym - 0.5 * dy * dy.transpose()).cwiseAbs().maxCoeff());
    }

  // Integer-valued samples keep every sum exact, so "exact" is bitwise.
  bool wass_exact = true;
  for (std::size_t n = 1; n <= 6; ++n)
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> a(n), b(n);
      for (auto& x : a) x = std::round(10.0 * s.normal());
      for (auto& x : b) x = std::round(10.0 * s.normal());
      std::sort(a.begin(), a.end());
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[perm[i]]);
        best = std::min(best, acc);
      } while (std::next_permutation(perm.begin(), perm.end()));
      wass_exact = wass_exact && wasserstein_1d(a, b, 1.0) == best / static_cast<double>(n);
    }

  bool contract_exact = true;
  for (Index D = 1; D <= 3; ++D)
    for (Index d = 1; d <= 3; ++d) {
      Matrix cov(D, d * D), P(D, d), L(d, d);
      for (Matrix* m : {&cov, &P, &L})
        for (Index i = 0; i < m->size(); ++i) m->data()[i] = std::round(5.0 * s.normal());
      Vector loop = Vector::Zero(D);
      for (Index g = 0; g < D; ++g)
        for (Index j = 0; j < d; ++j)
          for (Index r = 0; r < D; ++r)
            for (Index q = 0; q < d; ++q) loop(g) += cov(g, j + d * r) * P(r, q) * L(q, j);
      contract_exact = contract_exact && (gubinelli_contract(cov, P, L).array() == loop.array()).all();
    }
  return {chen < 1e-12 && wass_exact && contract_exact,
          "Chen residual " + num(chen) + " (< 1e-12), wasserstein exact " + (wass_exact ? "yes" : "no") +
              ", contraction exact " + (contract_exact ? "yes" : "no")};
}

Outcome chaos_check() {
  const auto cfg = validate_config({{"experiment", "chaos"}, {"n_runs", 10}}, Profile::desk);
  const auto res = run_experiment(cfg, false);
  const auto summary = summarize_chaos(res.chaos);
  std::vector<double> disc, wass;
  for (const auto& s : summary) {
    disc.push_back(s.median_discrepancy);
    wass.push_back(s.median_wass(0));
  }
  bool mono = disc.size() == 3;
  for (std::size_t i = 1; i < disc.size(); ++i) mono = mono && disc[i] < disc[i - 1] && wass[i] < wass[i - 1];
  return {mono, "N=16,64,256 median coupled " + list(disc) + ", median W1(theta) " + list(wass) +
                    " (both strictly decreasing)"};
}

}  // namespace

int main(int argc, char** argv) {
  set_warning_sink([](const std::string&) {});
  const std::vector<Criterion> criteria{
      {"homogenized_mobility", 1.0, homogenized_mobility_check},
      {"linear_gaussian_exactness", 60.0, linear_gaussian_check},
      {"affine_h_degeneracy", 10.0, affine_degeneracy_check},
      {"physical_bm_area_correction", 120.0, physical_bm_area_check},
      {"robust_parameter_recovery", 300.0, robust_recovery_check},
      {"lorenz_paired_ordering", 600.0, lorenz_check},
      {"twoscale_recovery", 300.0, twoscale_check},
      {"appendix_b_closed_form", 60.0, appendix_b_check},
      {"ito_stratonovich_cancellation", 0.0, ito_stratonovich_check},
      {"rough_path_kernels", 0.0, kernel_check},
      {"propagation_of_chaos", 0.0, chaos_check},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && c.name != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool timed = c.budget_seconds > 0.0;
    const bool pass = o.pass && (!timed || secs <= c.budget_seconds);
    failures += pass ? 0 : 1;
    std::string time = std::to_string(secs).substr(0, std::to_string(secs).find('.') + 2) + "s";
    if (timed) time += " (budget " + std::to_string(static_cast<int>(c.budget_seconds)) + "s)";
    std::printf("%s %s: %s; %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), time.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
