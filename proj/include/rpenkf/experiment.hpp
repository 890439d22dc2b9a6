#pragma once

// Configuration-driven experiments: validation with defaults per profile,
// data generation, lift construction, filtering over several seeds and the
// on-disk layout out/<experiment>/<config-hash>/.

#include "rpenkf/io.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace rpenkf {

/// Validation failure; carries every offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid config:";
    for (const auto& x : p) s += "\n  - " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

enum class Profile { desk, paper };
enum class SkewMode { zero, subsample };

inline Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw ConfigError({"profile: expected 'desk' or 'paper', got '" + s + "'"});
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"pbm_magnetic", "lorenz_fast", "twoscale",
                                              "linear_gaussian_check", "chaos", "lag_diagnostics"};
  return names;
}

/// Lift fed to the filter: symmetric part from the data and, with lag > 1,
/// the skew part coarse-minus-fine so the fine-scale area excess is removed.
inline LiftedSeries subsampled_lift(const PathSeries& Y, std::size_t tau) {
  if (tau <= 1) return canonical_lift(Y);
  return lift_with_skew(Y, -skew_correction(Y, SubsampleLag(tau)));
}

struct ExperimentConfig {
  std::string experiment;
  Profile profile = Profile::desk;
  double dt = 1e-3;
  double T = 20.0;
  Index N = 100;
  std::size_t n_runs = 5;
  std::uint64_t seed_base = 0;
  std::size_t tau = 1;
  double epsilon = 1e-2;
  double theta_true = 0.5;
  double R = 0.1;
  Scheme scheme = Scheme::rp_enkf;
  SkewMode skew_mode = SkewMode::zero;
  std::string output = "out";
  std::size_t record_every = 1;
  std::size_t threads = 1;

  // pbm_magnetic / lag_diagnostics / chaos
  double gamma = -2.0;
  int sim_substeps = 1;
  // lorenz_fast
  double lambda = 2.0 / 45.0;
  double g_sqrt = 0.36;
  LorenzParams lorenz;
  Vector lorenz_initial = (Vector(3) << 1.0, 1.0, 25.0).finished();
  double burn_in = 20.0;
  int rk4_substeps = 2;
  // twoscale
  double sigma = 1.0;
  std::vector<double> amplitudes{1.0, 0.5};
  std::string data_model = "multiscale";
  // prior
  double theta_prior_mean = 0.0;
  double theta_prior_var = 1.0;
  double z_prior_var = -1.0;  ///< < 0 means "use R"
  // lag_diagnostics
  std::vector<std::size_t> taus;
  // chaos
  std::vector<Index> counts{16, 64, 256};
  Index n_ref = 1024;
  double rho = 1.0;
  std::size_t mollify = 20;

  std::vector<std::string> warnings;
  io::json normalized;  ///< every resolved field except output/threads
  std::string hash;
};

namespace detail {

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::size_t lag_for(double lag_time, double dt) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(lag_time / dt)));
}

inline io::json defaults_for(const std::string& exp, Profile prof) {
  const bool paper = prof == Profile::paper;
  io::json j;
  j["dt"] = 1e-3;
  j["T"] = 20.0;
  j["N"] = 100;
  j["n_runs"] = 5;
  j["seed_base"] = 0;
  j["scheme"] = "rp_enkf";
  j["skew_mode"] = "zero";
  j["prior"] = {{"theta_mean", 0.0}, {"theta_var", 1.0}, {"z_var", nullptr}};
  if (exp == "pbm_magnetic" || exp == "lag_diagnostics" || exp == "chaos") {
    j["dt"] = paper ? 1e-4 : 1e-3;
    j["epsilon"] = 1e-2;
    j["gamma"] = -2.0;
    j["theta_true"] = 0.5;
    j["R"] = 0.1;
    j["skew_mode"] = "subsample";
    j["sim_substeps"] = paper ? 1 : 10;
  }
  if (exp == "lag_diagnostics") {
    j["T"] = paper ? 20.0 : 10.0;
    j["n_runs"] = 1;
  }
  if (exp == "chaos") {
    j["epsilon"] = 0.0;
    j["T"] = 1.0;
    j["counts"] = {16, 64, 256};
    j["n_ref"] = 1024;
    j["rho"] = 1.0;
    j["n_runs"] = 10;
    j["mollify"] = 20;
    j["skew_mode"] = "zero";
  }
  if (exp == "lorenz_fast") {
    j["dt"] = paper ? 1e-5 : 1e-4;
    j["T"] = paper ? 20.0 : 5.0;
    j["epsilon"] = 0.05;
    j["theta_true"] = 0.5;
    j["R"] = 0.01;
    j["lambda"] = 2.0 / 45.0;
    j["g_sqrt"] = 0.36;
    j["lorenz"] = {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0},
                   {"initial", {1.0, 1.0, 25.0}}, {"burn_in", 20.0}, {"rk4_substeps", 2}};
    j["skew_mode"] = "subsample";
  }
  if (exp == "twoscale") {
    j["dt"] = 1e-4;
    j["T"] = 20.0;
    j["epsilon"] = 1e-2;
    j["theta_true"] = 1.0;
    j["R"] = 0.01;
    j["sigma"] = 1.0;
    j["amplitudes"] = {1.0, 0.5};
    j["data_model"] = "multiscale";
    j["sim_substeps"] = paper ? 1 : 10;
  }
  if (exp == "linear_gaussian_check") {
    j["dt"] = 1e-3;
    j["T"] = 5.0;
    j["N"] = 5000;
    j["n_runs"] = 20;
    j["R"] = 0.1;
    j["record_every"] = 10;
    j["scheme"] = "enkf";
  }
  // Lags match a physical lag time: 0.07 for physical Brownian motion data,
  // 5e-3 for the Lorenz driver, none for the two-scale potential.
  const double dt = j["dt"].get<double>();
  if (exp == "pbm_magnetic" || exp == "lag_diagnostics") j["tau"] = lag_for(0.07, dt);
  else if (exp == "lorenz_fast") j["tau"] = lag_for(5e-3, dt);
  else j["tau"] = 1;
  if (exp == "lag_diagnostics") {
    const std::size_t step = lag_for(0.01, dt);
    std::vector<std::size_t> taus{1};
    for (std::size_t k = 1; k <= 15; ++k) taus.push_back(k * step);
    j["taus"] = taus;
  }
  if (!j.contains("record_every"))
    j["record_every"] = lag_for(0.01, dt);
  return j;
}

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "experiment", "profile", "dt", "T", "N", "n_runs", "seed_base", "tau", "epsilon",
      "theta_true", "R", "scheme", "skew_mode", "output", "record_every", "threads", "gamma",
      "sim_substeps", "lambda", "g_sqrt", "lorenz", "sigma", "amplitudes", "data_model",
      "prior", "taus", "counts", "n_ref", "rho", "mollify"};
  return keys;
}

}  // namespace detail

/// Resolves defaults for the experiment and profile, checks types and
/// ranges, and attaches stability warnings. All problems are reported at once.
inline ExperimentConfig validate_config(const io::json& user, Profile profile = Profile::desk) {
  using io::json;
  std::vector<std::string> errs;
  if (!user.is_object()) throw ConfigError({"config must be a JSON object"});
  if (!user.contains("experiment") || !user["experiment"].is_string())
    throw ConfigError({"experiment: required string field"});
  const std::string exp = user["experiment"].get<std::string>();
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), exp) == names.end())
    throw ConfigError({"experiment: unknown experiment '" + exp + "'"});
  if (user.contains("profile")) {
    if (!user["profile"].is_string()) throw ConfigError({"profile: expected string"});
    profile = parse_profile(user["profile"].get<std::string>());
  }
  for (auto it = user.begin(); it != user.end(); ++it)
    if (!detail::known_keys().count(it.key())) errs.push_back(it.key() + ": unknown field");

  json j = detail::defaults_for(exp, profile);
  // Lags scale with dt unless given explicitly.
  if (user.contains("dt") && user["dt"].is_number() && user["dt"].get<double>() > 0.0) {
    const double dt = user["dt"].get<double>();
    j["dt"] = dt;
    const json scaled = [&] {
      json tmp = detail::defaults_for(exp, profile);
      const double d0 = tmp["dt"].get<double>();
      const std::size_t t0 = tmp["tau"].get<std::size_t>();
      json out;
      out["tau"] = t0 <= 1 ? std::size_t{1} : detail::lag_for(static_cast<double>(t0) * d0, dt);
      out["record_every"] = detail::lag_for(0.01, dt);
      if (exp == "linear_gaussian_check") out["record_every"] = 10;
      if (tmp.contains("taus")) {
        std::vector<std::size_t> taus{1};
        for (std::size_t k = 1; k <= 15; ++k) taus.push_back(k * detail::lag_for(0.01, dt));
        out["taus"] = taus;
      }
      return out;
    }();
    for (auto it = scaled.begin(); it != scaled.end(); ++it) j[it.key()] = it.value();
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.key() == "prior" || it.key() == "lorenz") {
      if (!it.value().is_object()) {
        errs.push_back(it.key() + ": expected object");
        continue;
      }
      for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
        if (!j[it.key()].contains(jt.key()))
          errs.push_back(it.key() + "." + jt.key() + ": unknown field");
        else
          j[it.key()][jt.key()] = jt.value();
      }
    } else if (it.key() != "profile") {
      j[it.key()] = it.value();
    }
  }

  ExperimentConfig c;
  c.experiment = exp;
  c.profile = profile;
  auto num = [&](const char* key, double& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) errs.push_back(std::string(key) + ": expected number");
    else dst = j[key].get<double>();
  };
  auto uint = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) errs.push_back(std::string(key) + ": expected integer");
    else if (j[key].get<long long>() < 0) errs.push_back(std::string(key) + ": must be >= 0");
    else dst = static_cast<std::remove_reference_t<decltype(dst)>>(j[key].get<long long>());
  };
  auto str = [&](const char* key, std::string& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) errs.push_back(std::string(key) + ": expected string");
    else dst = j[key].get<std::string>();
  };

  if (j.contains("N") && j["N"].is_number_integer()) c.N = j["N"].get<Index>();
  else if (j.contains("N")) errs.push_back("N: expected integer");
  num("dt", c.dt);
  num("T", c.T);
  uint("n_runs", c.n_runs);
  uint("seed_base", c.seed_base);
  uint("tau", c.tau);
  num("epsilon", c.epsilon);
  num("theta_true", c.theta_true);
  num("R", c.R);
  str("output", c.output);
  uint("record_every", c.record_every);
  uint("threads", c.threads);
  num("gamma", c.gamma);
  uint("sim_substeps", c.sim_substeps);
  num("lambda", c.lambda);
  num("g_sqrt", c.g_sqrt);
  num("sigma", c.sigma);
  str("data_model", c.data_model);
  num("rho", c.rho);
  uint("mollify", c.mollify);
  if (j.contains("n_ref") && j["n_ref"].is_number_integer()) c.n_ref = j["n_ref"].get<Index>();
  else if (j.contains("n_ref")) errs.push_back("n_ref: expected integer");

  std::string scheme = "rp_enkf", skew = "zero";
  str("scheme", scheme);
  str("skew_mode", skew);
  if (scheme == "enkf") c.scheme = Scheme::enkf;
  else if (scheme == "rp_enkf") c.scheme = Scheme::rp_enkf;
  else errs.push_back("scheme: expected 'enkf' or 'rp_enkf', got '" + scheme + "'");
  if (skew == "zero") c.skew_mode = SkewMode::zero;
  else if (skew == "subsample") c.skew_mode = SkewMode::subsample;
  else errs.push_back("skew_mode: expected 'zero' or 'subsample', got '" + skew + "'");

  if (j.contains("amplitudes")) {
    if (!j["amplitudes"].is_array()) errs.push_back("amplitudes: expected array of numbers");
    else c.amplitudes = j["amplitudes"].get<std::vector<double>>();
  }
  if (j.contains("taus")) {
    if (!j["taus"].is_array()) errs.push_back("taus: expected array of integers");
    else c.taus = j["taus"].get<std::vector<std::size_t>>();
  }
  if (j.contains("counts")) {
    if (!j["counts"].is_array()) errs.push_back("counts: expected array of integers");
    else c.counts = j["counts"].get<std::vector<Index>>();
  }
  if (j.contains("lorenz")) {
    const json& L = j["lorenz"];
    try {
      c.lorenz.sigma = L.at("sigma").get<double>();
      c.lorenz.rho = L.at("rho").get<double>();
      c.lorenz.beta = L.at("beta").get<double>();
      const auto init = L.at("initial").get<std::vector<double>>();
      if (init.size() != 3) errs.push_back("lorenz.initial: expected 3 numbers");
      else c.lorenz_initial = Eigen::Map<const Vector>(init.data(), 3);
      c.burn_in = L.at("burn_in").get<double>();
      c.rk4_substeps = L.at("rk4_substeps").get<int>();
    } catch (const json::exception& e) {
      errs.push_back(std::string("lorenz: ") + e.what());
    }
  }
  {
    const json& P = j["prior"];
    if (P["theta_mean"].is_number()) c.theta_prior_mean = P["theta_mean"].get<double>();
    else errs.push_back("prior.theta_mean: expected number");
    if (P["theta_var"].is_number()) c.theta_prior_var = P["theta_var"].get<double>();
    else errs.push_back("prior.theta_var: expected number");
    if (P["z_var"].is_number()) c.z_prior_var = P["z_var"].get<double>();
    else if (!P["z_var"].is_null()) errs.push_back("prior.z_var: expected number or null");
  }

  if (!(c.dt > 0.0)) errs.push_back("dt: must be positive");
  if (!(c.T > 0.0)) errs.push_back("T: must be positive");
  if (c.N < 2) errs.push_back("N: must be >= 2");
  if (c.n_runs < 1) errs.push_back("n_runs: must be >= 1");
  if (c.tau < 1) errs.push_back("tau: must be >= 1");
  if (c.R < 0.0) errs.push_back("R: must be >= 0");
  if (c.record_every < 1) errs.push_back("record_every: must be >= 1");
  if (c.sim_substeps < 1) errs.push_back("sim_substeps: must be >= 1");
  if (c.theta_prior_var <= 0.0) errs.push_back("prior.theta_var: must be positive");
  if (c.epsilon < 0.0) errs.push_back("epsilon: must be >= 0");
  if ((exp == "lorenz_fast" || exp == "twoscale") && !(c.epsilon > 0.0))
    errs.push_back("epsilon: must be positive for " + exp);
  if (exp == "twoscale" && c.data_model != "multiscale" && c.data_model != "homogenized")
    errs.push_back("data_model: expected 'multiscale' or 'homogenized'");
  if (exp == "twoscale" && c.amplitudes.size() != 2)
    errs.push_back("amplitudes: expected two amplitudes");
  if ((exp == "twoscale" || exp == "linear_gaussian_check") && !(c.R > 0.0) && exp == "linear_gaussian_check")
    errs.push_back("R: must be positive for linear_gaussian_check");
  if (exp == "chaos") {
    if (c.counts.empty()) errs.push_back("counts: must be non-empty");
    for (Index n : c.counts)
      if (n < 2) errs.push_back("counts: every N must be >= 2");
    if (!c.counts.empty() && c.n_ref < *std::max_element(c.counts.begin(), c.counts.end()))
      errs.push_back("n_ref: must be >= every entry of counts");
    if (!(c.rho >= 1.0)) errs.push_back("rho: must be >= 1");
  }
  const auto n_steps = static_cast<std::size_t>(std::llround(c.T / (c.dt > 0 ? c.dt : 1.0)));
  if (exp == "lag_diagnostics")
    for (auto t : c.taus)
      if (t < 1 || t > n_steps) errs.push_back("taus: every lag must lie in [1, n_steps]");
  if (c.tau > n_steps && c.dt > 0.0 && c.T > 0.0) errs.push_back("tau: exceeds number of steps");
  if (!errs.empty()) throw ConfigError(errs);

  const double sim_dt = c.dt / c.sim_substeps;
  if ((exp == "pbm_magnetic" || exp == "lag_diagnostics") && c.epsilon > 0.0 &&
      sim_dt > c.epsilon * c.epsilon / 10.0) {
    std::ostringstream os;
    os << "dt=" << sim_dt << " exceeds eps^2/10=" << c.epsilon * c.epsilon / 10.0
       << "; the physical Brownian motion is under-resolved";
    c.warnings.push_back(os.str());
  }
  if (exp == "lorenz_fast" && c.dt > c.epsilon * c.epsilon / 10.0) {
    std::ostringstream os;
    os << "dt=" << c.dt << " exceeds eps^2/10=" << c.epsilon * c.epsilon / 10.0;
    c.warnings.push_back(os.str());
  }
  if (exp == "twoscale") {
    double amax = 0.0;
    for (double a : c.amplitudes) amax = std::max(amax, std::abs(a));
    if (amax / c.epsilon * sim_dt >= 0.5) c.warnings.push_back("(1/eps)|grad p| dt >= 0.5");
  }

  j.erase("output");
  j.erase("threads");
  j["experiment"] = exp;
  j["profile"] = profile == Profile::paper ? "paper" : "desk";
  c.normalized = j;
  c.hash = detail::fnv1a_hex(j.dump());
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, Profile profile) {
  io::json j;
  try {
    j = io::read_json(path);
  } catch (const io::json::exception& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  } catch (const io::IoError& e) {
    throw ConfigError({e.what()});
  }
  return validate_config(j, profile);
}

// ---------------------------------------------------------------------------
// Models and data
// ---------------------------------------------------------------------------

struct ExperimentModel {
  std::shared_ptr<const FilterModel> model;
  GaussianPrior prior;
  std::shared_ptr<const BatchMap> drift;  ///< g in F(z, theta) = theta g(z)
};

inline Matrix homogenized_mobility_for(const ExperimentConfig& c) {
  TwoscaleParams tp;
  tp.sigma = c.sigma;
  tp.amplitudes = c.amplitudes;
  return homogenized_mobility(tp);
}

inline ExperimentModel build_model(const ExperimentConfig& c) {
  ExperimentModel em;
  const double z_var = c.z_prior_var >= 0.0 ? c.z_prior_var : c.R;
  if (c.experiment == "linear_gaussian_check") {
    const Matrix I = Matrix::Identity(2, 2);
    em.model = std::make_shared<const FilterModel>(maps::linear(-I), maps::linear(I), I,
                                                   Matrix::Zero(2, 2), std::sqrt(c.R) * I);
    em.prior = {Vector::Zero(2), I};
    return em;
  }
  Matrix G_Z_sqrt;
  if (c.experiment == "lorenz_fast") {
    em.drift = std::make_shared<const BatchMap>(maps::rotation(1.0));
    G_Z_sqrt = Matrix::Constant(2, 1, c.g_sqrt);
  } else if (c.experiment == "twoscale") {
    const Matrix K = homogenized_mobility_for(c);
    em.drift = std::make_shared<const BatchMap>(maps::linear(-K, "neg_mobility"));
    G_Z_sqrt = (2.0 * c.sigma * K).cwiseSqrt();
  } else {
    em.drift = std::make_shared<const BatchMap>(maps::rotation(-1.0));
    G_Z_sqrt = Matrix::Identity(2, 2);
  }
  em.model = std::make_shared<const FilterModel>(
      embed_state_parameter(*em.drift, G_Z_sqrt, std::sqrt(c.R) * Matrix::Identity(2, 2)));
  Matrix cov = Matrix::Zero(3, 3);
  cov(0, 0) = cov(1, 1) = z_var;
  cov(2, 2) = c.theta_prior_var;
  Vector mean = Vector::Zero(3);
  mean(2) = c.theta_prior_mean;
  em.prior = {mean, cov};
  return em;
}

struct RunData {
  PathSeries Y;
  std::optional<PathSeries> Z;       ///< hidden signal
  std::optional<PathSeries> driver;  ///< driving path (physical BM, Lorenz integral)
};

/// Data for run r; depends only on the data-side parameters and seed_base + r.
inline RunData generate_data(const ExperimentConfig& c, std::size_t r, const ExperimentModel& em) {
  const std::uint64_t seed = c.seed_base + r;
  const TimeGrid grid = TimeGrid::covering(c.dt, c.T);
  const Matrix Rs = std::sqrt(c.R) * Matrix::Identity(2, 2);
  const Vector z0 = Vector::Zero(2);
  auto steps_of = [](const PathSeries& p) {
    const Index n = static_cast<Index>(p.n_steps());
    return Matrix(p.values().rightCols(n) - p.values().leftCols(n));
  };
  if (c.experiment == "linear_gaussian_check") {
    auto ps = GaussianStream::derived(seed, {stream_tag::prior, 7});
    const Vector x0 = em.prior.mean + symmetric_sqrt(em.prior.cov) * ps.normals(2);
    auto so = simulate_filter_model(*em.model, x0, grid, seed);
    return {so.Y, so.X, std::nullopt};
  }
  if (c.experiment == "lorenz_fast") {
    LorenzParams lp = c.lorenz;
    lp.eps = c.epsilon;
    const Vector l0 = lorenz_spin_up(lp, c.lorenz_initial, c.burn_in, seed);
    const LorenzRun run = simulate_lorenz63(lp, l0, grid, c.rk4_substeps);
    auto dd = driven_parameter_model(c.theta_true, *em.drift, run.driver_steps, c.lambda, Rs, grid,
                                     seed, z0);
    return {dd.Y, dd.Z, cumulative_path(run.driver_steps, grid, Vector::Zero(2))};
  }
  if (c.experiment == "twoscale") {
    if (c.data_model == "homogenized") {
      const Matrix K = homogenized_mobility_for(c);
      auto ds = GaussianStream::derived(seed, {stream_tag::driver});
      const Matrix dW = (2.0 * c.sigma * K).cwiseSqrt() * brownian_increments(2, grid, ds);
      auto dd = driven_parameter_model(c.theta_true, *em.drift, dW, 1.0, Rs, grid, seed, z0);
      return {dd.Y, dd.Z, std::nullopt};
    }
    TwoscaleParams tp;
    tp.theta = c.theta_true;
    tp.eps = c.epsilon;
    tp.sigma = c.sigma;
    tp.amplitudes = c.amplitudes;
    const auto sub = static_cast<std::size_t>(c.sim_substeps);
    const TimeGrid fine(c.dt / static_cast<double>(sub), grid.n_steps() * sub);
    const PathSeries Zf = simulate_twoscale(tp, z0, fine, seed);
    Matrix Z(2, static_cast<Index>(grid.n_steps() + 1));
    for (std::size_t k = 0; k <= grid.n_steps(); ++k)
      Z.col(static_cast<Index>(k)) = Zf.values().col(static_cast<Index>(k * sub));
    PathSeries Zp(grid, std::move(Z));
    PathSeries Y = observe_path(Zp, Rs, seed);
    return {std::move(Y), std::move(Zp), std::nullopt};
  }
  // Physical (eps > 0) or mathematical (eps = 0) Brownian motion driver.
  const PhysicalBM pbm = simulate_physical_bm(c.gamma, c.epsilon, grid, seed, c.sim_substeps);
  auto dd = driven_parameter_model(c.theta_true, *em.drift, steps_of(pbm.w_eps), 1.0, Rs, grid,
                                   seed, z0);
  if (c.experiment == "chaos" && c.mollify > 1) {
    // Moving average over a centred window, then re-anchored at zero.
    const Index n = static_cast<Index>(grid.n_steps()), w = static_cast<Index>(c.mollify);
    Matrix S(2, n + 1);
    for (Index k = 0; k <= n; ++k) {
      const Index a = std::max<Index>(0, k - w / 2), b = std::min<Index>(n, k + w / 2);
      S.col(k) = dd.Y.values().middleCols(a, b - a + 1).rowwise().mean();
    }
    S.colwise() -= Vector(S.col(0));
    return {PathSeries(grid, std::move(S)), dd.Z, pbm.w_eps};
  }
  return {dd.Y, dd.Z, pbm.w_eps};
}

inline LiftedSeries build_lift(const ExperimentConfig& c, const PathSeries& Y) {
  return subsampled_lift(Y, c.skew_mode == SkewMode::subsample ? c.tau : 1);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunResult {
  RunRecord record;
  std::optional<KalmanBucyPath> kb;  ///< linear_gaussian_check only
  std::vector<std::string> warnings;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::filesystem::path dir;
  std::vector<RunResult> runs;
  std::vector<ChaosRow> chaos;
  std::vector<LagRow> lags;
  bool any_diverged = false;
};

inline RunResult run_single(const ExperimentConfig& c, const ExperimentModel& em, std::size_t r) {
  RunResult out;
  RunData data = generate_data(c, r, em);
  const LiftedSeries lift = build_lift(c, data.Y);
  RunOptions opt;
  opt.record_every = c.record_every;
  out.record = run_filter(em.model, em.prior, lift, c.N, c.seed_base + r, c.scheme, opt);
  out.record.config_hash = c.hash;
  if (c.experiment == "linear_gaussian_check") {
    const Matrix I = Matrix::Identity(2, 2);
    out.kb = kalman_bucy_reference(-I, I, I, Matrix::Zero(2, 2), c.R * I, em.prior.mean,
                                   em.prior.cov, data.Y);
  }
  return out;
}

namespace detail {

template <typename F>
auto parallel_map(std::size_t n, std::size_t threads, F&& f) {
  using R = decltype(f(std::size_t{0}));
  std::vector<R> out(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (std::size_t t = 0; t < threads; ++t)
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) out[i] = f(i);
    }));
  for (auto& w : workers) w.get();
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_meta(const std::filesystem::path& dir, const ExperimentConfig& c, bool diverged) {
  io::write_json(dir / "meta.json", io::json{{"config", c.normalized},
                                              {"config_hash", c.hash},
                                              {"warnings", c.warnings},
                                              {"diverged", diverged},
                                              {"timestamp", utc_timestamp()}});
}

}  // namespace detail

inline std::filesystem::path output_dir(const ExperimentConfig& c) {
  return std::filesystem::path(c.output) / c.experiment / c.hash;
}

/// Runs every seed, writes run_<r>.csv, aggregate.csv and meta.json (plus
/// experiment-specific tables) and returns the in-memory results.
inline ExperimentResult run_experiment(const ExperimentConfig& c, bool write = true) {
  for (const auto& w : c.warnings) warn(w);
  ExperimentResult res;
  res.config = c;
  res.dir = output_dir(c);
  const ExperimentModel em = build_model(c);

  if (c.experiment == "lag_diagnostics") {
    std::vector<SubsampleLag> lags;
    for (auto t : c.taus) lags.emplace_back(t);
    const RunData data = generate_data(c, 0, em);
    res.lags = lag_diagnostics(data.Y, lags);
    if (write) {
      io::write_lag_table(res.dir / "lag.csv", res.lags);
      io::write_area_overlay(res.dir / "area_overlay.csv", data.Y, SubsampleLag(c.tau));
      detail::write_meta(res.dir, c, false);
    }
    return res;
  }

  if (c.experiment == "chaos") {
    ChaosConfig cc;
    cc.counts = c.counts;
    cc.n_ref = c.n_ref;
    cc.rho = c.rho;
    cc.seed_base = c.seed_base;
    cc.n_seeds = c.n_runs;
    cc.scheme = c.scheme;
    cc.model = em.model;
    cc.prior = em.prior;
    for (std::size_t s = 0; s < c.n_runs; ++s) {
      const RunData data = generate_data(c, s, em);
      cc.lift = std::make_shared<const LiftedSeries>(build_lift(c, data.Y));
      cc.seed_base = c.seed_base + s;
      cc.n_seeds = 1;
      const auto rows = chaos_experiment(cc);
      res.chaos.insert(res.chaos.end(), rows.begin(), rows.end());
    }
    if (write) {
      io::write_chaos_table(res.dir / "chaos.csv", res.chaos);
      detail::write_meta(res.dir, c, false);
    }
    return res;
  }

  res.runs = detail::parallel_map(c.n_runs, c.threads, [&](std::size_t r) { return run_single(c, em, r); });
  for (const auto& r : res.runs) res.any_diverged = res.any_diverged || r.record.any_diverged();
  if (!write) return res;

  for (std::size_t r = 0; r < res.runs.size(); ++r)
    io::write_run_record(res.dir / ("run_" + std::to_string(r) + ".csv"), res.runs[r].record,
                         io::json{{"experiment", c.experiment}, {"run", r}});

  // Across-run mean of the recorded means; rows are aligned by index and
  // stop at the shortest run (a diverged run ends early).
  std::size_t rows = res.runs.front().record.rows();
  for (const auto& r : res.runs) rows = std::min(rows, r.record.rows());
  const Index D = em.model->state_dim();
  std::vector<std::string> header{"t"};
  for (auto& h : io::numbered("mean_", D)) header.push_back(h);
  const bool kb = c.experiment == "linear_gaussian_check";
  if (kb) {
    for (auto& h : io::numbered("kb_mean_", D)) header.push_back(h);
    for (auto& h : io::numbered("kb_var_", D)) header.push_back(h);
  }
  io::CsvWriter agg(res.dir / "aggregate.csv", header);
  const double n = static_cast<double>(res.runs.size());
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> row{res.runs.front().record.t[i]};
    Vector m = Vector::Zero(D);
    for (const auto& r : res.runs) m += r.record.mean[i];
    m /= n;
    for (Index k = 0; k < D; ++k) row.push_back(m(k));
    if (kb) {
      const auto step = static_cast<Index>(std::llround(res.runs.front().record.t[i] / c.dt));
      Vector km = Vector::Zero(D), kv = Vector::Zero(D);
      for (const auto& r : res.runs) {
        km += r.kb->means.col(step);
        kv += r.kb->covs[static_cast<std::size_t>(step)].diagonal();
      }
      km /= n;
      kv /= n;
      for (Index k = 0; k < D; ++k) row.push_back(km(k));
      for (Index k = 0; k < D; ++k) row.push_back(kv(k));
    }
    agg.row(row);
  }
  detail::write_meta(res.dir, c, res.any_diverged);
  return res;
}

/// A single object runs once; an array runs every entry (a sweep).
inline std::vector<ExperimentConfig> load_configs(const std::filesystem::path& path, Profile profile) {
  io::json j;
  try {
    j = io::read_json(path);
  } catch (const io::json::exception& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  } catch (const io::IoError& e) {
    throw ConfigError({e.what()});
  }
  std::vector<ExperimentConfig> out;
  if (j.is_array()) {
    std::vector<std::string> errs;
    for (std::size_t i = 0; i < j.size(); ++i) {
      try {
        out.push_back(validate_config(j[i], profile));
      } catch (const ConfigError& e) {
        for (const auto& p : e.problems()) errs.push_back("[" + std::to_string(i) + "] " + p);
      }
    }
    if (!errs.empty()) throw ConfigError(errs);
    return out;
  }
  out.push_back(validate_config(j, profile));
  return out;
}

}  // namespace rpenkf
