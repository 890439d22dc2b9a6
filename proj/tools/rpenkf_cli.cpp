// rpenkf: data generation, lifting, filtering and experiment driver.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 when the only failure is a diverged filter run.

#include "rpenkf/rpenkf.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace rpenkf;
using io::json;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;

struct Common {
  std::string config;
  std::string out;
  std::string profile;  ///< empty: the file's profile, else desk
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
  auto* opt = app->add_option("--config", c.config, "JSON config (object or list of objects)");
  if (config_required) opt->required();
  app->add_option("--out", c.out, "output root directory");
  app->add_option("--profile", c.profile, "parameter profile")->check(CLI::IsMember({"desk", "paper"}));
  app->add_option("--seed", c.seed, "base seed");
}

/// Reads the config file, applies command-line overrides and validates.
std::vector<ExperimentConfig> configs_from(const Common& c, const char* force_experiment = nullptr) {
  json j;
  try {
    j = io::read_json(c.config);
  } catch (const json::exception& e) {
    throw ConfigError({c.config + ": " + e.what()});
  } catch (const io::IoError& e) {
    throw ConfigError({e.what()});
  }
  auto patch = [&](json& one) {
    if (!one.is_object()) return;
    if (!c.out.empty()) one["output"] = c.out;
    if (c.seed) one["seed_base"] = *c.seed;
    if (!c.profile.empty()) one["profile"] = c.profile;
    if (force_experiment) one["experiment"] = force_experiment;
  };
  std::vector<ExperimentConfig> out;
  std::vector<std::string> errs;
  std::vector<json> items = j.is_array() ? j.get<std::vector<json>>() : std::vector<json>{j};
  for (std::size_t i = 0; i < items.size(); ++i) {
    patch(items[i]);
    try {
      out.push_back(validate_config(items[i], Profile::desk));
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems())
        errs.push_back(items.size() > 1 ? "[" + std::to_string(i) + "] " + p : p);
    }
  }
  if (!errs.empty()) throw ConfigError(errs);
  return out;
}

int cmd_generate(const Common& c) {
  for (const auto& cfg : configs_from(c)) {
    const ExperimentModel em = build_model(cfg);
    const auto dir = output_dir(cfg) / "data";
    for (std::size_t r = 0; r < cfg.n_runs; ++r) {
      const RunData d = generate_data(cfg, r, em);
      const std::string stem = "run_" + std::to_string(r);
      io::write_trajectory(dir / (stem + "_Y.csv"), d.Y, "y_");
      if (d.Z) io::write_trajectory(dir / (stem + "_Z.csv"), *d.Z, "z_");
      if (d.driver) io::write_trajectory(dir / (stem + "_driver.csv"), *d.driver, "w_");
    }
    std::cout << dir.string() << '\n';
  }
  return kOk;
}

int cmd_lift(const Common& c, const std::string& input, std::size_t tau, const std::string& out) {
  if (!input.empty()) {
    if (tau == 0) throw ConfigError({"--tau: required with --input"});
    const PathSeries Y = io::read_trajectory(input);
    const std::string target = out.empty() ? "lift.csv" : out;
    io::write_lift(target, subsampled_lift(Y, tau));
    std::cout << target << '\n';
    return kOk;
  }
  if (c.config.empty()) throw ConfigError({"lift: either --config or --input is required"});
  for (const auto& cfg : configs_from(c)) {
    const ExperimentModel em = build_model(cfg);
    const auto dir = output_dir(cfg) / "lift";
    for (std::size_t r = 0; r < cfg.n_runs; ++r) {
      const RunData d = generate_data(cfg, r, em);
      io::write_lift(dir / ("run_" + std::to_string(r) + ".csv"), build_lift(cfg, d.Y));
    }
    std::cout << dir.string() << '\n';
  }
  return kOk;
}

int cmd_filter(const Common& c, const std::string& lift_path) {
  bool diverged = false;
  for (const auto& cfg : configs_from(c)) {
    if (cfg.experiment == "chaos" || cfg.experiment == "lag_diagnostics")
      throw ConfigError({"experiment: filter needs a filtering experiment, got '" + cfg.experiment + "'"});
    if (lift_path.empty()) {
      const auto res = run_experiment(cfg);
      diverged = diverged || res.any_diverged;
      std::cout << res.dir.string() << '\n';
      continue;
    }
    const LiftedSeries lift = io::read_lift(lift_path);
    const ExperimentModel em = build_model(cfg);
    RunOptions opt;
    opt.record_every = cfg.record_every;
    RunRecord rec = run_filter(em.model, em.prior, lift, cfg.N, cfg.seed_base, cfg.scheme, opt);
    rec.config_hash = cfg.hash;
    const auto target = output_dir(cfg) / "filter.csv";
    io::write_run_record(target, rec, json{{"experiment", cfg.experiment}, {"lift", lift_path}});
    diverged = diverged || rec.any_diverged();
    std::cout << target.string() << '\n';
  }
  return diverged ? kDiverged : kOk;
}

int cmd_experiment(const Common& c, const char* force = nullptr) {
  bool diverged = false;
  for (const auto& cfg : configs_from(c, force)) {
    const auto res = run_experiment(cfg);
    diverged = diverged || res.any_diverged;
    if (cfg.experiment == "chaos")
      for (const auto& s : summarize_chaos(res.chaos))
        std::cout << "N=" << s.N << " t=" << s.t << " coupled=" << s.median_discrepancy
                  << " wass=" << s.median_wass.transpose() << '\n';
    if (cfg.experiment == "lag_diagnostics")
      for (const auto& r : res.lags)
        std::cout << "tau=" << r.tau << " path_l2=" << r.path_l2 << " area_l2=" << r.area_l2 << '\n';
    for (std::size_t r = 0; r < res.runs.size(); ++r) {
      const auto& rec = res.runs[r].record;
      std::cout << "run " << r << ": terminal mean " << rec.mean.back().transpose()
                << (rec.any_diverged() ? " (diverged)" : "") << '\n';
    }
    std::cout << res.dir.string() << '\n';
  }
  return diverged ? kDiverged : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rough-path ensemble Kalman filtering"};
  app.require_subcommand(1);

  Common gen, lift, filt, exp, lag, chaos;
  auto* g = app.add_subcommand("generate", "simulate signal and observation paths");
  add_common(g, gen);

  auto* l = app.add_subcommand("lift", "build second-order lifts from observation paths");
  add_common(l, lift, false);
  std::string lift_input, lift_out;
  std::size_t lift_tau = 0;
  l->add_option("--input", lift_input, "trajectory CSV to lift instead of generated data");
  l->add_option("--tau", lift_tau, "subsampling lag in steps")->check(CLI::PositiveNumber);
  l->add_option("--lift-out", lift_out, "lift CSV written for --input");

  auto* f = app.add_subcommand("filter", "run the filter on generated data or a cached lift");
  add_common(f, filt);
  std::string lift_path;
  f->add_option("--lift", lift_path, "lift CSV to filter");

  auto* e = app.add_subcommand("experiment", "run a configured experiment or sweep");
  add_common(e, exp);
  auto* d = app.add_subcommand("diagnose-lag", "lag diagnostics for the configured data");
  add_common(d, lag);
  auto* c = app.add_subcommand("chaos", "propagation-of-chaos measurement");
  add_common(c, chaos);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*l) return cmd_lift(lift, lift_input, lift_tau, lift_out);
    if (*f) return cmd_filter(filt, lift_path);
    if (*e) return cmd_experiment(exp);
    if (*d) return cmd_experiment(lag, "lag_diagnostics");
    if (*c) return cmd_experiment(chaos, "chaos");
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kConfigError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
