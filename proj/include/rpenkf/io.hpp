#pragma once

// CSV and JSON persistence. Numbers are written in the shortest form that
// round-trips, so reruns with identical inputs give identical bytes.

#include "rpenkf/liftestim.hpp"
#include "rpenkf/mckvlasov.hpp"

#include "json.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rpenkf::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

inline void write_json(const fs::path& path, const json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return json::parse(is);
}

/// Sidecar for `x.csv` is `x.json`.
inline fs::path sidecar(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".json");
  return p;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : os_(open_out(path)) {
    for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
    os_ << '\n';
  }
  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) os_ << (i ? "," : "") << fmt(values[i]);
    os_ << '\n';
  }

 private:
  std::ofstream os_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": empty file");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != t.header.size())
      throw IoError(path.string() + ": row has " + std::to_string(row.size()) + " cells, header has " +
                    std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::vector<std::string> numbered(const std::string& stem, Index n) {
  std::vector<std::string> out;
  for (Index i = 1; i <= n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// Lift cache
// ---------------------------------------------------------------------------

/// `k,dY_1..dY_d,L_11..L_dd` with second-order entries in row-major order.
inline void write_lift(const fs::path& csv, const LiftedSeries& lift) {
  const Index d = lift.dim();
  std::vector<std::string> header{"k"};
  for (auto& h : numbered("dY_", d)) header.push_back(h);
  for (Index i = 1; i <= d; ++i)
    for (Index j = 1; j <= d; ++j) header.push_back("L_" + std::to_string(i) + std::to_string(j));
  CsvWriter w(csv, header);
  for (std::size_t k = 0; k < lift.n_steps(); ++k) {
    std::vector<double> row{static_cast<double>(k)};
    const Vector dy = lift.increment(k);
    for (Index i = 0; i < d; ++i) row.push_back(dy(i));
    const auto L = lift.second_order(k);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) row.push_back(L(i, j));
    w.row(row);
  }
  const Vector y0 = lift.path().value(0);
  write_json(sidecar(csv), json{{"dt", lift.grid().dt()},
                                {"n_steps", lift.n_steps()},
                                {"d", d},
                                {"y0", std::vector<double>(y0.data(), y0.data() + d)}});
}

inline LiftedSeries read_lift(const fs::path& csv) {
  const json meta = read_json(sidecar(csv));
  const double dt = meta.at("dt").get<double>();
  const auto n = meta.at("n_steps").get<std::size_t>();
  const auto d = meta.at("d").get<Index>();
  Vector y0 = Vector::Zero(d);
  if (meta.contains("y0")) {
    const auto v = meta.at("y0").get<std::vector<double>>();
    if (static_cast<Index>(v.size()) != d) throw IoError("lift sidecar: y0 has wrong length");
    y0 = Eigen::Map<const Vector>(v.data(), d);
  }
  const CsvTable t = read_csv(csv);
  if (t.header.size() != static_cast<std::size_t>(1 + d + d * d) || t.rows.size() != n)
    throw IoError(csv.string() + ": shape does not match sidecar");
  Matrix Y(d, static_cast<Index>(n + 1));
  Matrix second(d * d, static_cast<Index>(n));
  Y.col(0) = y0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& r = t.rows[k];
    const Index kk = static_cast<Index>(k);
    for (Index i = 0; i < d; ++i) Y(i, kk + 1) = Y(i, kk) + r[static_cast<std::size_t>(1 + i)];
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j)
        second(i + d * j, kk) = r[static_cast<std::size_t>(1 + d + i * d + j)];
  }
  return LiftedSeries(PathSeries(TimeGrid(dt, n), std::move(Y)), std::move(second));
}

// ---------------------------------------------------------------------------
// Paths and records
// ---------------------------------------------------------------------------

/// `t,x_1..x_D`.
inline void write_trajectory(const fs::path& csv, const PathSeries& path,
                             const std::string& stem = "x_") {
  std::vector<std::string> header{"t"};
  for (auto& h : numbered(stem, path.dim())) header.push_back(h);
  CsvWriter w(csv, header);
  for (std::size_t k = 0; k <= path.n_steps(); ++k) {
    std::vector<double> row{path.grid().time(k)};
    const auto v = path.value(k);
    for (Index i = 0; i < path.dim(); ++i) row.push_back(v(i));
    w.row(row);
  }
  write_json(sidecar(csv), json{{"dt", path.grid().dt()}, {"n_steps", path.n_steps()}, {"d", path.dim()}});
}

inline PathSeries read_trajectory(const fs::path& csv) {
  const CsvTable t = read_csv(csv);
  if (t.rows.size() < 2) throw IoError(csv.string() + ": need at least two samples");
  const Index d = static_cast<Index>(t.header.size()) - 1;
  const double dt = t.rows[1][0] - t.rows[0][0];
  double dt_meta = dt;
  if (fs::exists(sidecar(csv))) dt_meta = read_json(sidecar(csv)).at("dt").get<double>();
  Matrix Y(d, static_cast<Index>(t.rows.size()));
  for (std::size_t k = 0; k < t.rows.size(); ++k)
    for (Index i = 0; i < d; ++i) Y(i, static_cast<Index>(k)) = t.rows[k][static_cast<std::size_t>(i + 1)];
  return PathSeries(TimeGrid(dt_meta, t.rows.size() - 1), std::move(Y));
}

/// `t,mean_1..mean_D,var_theta_1..var_theta_p,diverged`.
inline void write_run_record(const fs::path& csv, const RunRecord& rec, const json& meta = {}) {
  if (rec.rows() == 0) throw IoError("write_run_record: empty record");
  const Index D = rec.mean.front().size(), p = rec.var_theta.front().size();
  std::vector<std::string> header{"t"};
  for (auto& h : numbered("mean_", D)) header.push_back(h);
  for (auto& h : numbered("var_theta_", p)) header.push_back(h);
  header.push_back("diverged");
  CsvWriter w(csv, header);
  for (std::size_t r = 0; r < rec.rows(); ++r) {
    std::vector<double> row{rec.t[r]};
    for (Index i = 0; i < D; ++i) row.push_back(rec.mean[r](i));
    for (Index i = 0; i < p; ++i) row.push_back(rec.var_theta[r](i));
    row.push_back(rec.diverged[r]);
    w.row(row);
  }
  json m = meta.is_null() ? json::object() : meta;
  m["seed"] = rec.seed;
  m["config_hash"] = rec.config_hash;
  m["diverged"] = rec.any_diverged();
  write_json(sidecar(csv), m);
}

/// `tau,path_l2,area_l2`.
inline void write_lag_table(const fs::path& csv, const std::vector<LagRow>& rows) {
  CsvWriter w(csv, {"tau", "path_l2", "area_l2"});
  for (const auto& r : rows) w.row({static_cast<double>(r.tau), r.path_l2, r.area_l2});
}

/// `N,t,coupled_discrepancy,wass_theta_1..wass_theta_p,seed`.
inline void write_chaos_table(const fs::path& csv, const std::vector<ChaosRow>& rows) {
  const Index p = rows.empty() ? 1 : rows.front().wass_theta.size();
  std::vector<std::string> header{"N", "t", "coupled_discrepancy"};
  for (auto& h : numbered("wass_theta_", p)) header.push_back(h);
  header.push_back("seed");
  CsvWriter w(csv, header);
  for (const auto& r : rows) {
    std::vector<double> row{static_cast<double>(r.N), r.t, r.coupled_discrepancy};
    for (Index j = 0; j < p; ++j) row.push_back(r.wass_theta(j));
    row.push_back(static_cast<double>(r.seed));
    w.row(row);
  }
}

/// `t,area_fine,area_subsampled,difference` for the (i, j) component.
inline void write_area_overlay(const fs::path& csv, const PathSeries& path, SubsampleLag lag,
                               Index i = 0, Index j = 1) {
  const AreaProcess fine = area_process(path);
  const AreaProcess coarse = area_process(subsample_interpolate(path, lag));
  CsvWriter w(csv, {"t", "area_fine", "area_subsampled", "difference"});
  for (std::size_t k = 0; k <= path.n_steps(); ++k) {
    const double a = fine.component(k, i, j), b = coarse.component(k, i, j);
    w.row({path.grid().time(k), a, b, a - b});
  }
}

}  // namespace rpenkf::io
