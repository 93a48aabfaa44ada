#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "exitflow/domain.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/flow.hpp"
#include "exitflow/grid_function.hpp"
#include "exitflow/pde.hpp"
#include "exitflow/stochastic.hpp"
#include "exitflow/verification.hpp"

namespace exitflow::io {

/// Shortest round-trip decimal form.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : "none"; }

/// Six significant digits, for human-readable text.
inline std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigurationError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigurationError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- trajectories and exits

/// Columns t, y1..yn, g(y) at every accepted step end (and the start).
inline std::string trajectory_csv(const Trajectory& traj, const Domain& domain) {
  std::ostringstream os;
  const int n = traj.field().dim();
  os << "t";
  for (int d = 1; d <= n; ++d) os << ",y" << d;
  os << ",g\n";
  const auto times = traj.times();
  const auto states = traj.states();
  for (std::size_t k = 0; k < times.size(); ++k) {
    os << num(times[k]);
    for (int d = 0; d < n; ++d) os << ',' << num(states[k][d]);
    os << ',' << num(domain.level(states[k])) << '\n';
  }
  return os.str();
}

/// Columns x1..xn, s, tau_open, tau_closed, tau, kind, tangency; "none"
/// encodes an exit that does not happen before the horizon.
inline std::string exits_csv(const std::vector<ExitRecord>& records, int dim) {
  std::ostringstream os;
  for (int d = 1; d <= dim; ++d) os << 'x' << d << ',';
  os << "s,tau_open,tau_closed,tau,kind,tangency\n";
  for (const auto& r : records) {
    for (int d = 0; d < dim; ++d) os << num(r.start[d]) << ',';
    os << num(r.start_time) << ',' << num(r.open_exit) << ',' << num(r.closed_exit) << ',' << num(r.tau) << ','
       << to_string(r.kind) << ',' << num(r.tangency) << '\n';
  }
  return os.str();
}

// --- grid functions

/// Columns x1..xn, value, mask over every cell in storage order.
inline std::string grid_csv(const GridFunction& g) {
  std::ostringstream os;
  const Grid& grid = g.grid();
  for (int d = 1; d <= grid.dim(); ++d) os << 'x' << d << ',';
  os << "value,mask\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec c = grid.center(i);
    for (int d = 0; d < grid.dim(); ++d) os << num(c[d]) << ',';
    os << num(g[i]) << ',' << (g.active(i) ? 1 : 0) << '\n';
  }
  return os.str();
}

inline constexpr char kGridMagic[8] = {'E', 'X', 'F', 'G', 'R', 'I', 'D', '1'};

/// Binary dump, native little-endian:
///   8-byte magic "EXFGRID1", uint32 dim, 3 x float64 origin,
///   float64 spacing, 3 x uint64 counts, size x float64 values (row-major,
///   last axis fastest), size x uint8 mask.
inline std::string grid_binary(const GridFunction& g) {
  const Grid& grid = g.grid();
  std::string out(kGridMagic, sizeof kGridMagic);
  auto put = [&out](const auto& v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(static_cast<std::uint32_t>(grid.dim()));
  const Vec o = grid.origin();
  for (int d = 0; d < kMaxDim; ++d) put(d < grid.dim() ? o[d] : 0.0);
  put(grid.spacing());
  for (int d = 0; d < kMaxDim; ++d) put(static_cast<std::uint64_t>(grid.count(d)));
  for (double v : g.values()) put(v);
  for (std::uint8_t m : g.mask()) put(m);
  return out;
}

inline GridFunction read_grid_binary(const std::string& bytes) {
  std::size_t pos = 0;
  auto take = [&](auto& v) {
    if (pos + sizeof v > bytes.size()) throw ShapeError("truncated grid dump");
    std::memcpy(&v, bytes.data() + pos, sizeof v);
    pos += sizeof v;
  };
  if (bytes.size() < sizeof kGridMagic || std::memcmp(bytes.data(), kGridMagic, sizeof kGridMagic) != 0) {
    throw ShapeError("not a grid dump");
  }
  pos = sizeof kGridMagic;
  std::uint32_t dim = 0;
  take(dim);
  if (dim < 1 || dim > static_cast<std::uint32_t>(kMaxDim)) throw ShapeError("grid dump has a bad dimension");
  std::array<double, kMaxDim> origin{};
  for (double& v : origin) take(v);
  double spacing = 0.0;
  take(spacing);
  Grid::Index counts{};
  for (auto& c : counts) {
    std::uint64_t v = 0;
    take(v);
    c = static_cast<std::size_t>(v);
  }
  Vec o(static_cast<int>(dim));
  for (std::uint32_t d = 0; d < dim; ++d) o[d] = origin[d];
  const Grid grid(static_cast<int>(dim), o, spacing, counts);
  std::vector<double> values(grid.size());
  for (double& v : values) take(v);
  std::vector<std::uint8_t> mask(grid.size());
  for (auto& m : mask) take(m);
  if (pos != bytes.size()) throw ShapeError("trailing bytes after grid dump");
  return GridFunction(grid, std::move(mask), std::move(values));
}

/// One binary file per kept node plus index.csv (node, t, file).
inline std::vector<std::filesystem::path> write_grid_stack(const std::filesystem::path& dir, const GridFamily& family) {
  std::filesystem::create_directories(dir);
  std::ostringstream index;
  index << "node,t,file\n";
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 0; k < family.times.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "node_%06zu.bin", k);
    write_file_atomic(dir / name, grid_binary(family.values[k]));
    written.push_back(dir / name);
    index << k << ',' << num(family.times[k]) << ',' << name << '\n';
  }
  write_file_atomic(dir / "index.csv", index.str());
  written.push_back(dir / "index.csv");
  return written;
}

// --- ensembles and reports

inline std::string ensemble_csv(const std::vector<McEstimate>& rows) {
  std::ostringstream os;
  os << "target,eps,N,dt,estimate,stderr,seed\n";
  for (const auto& e : rows) {
    os << csv_field(e.target) << ',' << num(e.eps) << ',' << e.samples << ',' << num(e.dt) << ',' << num(e.mean)
       << ',' << num(e.std_error) << ',' << e.seed << '\n';
  }
  return os.str();
}

inline std::string report_csv(const std::vector<CheckReport>& reports) {
  std::ostringstream os;
  os << "check,scenario,measure,value,relation,limit,ok\n";
  for (const auto& r : reports) {
    for (const auto& m : r.measures) {
      os << csv_field(r.check) << ',' << csv_field(r.scenario) << ',' << csv_field(m.name) << ',' << num(m.value)
         << ',' << to_string(m.relation) << ',' << num(m.limit) << ',' << (m.ok() ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

inline std::string table_csv(const RefinementTable& table) {
  std::ostringstream os;
  for (std::size_t i = 0; i < table.columns.size(); ++i) os << (i ? "," : "") << csv_field(table.columns[i]);
  os << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << num(row[i]);
    os << '\n';
  }
  return os.str();
}

/// Human-readable summary: one line per check, failing measures indented.
inline std::string summary(const std::vector<CheckReport>& reports) {
  std::ostringstream os;
  std::size_t failed = 0;
  for (const auto& r : reports) {
    os << (r.passed() ? "PASS " : "FAIL ") << r.check << " [" << r.scenario << "]\n";
    for (const auto& m : r.measures) {
      if (m.relation == Relation::info) continue;
      os << "    " << (m.ok() ? "ok  " : "BAD ") << m.name << " = " << brief(m.value) << ' ' << to_string(m.relation)
         << ' ' << brief(m.limit) << '\n';
    }
    for (const auto& n : r.notes) os << "    note: " << n << '\n';
    if (!r.passed()) ++failed;
  }
  os << reports.size() - failed << '/' << reports.size() << " checks passed\n";
  return os.str();
}

}  // namespace exitflow::io
