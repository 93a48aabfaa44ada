#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "exitflow/io.hpp"
#include "exitflow/scenarios.hpp"
#include "exitflow/verification.hpp"

namespace exitflow::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kOutputRootEnv = "EXITFLOW_OUTPUT_ROOT";

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw ConfigurationError("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

/// Real number or fraction "a/b".
inline double parse_real(const std::string& text, const std::string& key) {
  const auto slash = text.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else {
      const double a = std::stod(text.substr(0, slash), &used);
      if (used == slash) {
        const std::string rest = text.substr(slash + 1);
        const double b = std::stod(rest, &used);
        if (used == rest.size() && b != 0.0) return a / b;
      }
    }
  } catch (const std::exception&) {
  }
  throw ConfigurationError("key '" + key + "': '" + text + "' is not a number");
}

/// Resolved parameters of one CLI invocation.
struct ExperimentConfig {
  std::string command;
  std::string scenario_name;
  std::optional<config::Tree> scenario_tree;  ///< Scenario sections from a config file.
  std::vector<std::string> starts;
  double s = 0.0;
  std::optional<double> horizon;
  std::optional<double> until;
  double h = 1.0 / 256;
  double dt = 0.0;
  double mc_dt = 1e-3;
  std::vector<double> eps{0.0};
  std::size_t samples = 1000;
  std::size_t tangency_samples = 10000;
  std::uint64_t seed = 1;
  fs::path out;
  std::vector<std::string> checks;
  bool checks_given = false;
  std::size_t workers = 0;
  std::size_t dump_every = 0;
  std::string rho_spec;
  std::string sweep_param;
  std::vector<double> sweep_values;
  fs::path input;

  Scenario scenario() const {
    if (!scenario_name.empty()) return builtin_scenario(scenario_name);
    if (scenario_tree) return config::parse_scenario(*scenario_tree);
    throw ConfigurationError("missing key 'scenario': pass --scenario NAME or a config with a scenario");
  }

  /// Enforces positivity and orders the eps list descending.
  void validate() {
    if (!(h > 0.0)) throw ConfigurationError("key 'h' must be positive");
    if (!(dt >= 0.0)) throw ConfigurationError("key 'dt' must be nonnegative (0 selects the CFL step)");
    if (!(mc_dt > 0.0)) throw ConfigurationError("key 'mc-dt' must be positive");
    if (samples < 2) throw ConfigurationError("key 'N' must be at least 2");
    if (tangency_samples < 1) throw ConfigurationError("key 'samples' must be positive");
    if (!(s >= 0.0)) throw ConfigurationError("key 's' must be nonnegative");
    if (horizon && !(*horizon > 0.0)) throw ConfigurationError("key 'T' must be positive");
    if (until && !(*until >= s)) throw ConfigurationError("key 't' must be at least s");
    for (double e : eps) {
      if (!(e >= 0.0)) throw ConfigurationError("key 'eps' must be nonnegative");
    }
    std::sort(eps.begin(), eps.end(), std::greater<>());
    eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
    if (eps.empty()) eps.push_back(0.0);
  }
};

inline Vec parse_point(const std::string& text, int dim) {
  const auto list = config::parse_list(text, "x");
  if (static_cast<int>(list.size()) != dim) {
    throw ConfigurationError("key 'x': point '" + text + "' needs " + std::to_string(dim) + " components");
  }
  Vec v(dim);
  for (int d = 0; d < dim; ++d) v[d] = list[static_cast<std::size_t>(d)];
  return v;
}

inline fs::path default_output(const std::string& command, const std::string& label) {
  const char* root = std::getenv(kOutputRootEnv);
  const fs::path base = (root && *root) ? fs::path(root) : fs::path("exitflow-out");
  return base / (command + "-" + label);
}

/// Collects files written by a command for the manifest.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  const fs::path& dir() const { return dir_; }

  void write(const std::string& relative, const std::string& content) {
    io::write_file_atomic(dir_ / relative, content);
    files_.emplace_back(relative, sha256_hex(content));
  }

  void adopt(const fs::path& absolute) {
    files_.emplace_back(fs::relative(absolute, dir_).generic_string(), sha256_hex(io::read_file(absolute)));
  }

  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

/// INI manifest: the resolved [run] keys and scenario, usable as --config
/// to rerun, plus digests of every output.
inline std::string manifest(const ExperimentConfig& cfg, const OutputSet& outputs) {
  std::ostringstream os;
  auto list = [](const std::vector<double>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + io::num(xs[i]);
    return s;
  };
  os << "[run]\n";
  os << "command = " << cfg.command << '\n';
  for (std::size_t i = 0; i < cfg.starts.size(); ++i) os << (i ? "; " : "x = ") << cfg.starts[i];
  if (!cfg.starts.empty()) os << '\n';
  os << "s = " << io::num(cfg.s) << '\n';
  if (cfg.horizon) os << "T = " << io::num(*cfg.horizon) << '\n';
  if (cfg.until) os << "t = " << io::num(*cfg.until) << '\n';
  os << "h = " << io::num(cfg.h) << '\n';
  os << "dt = " << io::num(cfg.dt) << '\n';
  os << "mc-dt = " << io::num(cfg.mc_dt) << '\n';
  os << "eps = " << list(cfg.eps) << '\n';
  os << "N = " << cfg.samples << '\n';
  if (cfg.command == "verify") os << "samples = " << cfg.tangency_samples << '\n';
  os << "seed = " << cfg.seed << '\n';
  if (!cfg.rho_spec.empty()) os << "rho = " << cfg.rho_spec << '\n';
  if (cfg.dump_every) os << "dump-every = " << cfg.dump_every << '\n';
  if (cfg.checks_given) {
    os << "check = ";
    for (std::size_t i = 0; i < cfg.checks.size(); ++i) os << (i ? "," : "") << cfg.checks[i];
    os << '\n';
  }
  if (!cfg.sweep_param.empty()) os << "param = " << cfg.sweep_param << "\nvalues = " << list(cfg.sweep_values) << '\n';
  if (!cfg.scenario_name.empty()) {
    os << "\n[scenario]\nbase = " << cfg.scenario_name << '\n';
  } else if (cfg.scenario_tree) {
    std::ostringstream tree;
    boost::property_tree::ini_parser::write_ini(tree, *cfg.scenario_tree);
    os << '\n' << tree.str();
  }
  os << "\n[outputs]\n";
  for (const auto& [name, digest] : outputs.files()) os << name << " = sha256:" << digest << '\n';
  return os.str();
}

inline void finish(const ExperimentConfig& cfg, OutputSet& outputs) {
  io::write_file_atomic(outputs.dir() / "manifest.ini", manifest(cfg, outputs));
}

// ---------------------------------------------------------------------------
// simulate

inline int run_simulate(const ExperimentConfig& cfg, std::ostream& out) {
  const Scenario sc = cfg.scenario();
  const double T = cfg.horizon.value_or(sc.horizon);
  if (cfg.s > T) throw ConfigurationError("key 's' exceeds the horizon T");
  std::vector<Vec> starts;
  if (cfg.starts.empty()) {
    starts.push_back(0.5 * (sc.domain.lower() + sc.domain.upper()));
  } else {
    for (const auto& text : cfg.starts) starts.push_back(parse_point(text, sc.dim()));
  }
  OutputSet outputs(cfg.out.empty() ? default_output("simulate", sc.name) : cfg.out);
  std::vector<ExitRecord> records;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    if (!sc.domain.contains_closure(starts[k])) throw ConfigurationError("key 'x': start lies outside the closed domain");
    const Trajectory traj = integrate_flow(sc.field, starts[k], cfg.s, T);
    records.push_back(exit_times(traj, sc.domain));
    outputs.write("trajectory_" + std::to_string(k) + ".csv", io::trajectory_csv(traj, sc.domain));
  }
  outputs.write("exits.csv", io::exits_csv(records, sc.dim()));
  for (const auto& r : records) {
    out << "x=";
    for (int d = 0; d < sc.dim(); ++d) out << (d ? "," : "") << io::num(r.start[d]);
    out << " tau_open=" << io::num(r.open_exit) << " tau_closed=" << io::num(r.closed_exit)
        << " tau=" << io::num(r.tau) << " kind=" << to_string(r.kind) << '\n';
  }
  const bool noisy = std::any_of(cfg.eps.begin(), cfg.eps.end(), [](double e) { return e > 0.0; });
  if (noisy) {
    std::vector<McEstimate> rows;
    for (const Vec& x : starts) {
      if (!sc.domain.contains(x)) continue;
      for (double e : cfg.eps) {
        EnsembleConfig ec{e, cfg.mc_dt, cfg.samples, cfg.seed, cfg.workers};
        rows.push_back(mc_terminal(sc.field, sc.domain, sc.zeta, x, cfg.s, T, ec));
        rows.push_back(mc_integral(sc.field, sc.domain, sc.phi, x, cfg.s, T, ec));
      }
    }
    outputs.write("ensemble.csv", io::ensemble_csv(rows));
  }
  finish(cfg, outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// density

inline int run_density(const ExperimentConfig& cfg, std::ostream& out) {
  const Scenario sc = cfg.scenario();
  const double t = cfg.until.value_or(sc.horizon);
  DensityMatchOptions opts;
  opts.mc_dt = cfg.mc_dt;
  opts.scheme.dt = cfg.dt;
  opts.workers = cfg.workers;
  if (!cfg.rho_spec.empty()) opts.rho = config::parse_data(cfg.rho_spec, DataRole::density, sc.dim(), "rho");
  const double eps = cfg.eps.front();
  OutputSet outputs(cfg.out.empty() ? default_output("density", sc.name) : cfg.out);
  const DensityMatch m = density_match_full(sc, cfg.s, t, eps, cfg.h, cfg.samples, cfg.seed, opts);
  outputs.write("density_pde.csv", io::grid_csv(m.pde));
  outputs.write("density_pde.bin", io::grid_binary(m.pde));
  outputs.write("density_mc.csv", io::grid_csv(m.mc.density));
  outputs.write("density_mc.bin", io::grid_binary(m.mc.density));
  if (m.characteristics) {
    outputs.write("density_characteristics.csv", io::grid_csv(*m.characteristics));
    outputs.write("density_characteristics.bin", io::grid_binary(*m.characteristics));
  }
  if (cfg.dump_every > 0) {
    const ScalarData rho = opts.rho.value_or(sc.rho);
    const Grid grid = sc.domain.covering_grid(cfg.h);
    SchemeOptions scheme;
    scheme.dt = cfg.dt;
    scheme.horizon = std::max(t, sc.horizon);
    const auto fwd = make_operator(sc.field, sc.domain, grid, eps, Direction::forward, cfg.s, t, scheme);
    const GridFamily family = solve_forward(fwd, GridFunction::sample(grid, sc.domain, rho, cfg.s), cfg.dump_every);
    for (const auto& path : io::write_grid_stack(outputs.dir() / "stack_pde", family)) outputs.adopt(path);
  }
  const std::vector<CheckReport> reports{m.report};
  outputs.write("report.csv", io::report_csv(reports));
  const std::string text = io::summary(reports);
  outputs.write("summary.txt", text);
  out << text;
  finish(cfg, outputs);
  return m.report.passed() ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// verify

struct Job {
  std::string check;
  std::string scenario;
  std::function<CheckReport()> run;
};

inline const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names{"duality", "equivalence", "bounds", "density", "continuity", "tangency"};
  return names;
}

/// Refinement sequence ending at h.
inline std::vector<double> refinement(double h) { return {4.0 * h, 2.0 * h, h}; }

inline std::vector<Job> build_jobs(const ExperimentConfig& cfg) {
  std::vector<std::string> checks = cfg.checks_given ? cfg.checks : known_checks();
  checks.erase(std::remove(checks.begin(), checks.end(), std::string("none")), checks.end());
  for (const auto& c : checks) {
    if (std::find(known_checks().begin(), known_checks().end(), c) == known_checks().end()) {
      throw ConfigurationError("key 'check': unknown check '" + c + "'");
    }
  }
  const bool chosen = !cfg.scenario_name.empty() || cfg.scenario_tree.has_value();
  auto pick = [&](std::vector<std::string> defaults) {
    std::vector<std::function<Scenario()>> out;
    if (chosen) {
      out.push_back([&cfg] { return cfg.scenario(); });
    } else {
      for (const auto& n : defaults) out.push_back([n] { return builtin_scenario(n); });
    }
    return out;
  };
  const double eps = cfg.eps.front();
  std::vector<Job> jobs;
  for (const auto& check : checks) {
    if (check == "duality") {
      // Aligned grids hold the identity to round-off; a third-of-a-cell
      // shift exposes the convergence order of the characteristics side.
      for (const auto& make : pick({"const-drift"})) {
        for (const double offset : {0.0, 1.0 / 3.0}) {
          jobs.push_back({check, make().name, [&cfg, make, eps, offset] {
                            const Scenario sc = make();
                            DualityOptions o;
                            o.grid_offset = offset;
                            o.scheme.dt = cfg.dt;
                            o.functional.workers = cfg.workers;
                            const auto hs = refinement(cfg.h);
                            return duality_refinement(sc, cfg.s, cfg.horizon.value_or(sc.horizon), hs, eps, o);
                          }});
        }
      }
    } else if (check == "equivalence") {
      for (const auto& make : pick({"const-drift", "paper-cos"})) {
        jobs.push_back({check, make().name, [&cfg, make] {
                          const Scenario sc = make();
                          EquivalenceOptions o;
                          o.spacings = refinement(cfg.h);
                          o.scheme.dt = cfg.dt;
                          o.functional.workers = cfg.workers;
                          o.horizon = cfg.horizon;
                          if (sc.name == "paper-cos") {
                            if (!o.horizon) o.horizon = std::numbers::pi;
                            o.running = Expectation::order;
                          }
                          return equivalence_check(sc, cfg.s, o);
                        }});
      }
    } else if (check == "bounds") {
      for (const auto& make : pick(scenario_names())) {
        jobs.push_back({check, make().name, [&cfg, make, eps] {
                          const Scenario sc = make();
                          BoundOptions o;
                          o.h = cfg.h;
                          o.eps = eps;
                          o.scheme.dt = cfg.dt;
                          o.functional.workers = cfg.workers;
                          if (sc.name == "contracting") o.saturation_floor = 0.95;
                          return bound_check(sc, o);
                        }});
      }
    } else if (check == "density") {
      for (const auto& make : pick({"const-drift"})) {
        jobs.push_back({check, make().name, [&cfg, make, eps] {
                          const Scenario sc = make();
                          DensityMatchOptions o;
                          o.mc_dt = cfg.mc_dt;
                          o.scheme.dt = cfg.dt;
                          o.workers = cfg.workers;
                          if (!cfg.rho_spec.empty()) {
                            o.rho = config::parse_data(cfg.rho_spec, DataRole::density, sc.dim(), "rho");
                          } else if (sc.name == "const-drift") {
                            o.rho = data::box(DataRole::density, scalar_vec(-1.0), scalar_vec(0.0));
                          }
                          const double t = cfg.until.value_or(sc.name == "const-drift" ? 0.5 : sc.horizon);
                          return density_match(sc, cfg.s, t, eps, cfg.h, cfg.samples, cfg.seed, o);
                        }});
      }
    } else if (check == "continuity") {
      for (const auto& make : pick({"const-drift"})) {
        jobs.push_back({check, make().name, [&cfg, make, eps] {
                          const Scenario sc = make();
                          ContinuityOptions o;
                          o.h = cfg.h;
                          o.eps = eps;
                          o.scheme.dt = cfg.dt;
                          const double T = sc.horizon;
                          const std::vector<double> ks{0.1 * T, 0.05 * T, 0.025 * T, 0.0125 * T};
                          return continuity_probe(sc, cfg.until.value_or(0.5 * T), ks, o);
                        }});
      }
    } else if (check == "tangency") {
      for (const auto& make : pick({"paper-cos", "disk-constant-field", "disk-rotation"})) {
        jobs.push_back({check, make().name, [&cfg, make] {
                          const Scenario sc = make();
                          TangencyOptions o;
                          o.workers = cfg.workers;
                          if (sc.name == "disk-constant-field") o.max_mismatch = 0.005;
                          const std::vector<double> deltas{1e-1, 1e-2, 1e-3};
                          return tangency_statistic(sc, cfg.s, cfg.tangency_samples, deltas, cfg.seed, o);
                        }});
      }
    }
  }
  return jobs;
}

inline std::string slug(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '-';
  }
  return s;
}

inline int run_verify(const ExperimentConfig& cfg, std::ostream& out) {
  const std::vector<Job> jobs = build_jobs(cfg);
  if (jobs.empty()) {
    out << "no checks selected\n";
    return kExitOk;
  }
  const std::string label = cfg.scenario_name.empty() ? (cfg.scenario_tree ? "custom" : "suite") : cfg.scenario_name;
  OutputSet outputs(cfg.out.empty() ? default_output("verify", label) : cfg.out);
  std::vector<CheckReport> reports(jobs.size());
  const std::size_t job_workers = cfg.workers == 0 ? 1 : cfg.workers;
  parallel_for(jobs.size(), [&](std::size_t i) { reports[i] = jobs[i].run(); }, job_workers);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    char prefix[8];
    std::snprintf(prefix, sizeof prefix, "%02zu", i);
    outputs.write("tables/" + std::string(prefix) + "_" + slug(reports[i].check) + "_" + slug(reports[i].scenario) +
                      ".csv",
                  io::table_csv(reports[i].table));
  }
  outputs.write("report.csv", io::report_csv(reports));
  const std::string text = io::summary(reports);
  outputs.write("summary.txt", text);
  out << text;
  finish(cfg, outputs);
  const bool ok = std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.passed(); });
  return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// sweep

inline int run_sweep(const ExperimentConfig& cfg, std::ostream& out) {
  const Scenario sc = cfg.scenario();
  const double T = cfg.horizon.value_or(sc.horizon);
  if (cfg.sweep_values.empty()) throw ConfigurationError("missing key 'values'");
  const Vec x = cfg.starts.empty() ? Vec(0.5 * (sc.domain.lower() + sc.domain.upper()))
                                   : parse_point(cfg.starts.front(), sc.dim());
  const auto& values = cfg.sweep_values;
  std::vector<std::string> rows(values.size());
  std::string header;
  std::function<std::string(double)> point;
  if (cfg.sweep_param == "h") {
    header = "h,dist_U,rel_U,dist_V,rel_V,duality_residual";
    point = [&](double h) {
      if (!(h > 0.0)) throw ConfigurationError("key 'values': grid spacings must be positive");
      EquivalenceOptions eo;
      eo.spacings = {h};
      eo.horizon = T;
      eo.scheme.dt = cfg.dt;
      const CheckReport e = equivalence_check(sc, cfg.s, eo);
      DualityOptions dop;
      dop.scheme.dt = cfg.dt;
      const DualityValues d = duality_values(sc, cfg.s, T, h, 0.0, dop);
      const auto& row = e.table.rows.front();
      return io::num(h) + "," + io::num(row[1]) + "," + io::num(row[2]) + "," + io::num(row[3]) + "," +
             io::num(row[4]) + "," + io::num(d.residual);
    };
  } else if (cfg.sweep_param == "eps") {
    header = "eps,N,dt,seed,deviation,deviation_stderr,U_eps,U_eps_stderr";
    point = [&](double e) {
      if (!(e >= 0.0)) throw ConfigurationError("key 'values': eps must be nonnegative");
      const EnsembleConfig ec{e, cfg.mc_dt, cfg.samples, cfg.seed, 1};
      const McEstimate z = path_deviation(sc.field, sc.domain, x, cfg.s, T, ec);
      const McEstimate u = mc_terminal(sc.field, sc.domain, sc.zeta, x, cfg.s, T, ec);
      return io::num(e) + "," + std::to_string(cfg.samples) + "," + io::num(cfg.mc_dt) + "," +
             std::to_string(cfg.seed) + "," + io::num(z.mean) + "," + io::num(z.std_error) + "," + io::num(u.mean) +
             "," + io::num(u.std_error);
    };
  } else if (cfg.sweep_param == "N" || cfg.sweep_param == "dt") {
    header = cfg.sweep_param + ",eps,estimate,stderr,seed";
    point = [&](double v) {
      EnsembleConfig ec{cfg.eps.front(), cfg.mc_dt, cfg.samples, cfg.seed, 1};
      if (cfg.sweep_param == "N") {
        if (!(v >= 2.0)) throw ConfigurationError("key 'values': N must be at least 2");
        ec.samples = static_cast<std::size_t>(v);
      } else {
        if (!(v > 0.0)) throw ConfigurationError("key 'values': dt must be positive");
        ec.dt = v;
      }
      const McEstimate u = mc_terminal(sc.field, sc.domain, sc.zeta, x, cfg.s, T, ec);
      return io::num(v) + "," + io::num(ec.eps) + "," + io::num(u.mean) + "," + io::num(u.std_error) + "," +
             std::to_string(cfg.seed);
    };
  } else {
    throw ConfigurationError("key 'param': expected one of h, eps, N, dt");
  }
  parallel_for(values.size(), [&](std::size_t i) { rows[i] = point(values[i]); }, cfg.workers == 0 ? 1 : cfg.workers);
  std::string csv = header + "\n";
  for (const auto& r : rows) csv += r + "\n";
  OutputSet outputs(cfg.out.empty() ? default_output("sweep", sc.name + "-" + cfg.sweep_param) : cfg.out);
  outputs.write("sweep.csv", csv);
  out << csv;
  finish(cfg, outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

/// Prints the summary of a finished verify/density run and the status of
/// its manifest digests.
inline int run_report(const ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.input.empty()) throw ConfigurationError("missing key 'in'");
  const fs::path dir = cfg.input;
  const fs::path manifest_path = dir / "manifest.ini";
  if (!fs::exists(manifest_path)) throw ConfigurationError("key 'in': no manifest.ini in '" + dir.string() + "'");
  const config::Tree tree = config::read_ini(manifest_path.string());
  std::size_t stale = 0;
  if (const auto files = tree.get_child_optional("outputs")) {
    for (const auto& [name, value] : *files) {
      const fs::path p = dir / name;
      const std::string want = value.data();
      const bool fresh = fs::exists(p) && want == "sha256:" + sha256_hex(io::read_file(p));
      if (!fresh) {
        out << "modified or missing: " << name << '\n';
        ++stale;
      }
    }
  }
  out << "command: " << tree.get<std::string>("run.command", "?") << '\n';
  bool ok = true;
  const fs::path report = dir / "report.csv";
  if (fs::exists(report)) {
    std::istringstream in(io::read_file(report));
    std::string line;
    std::getline(in, line);
    std::size_t measures = 0;
    std::size_t bad = 0;
    while (std::getline(in, line)) {
      ++measures;
      if (!line.empty() && line.back() == '0') {
        ++bad;
        out << "failed: " << line << '\n';
      }
    }
    ok = bad == 0;
    out << measures - bad << '/' << measures << " measures within limits\n";
  }
  out << (stale == 0 ? "all outputs match the manifest\n" : "outputs differ from the manifest\n");
  return ok && stale == 0 ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// entry point

/// Long option names that a config file [run] section may set.
inline std::set<std::string> option_names(const CLI::App& sub) {
  std::set<std::string> names;
  for (const CLI::Option* opt : sub.get_options()) {
    for (const auto& n : opt->get_lnames()) names.insert(n);
  }
  names.erase("help");
  names.erase("config");
  return names;
}

inline bool given_on_command_line(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exit-time functionals of ODE flows: characteristics, Monte Carlo and transport PDE routes"};
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1);
  ExperimentConfig cfg;
  std::string h_text;
  std::vector<std::string> value_texts;
  std::string config_path;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI file; command-line flags override its keys");
    sub->add_option("--scenario", cfg.scenario_name, "built-in scenario name");
    sub->add_option("--s", cfg.s, "start time");
    sub->add_option("--T", cfg.horizon, "horizon (defaults to the scenario horizon)");
    sub->add_option("--h", h_text, "grid spacing, e.g. 0.00390625 or 1/256");
    sub->add_option("--dt", cfg.dt, "PDE time step (0 selects the CFL step)");
    sub->add_option("--mc-dt", cfg.mc_dt, "Euler-Maruyama time step");
    sub->add_option("--eps", cfg.eps, "noise levels")->delimiter(',');
    sub->add_option("--N", cfg.samples, "Monte Carlo sample count");
    sub->add_option("--seed", cfg.seed, "base seed");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--workers", cfg.workers, "worker threads (0 = hardware concurrency)");
    sub->add_option("--x", cfg.starts, "start point, comma-separated (repeatable)");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "trajectories, exit times and ensemble estimates");
  common(simulate);
  CLI::App* density = app.add_subcommand("density", "PDE, Monte Carlo and characteristics densities");
  common(density);
  density->add_option("--t", cfg.until, "final time");
  density->add_option("--rho", cfg.rho_spec, "initial density spec, e.g. \"box -1 0 1\"");
  density->add_option("--dump-every", cfg.dump_every, "write every k-th PDE time node to stack_pde/");
  CLI::App* verify = app.add_subcommand("verify", "run verification checks");
  common(verify);
  verify->add_option("--check", cfg.checks, "checks to run (default: all; 'none' selects nothing)")->delimiter(',');
  verify->add_option("--t", cfg.until, "density end time or continuity probe time");
  verify->add_option("--rho", cfg.rho_spec, "density override for the density check");
  verify->add_option("--samples", cfg.tangency_samples, "uniform starts for the tangency statistic");
  CLI::App* sweep = app.add_subcommand("sweep", "parameter sweep to CSV");
  common(sweep);
  sweep->add_option("--param", cfg.sweep_param, "h, eps, N or dt")->required();
  sweep->add_option("--values", value_texts, "sweep values")->delimiter(',')->required();
  CLI::App* report = app.add_subcommand("report", "summarize a finished output directory");
  report->add_option("--in", cfg.input, "output directory to summarize")->required();

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    // Config keys become flags placed before the command-line ones, skipping
    // any flag the command line already sets.
    const auto cfg_it = std::find_if(args.begin(), args.end(), [](const std::string& a) {
      return a == "--config" || a.rfind("--config=", 0) == 0;
    });
    if (cfg_it != args.end()) {
      std::string path = cfg_it->size() > 9 ? cfg_it->substr(9) : (cfg_it + 1 != args.end() ? *(cfg_it + 1) : "");
      if (path.empty()) throw ConfigurationError("key 'config' needs a file");
      if (args.empty() || !app.get_subcommand_no_throw(args.front())) {
        throw ConfigurationError("the subcommand must come first when --config is used");
      }
      const CLI::App* sub = app.get_subcommand(args.front());
      const config::Tree tree = config::read_ini(path);
      const auto allowed = option_names(*sub);
      std::vector<std::string> injected;
      if (const auto run_section = tree.get_child_optional("run")) {
        for (const auto& [key, node] : *run_section) {
          if (key == "command") continue;
          if (!allowed.count(key)) throw ConfigurationError("unknown key 'run." + key + "'");
          if (given_on_command_line(args, key)) continue;
          if (key == "x") {
            std::stringstream ss(node.data());
            for (std::string item; std::getline(ss, item, ';');) {
              item.erase(0, item.find_first_not_of(' '));
              item.erase(item.find_last_not_of(' ') + 1);
              if (!item.empty()) injected.insert(injected.end(), {"--x", item});
            }
          } else {
            injected.push_back("--" + key + "=" + node.data());
          }
        }
      }
      if (tree.get_child_optional("scenario") || tree.get_child_optional("field") || tree.get_child_optional("domain") ||
          tree.get_child_optional("data")) {
        config::Tree scenario_part;
        for (const char* section : {"scenario", "field", "domain", "data"}) {
          if (const auto child = tree.get_child_optional(section)) scenario_part.add_child(section, *child);
        }
        if (!given_on_command_line(args, "scenario")) {
          const auto base = scenario_part.get_optional<std::string>("scenario.base");
          const bool only_base = base && !tree.get_child_optional("field") && !tree.get_child_optional("domain") &&
                                 !tree.get_child_optional("data") && scenario_part.get_child("scenario").size() == 1;
          if (only_base) {
            injected.insert(injected.end(), {"--scenario", *base});
          } else {
            cfg.scenario_tree = scenario_part;
          }
        }
      }
      args.insert(args.begin() + 1, injected.begin(), injected.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    cfg.command = chosen->get_name();
    cfg.checks_given = chosen->get_option_no_throw("--check") && chosen->count("--check") > 0;
    if (!h_text.empty()) cfg.h = parse_real(h_text, "h");
    for (const auto& v : value_texts) cfg.sweep_values.push_back(parse_real(v, "values"));
    if (cfg.command != "report") cfg.validate();
    if (cfg.command == "simulate") return run_simulate(cfg, out);
    if (cfg.command == "density") return run_density(cfg, out);
    if (cfg.command == "verify") return run_verify(cfg, out);
    if (cfg.command == "sweep") return run_sweep(cfg, out);
    return run_report(cfg, out);
  } catch (const ConfigurationError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace exitflow::cli
