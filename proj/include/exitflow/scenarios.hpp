#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "exitflow/domain.hpp"
#include "exitflow/errors.hpp"
#include "exitflow/fields.hpp"

namespace exitflow {

/// Field, domain, horizon and the three data items of one experiment.
struct Scenario {
  std::string name;
  std::string description;
  VectorField field;
  Domain domain;
  double horizon;
  ScalarData zeta;
  ScalarData phi;
  ScalarData rho;

  int dim() const { return field.dim(); }
  double growth(double s, double t) const { return growth_constant(field, domain, s, t); }
};

namespace data {

inline ScalarData constant(DataRole role, double v) { return ScalarData::constant(role, v); }

/// value * Ind{lo < x < hi} componentwise.
inline ScalarData box(DataRole role, const Vec& lo, const Vec& hi, double value = 1.0) {
  if (lo.size() != hi.size()) throw ConfigurationError("box corners differ in dimension");
  if (role == DataRole::density && value < 0.0) throw DataError("densities must be nonnegative");
  std::ostringstream label;
  label << "box(" << value << ")";
  return ScalarData::from_function(
      role,
      [lo, hi, value](const Vec& x, double) {
        for (Eigen::Index d = 0; d < x.size(); ++d) {
          if (!(x[d] > lo[d] && x[d] < hi[d])) return 0.0;
        }
        return value;
      },
      label.str());
}

/// amplitude * prod_d cos^2(pi (x_d - c_d) / (2 w)) on the cube |x - c| < w.
inline ScalarData bump(DataRole role, const Vec& center, double width, double amplitude = 1.0) {
  if (!(width > 0.0)) throw ConfigurationError("bump width must be positive");
  return ScalarData::from_function(
      role,
      [center, width, amplitude](const Vec& x, double) {
        double v = amplitude;
        for (Eigen::Index d = 0; d < x.size(); ++d) {
          const double z = (x[d] - center[d]) / width;
          if (std::abs(z) >= 1.0) return 0.0;
          const double c = std::cos(0.5 * std::numbers::pi * z);
          v *= c * c;
        }
        return v;
      },
      "bump");
}

/// Amplitude making bump(center, width) a probability density.
inline double bump_normalizer(int dim, double width) { return 1.0 / std::pow(width, dim); }

}  // namespace data

namespace fields {

inline VectorField constant(const Vec& value) {
  const double bound = value.norm();
  return VectorField(static_cast<int>(value.size()), [value](const Vec&, double) { return value; }, bound)
      .with_jacobian([value](const Vec&, double) { return Mat::Zero(value.size(), value.size()).eval(); })
      .with_divergence([](const Vec&, double) { return 0.0; })
      .with_autonomous();
}

/// f(x) = A x + b. The bound must cover the region of interest.
inline VectorField linear(const Mat& a, const Vec& b, double bound) {
  if (a.rows() != a.cols() || a.rows() != b.size()) throw ConfigurationError("linear field shapes do not match");
  const double trace = a.trace();
  return VectorField(static_cast<int>(b.size()), [a, b](const Vec& x, double) -> Vec { return a * x + b; }, bound)
      .with_jacobian([a](const Vec&, double) { return a; })
      .with_divergence([trace](const Vec&, double) { return trace; })
      .with_autonomous();
}

/// Planar rotation with angular rate omega about the origin.
inline VectorField rotation(double omega, double radius_bound) {
  Mat a(2, 2);
  a << 0.0, -omega, omega, 0.0;
  return linear(a, Vec::Zero(2), std::abs(omega) * radius_bound);
}

/// 1D f(x, t) = amplitude * cos(t).
inline VectorField cos_time(double amplitude = 1.0) {
  return VectorField(1, [amplitude](const Vec&, double t) { return scalar_vec(amplitude * std::cos(t)); },
                     std::abs(amplitude))
      .with_jacobian([](const Vec&, double) { return Mat::Zero(1, 1).eval(); })
      .with_divergence([](const Vec&, double) { return 0.0; });
}

}  // namespace fields

namespace detail {

inline Scenario paper_cos() {
  return Scenario{"paper-cos",
                  "f = cos t on (-1, 1); the trajectory from x = 0 grazes the boundary at t = pi/2",
                  fields::cos_time(),
                  Domain::interval(-1.0, 1.0),
                  2.0 * std::numbers::pi,
                  data::constant(DataRole::terminal, 1.0),
                  data::constant(DataRole::running, 1.0),
                  data::box(DataRole::density, scalar_vec(-1.0), scalar_vec(1.0), 0.5)};
}

inline Scenario const_drift() {
  return Scenario{"const-drift",
                  "f = 1 on (-1, 1); exit time 1 - x",
                  fields::constant(scalar_vec(1.0)),
                  Domain::interval(-1.0, 1.0),
                  1.0,
                  data::constant(DataRole::terminal, 1.0),
                  data::constant(DataRole::running, 1.0),
                  data::box(DataRole::density, scalar_vec(-1.0), scalar_vec(1.0), 0.5)};
}

inline Scenario contracting() {
  Mat a(1, 1);
  a << -1.0;
  return Scenario{"contracting",
                  "f = -x on (-1, 1); densities concentrate as e^t and saturate the growth bound",
                  fields::linear(a, scalar_vec(0.0), 1.0),
                  Domain::interval(-1.0, 1.0),
                  1.0,
                  data::constant(DataRole::terminal, 1.0),
                  data::constant(DataRole::running, 1.0),
                  data::bump(DataRole::density, scalar_vec(0.0), 0.5, data::bump_normalizer(1, 0.5))};
}

inline Scenario disk_rotation() {
  const Vec c = make_vec({0.4, 0.0});
  return Scenario{"disk-rotation",
                  "rigid rotation of the unit disk; every circle is invariant",
                  fields::rotation(1.0, 1.0),
                  Domain::ball(Vec::Zero(2), 1.0),
                  2.0 * std::numbers::pi,
                  data::constant(DataRole::terminal, 1.0),
                  data::constant(DataRole::running, 1.0),
                  data::bump(DataRole::density, c, 0.3, data::bump_normalizer(2, 0.3))};
}

inline Scenario disk_constant_field() {
  return Scenario{"disk-constant-field",
                  "f = (1, 0) on the unit disk; exits are tangential only at the poles",
                  fields::constant(make_vec({1.0, 0.0})),
                  Domain::ball(Vec::Zero(2), 1.0),
                  3.0,
                  data::constant(DataRole::terminal, 1.0),
                  data::constant(DataRole::running, 1.0),
                  data::constant(DataRole::density, 1.0 / std::numbers::pi)};
}

inline Scenario box_wind() {
  auto f = VectorField(
               2,
               [](const Vec& x, double t) {
                 return make_vec({0.5 * std::sin(t) - 0.3 * x[0], 0.4 * std::cos(x[0])});
               },
               0.9)
               .with_jacobian([](const Vec& x, double) {
                 Mat j(2, 2);
                 j << -0.3, 0.0, -0.4 * std::sin(x[0]), 0.0;
                 return j;
               })
               .with_divergence([](const Vec&, double) { return -0.3; });
  const Vec c = Vec::Zero(2);
  return Scenario{"box-wind",
                  "time-dependent compressible wind in a rounded box (superellipse power 4)",
                  f,
                  Domain::rounded_box(c, make_vec({1.0, 0.75}), 4.0),
                  2.0,
                  data::box(DataRole::terminal, make_vec({-2.0, -2.0}), make_vec({0.0, 2.0})),
                  data::constant(DataRole::running, 1.0),
                  data::bump(DataRole::density, c, 0.5, data::bump_normalizer(2, 0.5))};
}

}  // namespace detail

inline std::vector<std::string> scenario_names() {
  return {"paper-cos", "const-drift", "contracting", "disk-rotation", "disk-constant-field", "box-wind"};
}

inline Scenario builtin_scenario(const std::string& name) {
  if (name == "paper-cos") return detail::paper_cos();
  if (name == "const-drift") return detail::const_drift();
  if (name == "contracting") return detail::contracting();
  if (name == "disk-rotation") return detail::disk_rotation();
  if (name == "disk-constant-field") return detail::disk_constant_field();
  if (name == "box-wind") return detail::box_wind();
  throw ConfigurationError("unknown scenario '" + name + "'");
}

namespace config {

using Tree = boost::property_tree::ptree;

inline std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      throw ConfigurationError("key '" + key + "': '" + text + "' is not a list of numbers");
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used != item.size()) throw ConfigurationError("key '" + key + "': '" + text + "' is not a list of numbers");
  }
  if (out.empty()) throw ConfigurationError("key '" + key + "' is empty");
  return out;
}

inline Vec get_vec(const Tree& tree, const std::string& key, int dim) {
  const auto text = tree.get_optional<std::string>(key);
  if (!text) throw ConfigurationError("missing key '" + key + "'");
  const auto list = parse_list(*text, key);
  if (static_cast<int>(list.size()) != dim) {
    throw ConfigurationError("key '" + key + "' needs " + std::to_string(dim) + " components");
  }
  Vec v(dim);
  for (int d = 0; d < dim; ++d) v[d] = list[static_cast<std::size_t>(d)];
  return v;
}

inline double get_number(const Tree& tree, const std::string& key) {
  const auto text = tree.get_optional<std::string>(key);
  if (!text) throw ConfigurationError("missing key '" + key + "'");
  const auto list = parse_list(*text, key);
  if (list.size() != 1) throw ConfigurationError("key '" + key + "' must be a single number");
  return list.front();
}

inline double get_number(const Tree& tree, const std::string& key, double fallback) {
  return tree.get_optional<std::string>(key) ? get_number(tree, key) : fallback;
}

inline std::string get_string(const Tree& tree, const std::string& key) {
  const auto text = tree.get_optional<std::string>(key);
  if (!text || text->empty()) throw ConfigurationError("missing key '" + key + "'");
  return *text;
}

inline Domain parse_domain(const Tree& t, int dim) {
  const std::string kind = get_string(t, "domain.kind");
  if (kind == "interval") {
    if (dim != 1) throw ConfigurationError("key 'domain.kind': interval needs dimension 1");
    return Domain::interval(get_number(t, "domain.lower"), get_number(t, "domain.upper"));
  }
  const Vec center = t.get_optional<std::string>("domain.center") ? get_vec(t, "domain.center", dim) : Vec::Zero(dim);
  if (kind == "ball") return Domain::ball(center, get_number(t, "domain.radius"));
  if (kind == "ellipse") return Domain::ellipse(center, get_vec(t, "domain.semi_axes", dim));
  if (kind == "rounded-box") {
    return Domain::rounded_box(center, get_vec(t, "domain.half_widths", dim), get_number(t, "domain.power", 4.0));
  }
  throw ConfigurationError("key 'domain.kind': unknown domain '" + kind + "'");
}

inline VectorField parse_field(const Tree& t, int dim) {
  const std::string kind = get_string(t, "field.kind");
  if (kind == "constant") return fields::constant(get_vec(t, "field.value", dim));
  if (kind == "linear") {
    const auto entries = parse_list(get_string(t, "field.matrix"), "field.matrix");
    if (static_cast<int>(entries.size()) != dim * dim) {
      throw ConfigurationError("key 'field.matrix' needs " + std::to_string(dim * dim) + " entries");
    }
    Mat a(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) a(i, j) = entries[static_cast<std::size_t>(i * dim + j)];
    }
    const Vec b = t.get_optional<std::string>("field.offset") ? get_vec(t, "field.offset", dim) : Vec::Zero(dim);
    return fields::linear(a, b, get_number(t, "field.bound"));
  }
  if (kind == "rotation") {
    if (dim != 2) throw ConfigurationError("key 'field.kind': rotation needs dimension 2");
    return fields::rotation(get_number(t, "field.rate", 1.0), get_number(t, "field.bound"));
  }
  if (kind == "cos-time") {
    if (dim != 1) throw ConfigurationError("key 'field.kind': cos-time needs dimension 1");
    return fields::cos_time(get_number(t, "field.amplitude", 1.0));
  }
  throw ConfigurationError("key 'field.kind': unknown field '" + kind + "'");
}

/// Data specs: "constant V", "box LO HI [V]" or "bump CENTER WIDTH [AMPLITUDE]"
/// with comma-separated vectors.
inline ScalarData parse_data(const std::string& spec, DataRole role, int dim, const std::string& key) {
  std::istringstream in(spec);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.empty()) throw ConfigurationError("key '" + key + "' is empty");
  auto vec = [&](const std::string& text) {
    const auto list = parse_list(text, key);
    if (static_cast<int>(list.size()) != dim) {
      throw ConfigurationError("key '" + key + "' needs " + std::to_string(dim) + "-component vectors");
    }
    Vec v(dim);
    for (int d = 0; d < dim; ++d) v[d] = list[static_cast<std::size_t>(d)];
    return v;
  };
  auto num = [&](const std::string& text) { return parse_list(text, key).front(); };
  const std::string& kind = words.front();
  if (kind == "constant" && words.size() == 2) return data::constant(role, num(words[1]));
  if (kind == "box" && (words.size() == 3 || words.size() == 4)) {
    return data::box(role, vec(words[1]), vec(words[2]), words.size() == 4 ? num(words[3]) : 1.0);
  }
  if (kind == "bump" && (words.size() == 3 || words.size() == 4)) {
    const double width = num(words[2]);
    const double amp = words.size() == 4 ? num(words[3]) : data::bump_normalizer(dim, width);
    return data::bump(role, vec(words[1]), width, amp);
  }
  throw ConfigurationError("key '" + key + "': cannot parse data spec '" + spec + "'");
}

/// Scenario from an INI tree. A `base` key starts from a built-in scenario
/// and overrides whatever sections are present.
inline Scenario parse_scenario(const Tree& t) {
  std::optional<Scenario> sc;
  if (const auto base = t.get_optional<std::string>("scenario.base")) sc = builtin_scenario(*base);
  const bool has_field = static_cast<bool>(t.get_child_optional("field"));
  const bool has_domain = static_cast<bool>(t.get_child_optional("domain"));
  if (!sc && !(has_field && has_domain)) {
    throw ConfigurationError("scenario needs either 'scenario.base' or both [field] and [domain] sections");
  }
  const int dim = sc ? sc->dim() : static_cast<int>(get_number(t, "scenario.dim"));
  if (dim < 1 || dim > kMaxDim) throw ConfigurationError("key 'scenario.dim' must be in [1, 3]");
  VectorField field = has_field ? parse_field(t, dim) : sc->field;
  Domain domain = has_domain ? parse_domain(t, dim) : sc->domain;
  const double horizon = get_number(t, "scenario.horizon", sc ? sc->horizon : 1.0);
  if (!(horizon > 0.0)) throw ConfigurationError("key 'scenario.horizon' must be positive");
  auto pick = [&](const char* key, DataRole role, const std::optional<ScalarData>& fallback) {
    if (const auto spec = t.get_optional<std::string>(key)) return parse_data(*spec, role, dim, key);
    if (fallback) return *fallback;
    return data::constant(role, role == DataRole::density ? 0.0 : 1.0);
  };
  Scenario out{t.get<std::string>("scenario.name", sc ? sc->name : "custom"),
               t.get<std::string>("scenario.description", sc ? sc->description : "user-defined scenario"),
               field,
               domain,
               horizon,
               pick("data.zeta", DataRole::terminal, sc ? std::optional(sc->zeta) : std::nullopt),
               pick("data.phi", DataRole::running, sc ? std::optional(sc->phi) : std::nullopt),
               pick("data.rho", DataRole::density, sc ? std::optional(sc->rho) : std::nullopt)};
  if (!sc && !t.get_optional<std::string>("data.rho")) {
    throw ConfigurationError("missing key 'data.rho'");
  }
  return out;
}

inline Tree read_ini(const std::string& path) {
  Tree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigurationError("cannot read config '" + path + "': " + e.message());
  }
  return tree;
}

}  // namespace config

inline Scenario load_scenario(const std::string& path) { return config::parse_scenario(config::read_ini(path)); }

}  // namespace exitflow
