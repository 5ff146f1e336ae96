#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "infoqm/dynamics.hpp"
#include "infoqm/errors.hpp"
#include "infoqm/fields.hpp"
#include "infoqm/lattice.hpp"
#include "infoqm/measure_lang.hpp"
#include "infoqm/measures.hpp"
#include "infoqm/numfmt.hpp"

namespace infoqm {

// Line-based `key = value` with `[section]` headers. '#' and ';' start comments.
class IniFile {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static IniFile parse(std::istream& is, std::string source = "<config>") {
    IniFile f;
    f.source_ = std::move(source);
    std::string line, section;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string t = trim(strip_comment(line));
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(f.where(n) + ": unterminated section header");
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty()) throw ConfigError(f.where(n) + ": empty section name");
        if (!f.sections_.count(section)) f.order_.push_back(section);
        f.sections_[section];
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(f.where(n) + ": expected 'key = value'");
      if (section.empty()) throw ConfigError(f.where(n) + ": key outside of any section");
      const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError(f.where(n) + ": empty key");
      auto& sec = f.sections_[section];
      if (sec.count(key)) throw ConfigError(f.where(n) + ": duplicate key '" + key + "' in [" + section + "]");
      sec[key] = Entry{value, n};
    }
    return f;
  }

  static IniFile load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string() + ": cannot open config file");
    IniFile f = parse(is, path.string());
    f.dir_ = path.parent_path();
    return f;
  }

  const std::string& source() const { return source_; }
  const std::filesystem::path& directory() const { return dir_; }
  std::string where(std::size_t line) const { return source_ + ":" + std::to_string(line); }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
  const Entry* find(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }
  const std::map<std::string, Entry>* section(const std::string& s) const {
    auto it = sections_.find(s);
    return it == sections_.end() ? nullptr : &it->second;
  }
  const std::vector<std::string>& sections() const { return order_; }

  // Canonical text: sorted sections and keys, whitespace normalized.
  std::string canonical() const {
    std::string out;
    std::map<std::string, std::map<std::string, Entry>> sorted(sections_.begin(), sections_.end());
    for (const auto& [s, keys] : sorted)
      for (const auto& [k, e] : keys) out += s + "." + k + "=" + e.value + "\n";
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

 private:
  static std::string strip_comment(const std::string& s) {
    const auto c = s.find_first_of("#;");
    return c == std::string::npos ? s : s.substr(0, c);
  }

  std::string source_;
  std::filesystem::path dir_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::vector<std::string> order_;
};

// Typed reads with location-carrying errors; tracks which keys were consumed.
class ConfigReader {
 public:
  explicit ConfigReader(const IniFile& f) : f_(f) {}

  std::optional<std::string> str(const std::string& s, const std::string& k) {
    used_.insert(s + "." + k);
    if (const auto* e = f_.find(s, k)) return e->value;
    return std::nullopt;
  }
  std::string str(const std::string& s, const std::string& k, const std::string& dflt) { return str(s, k).value_or(dflt); }

  std::optional<double> real(const std::string& s, const std::string& k) {
    auto v = str(s, k);
    if (!v) return std::nullopt;
    double d = 0.0;
    if (!parse_double(*v, d) || !std::isfinite(d)) fail(s, k, "expected a finite real, got '" + *v + "'");
    return d;
  }
  double real(const std::string& s, const std::string& k, double dflt) { return real(s, k).value_or(dflt); }

  std::optional<std::size_t> count(const std::string& s, const std::string& k) {
    auto v = real(s, k);
    if (!v) return std::nullopt;
    if (*v < 0 || *v != std::floor(*v)) fail(s, k, "expected a non-negative integer");
    return static_cast<std::size_t>(*v);
  }
  std::size_t count(const std::string& s, const std::string& k, std::size_t dflt) { return count(s, k).value_or(dflt); }

  std::optional<bool> boolean(const std::string& s, const std::string& k) {
    auto v = str(s, k);
    if (!v) return std::nullopt;
    if (*v == "true") return true;
    if (*v == "false") return false;
    fail(s, k, "expected true or false, got '" + *v + "'");
  }
  bool boolean(const std::string& s, const std::string& k, bool dflt) { return boolean(s, k).value_or(dflt); }

  std::optional<std::vector<double>> reals(const std::string& s, const std::string& k) {
    auto v = str(s, k);
    if (!v) return std::nullopt;
    std::vector<double> out;
    for (const auto& item : split(*v)) {
      double d = 0.0;
      if (!parse_double(item, d) || !std::isfinite(d)) fail(s, k, "expected a comma list of finite reals, got '" + *v + "'");
      out.push_back(d);
    }
    if (out.empty()) fail(s, k, "empty list");
    return out;
  }

  std::optional<std::vector<std::string>> words(const std::string& s, const std::string& k) {
    auto v = str(s, k);
    if (!v) return std::nullopt;
    return split(*v);
  }

  // An existing file path, resolved against the config's directory.
  std::optional<std::filesystem::path> file(const std::string& s, const std::string& k) {
    auto v = str(s, k);
    if (!v) return std::nullopt;
    std::filesystem::path p(*v);
    if (p.is_relative()) p = f_.directory() / p;
    if (!std::filesystem::exists(p)) fail(s, k, "file '" + p.string() + "' does not exist");
    return p;
  }

  [[noreturn]] void fail(const std::string& s, const std::string& k, const std::string& msg) const {
    const auto* e = f_.find(s, k);
    throw ConfigError((e ? f_.where(e->line) : f_.source()) + ": [" + s + "] " + k + ": " + msg);
  }

  void mark_used(const std::string& s, const std::string& k) { used_.insert(s + "." + k); }

  // Rejects any key or section nobody asked for.
  void reject_unknown(const std::set<std::string>& known_sections) const {
    for (const auto& s : f_.sections()) {
      if (!known_sections.count(s)) {
        const auto* sec = f_.section(s);
        const std::size_t line = sec && !sec->empty() ? sec->begin()->second.line : 0;
        throw ConfigError(f_.where(line) + ": unknown section [" + s + "]");
      }
      for (const auto& [k, e] : *f_.section(s))
        if (!used_.count(s + "." + k)) throw ConfigError(f_.where(e.line) + ": unknown key '" + k + "' in [" + s + "]");
    }
  }

  const IniFile& file() const { return f_; }

 private:
  static std::vector<std::string> split(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = IniFile::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  const IniFile& f_;
  std::set<std::string> used_;
};

enum class SolverKind { Linear, Madelung, Nonlinear };

inline SolverKind solver_kind_from(const std::string& s) {
  if (s == "linear") return SolverKind::Linear;
  if (s == "madelung") return SolverKind::Madelung;
  if (s == "nonlinear") return SolverKind::Nonlinear;
  throw ConfigError("unknown solver '" + s + "' (expected linear, madelung or nonlinear)");
}

inline const char* solver_kind_name(SolverKind k) {
  switch (k) {
    case SolverKind::Linear:
      return "linear";
    case SolverKind::Madelung:
      return "madelung";
    default:
      return "nonlinear";
  }
}

struct RunConfig {
  GridSpec grid;
  std::vector<double> masses{1.0};
  PhysicalParams phys;
  PotentialSpec potential = ZeroPotential{};
  std::string nonlinearity = "none";

  std::string state_kind = "gaussian";  // gaussian | plane_wave | file | ground_state
  std::vector<double> center{0.0}, sigma{1.0}, k{0.0};
  std::filesystem::path state_file;

  SolverKind solver = SolverKind::Linear;
  double T = 1.0, dt = 0.0;
  std::size_t snapshot_every = 1;
  bool deterministic = false;
  double vacuum_floor = 1e-14;
  ImaginaryTimeOptions imaginary;

  Expr measure = fisher_expr();
  std::string measure_text = "fisher";
  ParamMap measure_params;

  std::size_t perturbations = 20;
  double amplitude = 1e-2;
  std::uint64_t seed = 1;

  std::string hash;

  Metric metric() const { return Metric(masses, grid.space_dim); }
  GridPtr make_grid() const { return Grid::make(grid); }

  NonlinearitySpec nonlinearity_spec() const {
    if (nonlinearity == "none") return NoNonlinearity{};
    if (nonlinearity == "log_density") return LogDensity{phys.b};
    if (nonlinearity == "scaled_fisher") return ScaledFisher{phys.beta};
    if (nonlinearity == "phase_kinetic") return PhaseKinetic{phys.alpha2};
    return CustomMeasure{measure, measure_params};
  }
};

inline RunConfig parse_run_config(const IniFile& f) {
  ConfigReader r(f);
  RunConfig c;

  // grid
  c.grid.particle_count = r.count("grid", "particles", 1);
  c.grid.space_dim = r.count("grid", "dim", 1);
  const std::size_t naxes = c.grid.particle_count * c.grid.space_dim;
  auto per_axis = [&](const std::string& key, std::vector<double> dflt) {
    auto v = r.reals("grid", key);
    std::vector<double> out = v ? *v : dflt;
    if (out.size() == 1) out.assign(naxes, out[0]);
    if (out.size() != naxes) r.fail("grid", key, "expected 1 or " + std::to_string(naxes) + " values");
    return out;
  };
  const auto pts = per_axis("points", {});
  if (pts.empty()) throw ConfigError(f.source() + ": [grid] points is required");
  const auto lo = per_axis("lower", {0.0});
  const auto hi = per_axis("upper", {2.0 * std::numbers::pi});
  std::vector<std::string> bc = r.words("grid", "boundary").value_or(std::vector<std::string>{"periodic"});
  if (bc.size() == 1) bc.assign(naxes, bc[0]);
  if (bc.size() != naxes) r.fail("grid", "boundary", "expected 1 or " + std::to_string(naxes) + " values");
  for (std::size_t a = 0; a < naxes; ++a) {
    if (pts[a] < 1 || pts[a] != std::floor(pts[a])) r.fail("grid", "points", "expected positive integers");
    Boundary b;
    if (bc[a] == "periodic")
      b = Boundary::Periodic;
    else if (bc[a] == "truncated")
      b = Boundary::Truncated;
    else
      r.fail("grid", "boundary", "expected periodic or truncated, got '" + bc[a] + "'");
    c.grid.axes.push_back(AxisSpec{static_cast<std::size_t>(pts[a]), lo[a], hi[a], b});
  }
  try {
    c.grid.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(f.source() + ": " + e.what());
  }

  // physics
  c.phys.hbar = r.real("physics", "hbar", 1.0);
  if (!(c.phys.hbar > 0.0)) r.fail("physics", "hbar", "must be positive");
  c.phys.lambda = r.real("physics", "lambda", c.phys.hbar * c.phys.hbar / 8.0);
  c.masses = r.reals("physics", "mass").value_or(std::vector<double>{1.0});
  if (c.masses.size() == 1) c.masses.assign(c.grid.particle_count, c.masses[0]);
  if (c.masses.size() != c.grid.particle_count) r.fail("physics", "mass", "expected one mass per particle");
  for (double m : c.masses)
    if (!(m > 0.0)) r.fail("physics", "mass", "masses must be positive");
  c.phys.b = r.real("physics", "b", 0.0);
  c.phys.beta = r.real("physics", "beta", 1.0);
  c.phys.alpha2 = r.real("physics", "alpha2", 0.0);
  const std::string pot = r.str("physics", "potential", "zero");
  if (pot == "harmonic") {
    auto om = r.reals("physics", "omega").value_or(std::vector<double>{1.0});
    if (om.size() == 1) om.assign(c.grid.particle_count, om[0]);
    if (om.size() != c.grid.particle_count) r.fail("physics", "omega", "expected one frequency per particle");
    c.potential = HarmonicPotential{om};
  } else if (pot != "zero") {
    r.fail("physics", "potential", "expected zero or harmonic, got '" + pot + "'");
  }
  c.nonlinearity = r.str("physics", "nonlinearity", "none");
  if (c.nonlinearity != "none" && c.nonlinearity != "log_density" && c.nonlinearity != "scaled_fisher" &&
      c.nonlinearity != "phase_kinetic" && c.nonlinearity != "custom")
    r.fail("physics", "nonlinearity", "unknown nonlinearity '" + c.nonlinearity + "'");

  // state
  c.state_kind = r.str("state", "kind", "gaussian");
  if (c.state_kind != "gaussian" && c.state_kind != "plane_wave" && c.state_kind != "file" && c.state_kind != "ground_state")
    r.fail("state", "kind", "expected gaussian, plane_wave, file or ground_state");
  if (auto v = r.reals("state", "center")) c.center = *v;
  if (auto v = r.reals("state", "sigma")) c.sigma = *v;
  if (auto v = r.reals("state", "k")) c.k = *v;
  for (double s : c.sigma)
    if (!(s > 0.0)) r.fail("state", "sigma", "widths must be positive");
  for (const auto* v : {&c.center, &c.sigma, &c.k})
    if (v->size() != 1 && v->size() != naxes) throw ConfigError(f.source() + ": [state] vectors need 1 or " + std::to_string(naxes) + " values");
  if (c.state_kind == "file") {
    auto p = r.file("state", "file");
    if (!p) throw ConfigError(f.source() + ": [state] kind = file needs a file key");
    c.state_file = *p;
  } else if (f.find("state", "file")) {
    r.fail("state", "file", "only valid with kind = file");
  }

  // solver
  c.solver = solver_kind_from(r.str("solver", "method", "linear"));
  c.T = r.real("solver", "T", 1.0);
  if (!(c.T > 0.0)) r.fail("solver", "T", "must be positive");
  c.dt = r.real("solver", "dt", 0.0);
  if (c.dt < 0.0) r.fail("solver", "dt", "must be non-negative");
  c.snapshot_every = r.count("solver", "snapshot_every", 1);
  if (c.snapshot_every == 0) r.fail("solver", "snapshot_every", "must be at least 1");
  c.deterministic = r.boolean("solver", "deterministic", false);
  c.vacuum_floor = r.real("solver", "vacuum_floor", 1e-14);
  c.imaginary.dt = r.real("solver", "imaginary_dt", c.imaginary.dt);
  c.imaginary.tol = r.real("solver", "imaginary_tol", c.imaginary.tol);

  // measure
  if (auto e = r.str("measure", "expr")) {
    c.measure_text = *e;
    try {
      c.measure = parse(*e);
    } catch (const ParseError& pe) {
      r.fail("measure", "expr", pe.what());
    }
  }
  if (const auto* sec = f.section("measure"))
    for (const auto& [k, e] : *sec) {
      if (k.rfind("param.", 0) != 0) continue;
      c.measure_params[k.substr(6)] = *r.real("measure", k);
    }

  // variational
  c.perturbations = r.count("variational", "perturbations", 20);
  c.amplitude = r.real("variational", "amplitude", 1e-2);
  if (auto s = r.count("variational", "seed")) c.seed = *s;

  r.reject_unknown({"grid", "physics", "state", "solver", "measure", "variational"});
  c.hash = hex64(fnv1a(f.canonical()));
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& p) { return parse_run_config(IniFile::load(p)); }

inline WaveField initial_state(const RunConfig& c, const GridPtr& g) {
  const Metric m = c.metric();
  m.check_grid(*g);
  if (c.state_kind == "plane_wave") return plane_wave(g, c.phys.hbar, c.k);
  if (c.state_kind == "file") {
    std::ifstream is(c.state_file);
    if (!is) throw ConfigError(c.state_file.string() + ": cannot open state file");
    return read_state_csv(is, g, c.phys.hbar);
  }
  WaveField w = gaussian_packet(g, c.phys.hbar, c.center, c.sigma, c.k);
  if (c.state_kind == "ground_state") {
    PhysicalParams phys = c.phys;
    return imaginary_time_ground_state(w, c.potential, m, c.nonlinearity_spec(), phys, c.imaginary).psi;
  }
  return w;
}

}  // namespace infoqm
