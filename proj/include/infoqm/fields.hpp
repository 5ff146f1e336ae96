#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "infoqm/errors.hpp"
#include "infoqm/lattice.hpp"
#include "infoqm/numfmt.hpp"

namespace infoqm {

using Complex = std::complex<double>;

struct WaveField {
  GridPtr grid;
  std::vector<Complex> psi;
  double hbar = 1.0;

  WaveField() = default;
  WaveField(GridPtr g, double hbar_ = 1.0) : grid(std::move(g)), psi(grid->size()), hbar(hbar_) {}
  WaveField(GridPtr g, std::vector<Complex> values, double hbar_ = 1.0)
      : grid(std::move(g)), psi(std::move(values)), hbar(hbar_) {
    if (psi.size() != grid->size()) throw InvalidArgument("wave field: size mismatch");
    if (!(hbar > 0.0)) throw InvalidArgument("wave field: hbar must be positive");
  }

  template <class F>
  static WaveField from_function(GridPtr g, double hbar, F&& f) {
    WaveField w(g, hbar);
    std::vector<double> x(g->dimension());
    for (std::size_t s = 0; s < g->size(); ++s) {
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = g->site_coordinate(s, k);
      w.psi[s] = f(std::span<const double>(x));
    }
    return w;
  }

  std::size_t size() const { return psi.size(); }
  ScalarField density() const {
    ScalarField p(grid);
    for (std::size_t s = 0; s < size(); ++s) p[s] = std::norm(psi[s]);
    return p;
  }
  double norm_squared() const { return integrate(density()); }
  void normalize() {
    const double n = norm_squared();
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("wave field: zero or non-finite norm");
    const double c = 1.0 / std::sqrt(n);
    for (auto& z : psi) z *= c;
  }
};

struct HydroField {
  ScalarField p;
  ScalarField S;
  double hbar = 1.0;

  HydroField() = default;
  HydroField(ScalarField p_, ScalarField S_, double hbar_ = 1.0)
      : p(std::move(p_)), S(std::move(S_)), hbar(hbar_) {
    if (p.grid_ptr() != S.grid_ptr() && !p.grid().same_shape(S.grid()))
      throw InvalidArgument("hydro field: p and S on different grids");
    if (!(hbar > 0.0)) throw InvalidArgument("hydro field: hbar must be positive");
  }

  const Grid& grid() const { return p.grid(); }
  const GridPtr& grid_ptr() const { return p.grid_ptr(); }
  std::size_t size() const { return p.size(); }
  double phase_period() const { return 2.0 * std::numbers::pi * hbar; }
  DiffOptions phase_diff() const { return DiffOptions{phase_period()}; }

  void normalize() {
    const double n = integrate(p);
    if (!(n > 0.0)) throw InvalidArgument("hydro field: p does not integrate to a positive value");
    p *= 1.0 / n;
  }
};

// --- potentials --------------------------------------------------------------

struct ZeroPotential {};
struct HarmonicPotential {
  std::vector<double> omega;  // one per particle
};
struct TabulatedPotential {
  ScalarField values;
};
using PotentialSpec = std::variant<ZeroPotential, HarmonicPotential, TabulatedPotential>;

inline ScalarField potential_field(const PotentialSpec& spec, const GridPtr& grid,
                                   const Metric& metric) {
  metric.check_grid(*grid);
  if (std::holds_alternative<ZeroPotential>(spec)) return ScalarField(grid, 0.0);
  if (auto* h = std::get_if<HarmonicPotential>(&spec)) {
    std::vector<double> om = h->omega;
    if (om.size() == 1 && metric.particle_count() > 1) om.assign(metric.particle_count(), om[0]);
    if (om.size() != metric.particle_count())
      throw InvalidArgument("harmonic potential: need one omega per particle");
    for (double w : om)
      if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("harmonic potential: omega must be > 0");
    return ScalarField::from_function(grid, [&](std::span<const double> x) {
      double v = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double w = om[metric.particle_of(k)];
        v += 0.5 * metric.mass(k) * w * w * x[k] * x[k];
      }
      return v;
    });
  }
  const auto& t = std::get<TabulatedPotential>(spec);
  if (t.values.size() != grid->size()) throw InvalidArgument("tabulated potential: size mismatch");
  require_finite(t.values, "tabulated potential");
  return ScalarField(grid, t.values.values());
}

// --- Madelung transform ------------------------------------------------------

struct DecomposeOptions {
  double node_threshold = 1e-12;  // relative to max |psi|^2; 0 disables detection
  bool normalize = true;
};

inline HydroField madelung_decompose(const WaveField& w, const DecomposeOptions& opt = {}) {
  const Grid& g = *w.grid;
  ScalarField p(w.grid), S(w.grid);
  double pmax = 0.0;
  for (std::size_t s = 0; s < w.size(); ++s) {
    if (!std::isfinite(w.psi[s].real()) || !std::isfinite(w.psi[s].imag()))
      throw NonFiniteValue(s, "madelung_decompose: non-finite psi at site " + std::to_string(s));
    p[s] = std::norm(w.psi[s]);
    pmax = std::max(pmax, p[s]);
  }
  if (!(pmax > 0.0)) throw NodeDetected(0, "madelung_decompose: psi vanishes identically");
  const double thr = opt.node_threshold * pmax;
  for (std::size_t s = 0; s < w.size(); ++s)
    if (opt.node_threshold > 0.0 && p[s] < thr)
      throw NodeDetected(s, "madelung_decompose: |psi|^2 below node threshold at site " +
                                std::to_string(s));

  const double hb = w.hbar, twopi = 2.0 * std::numbers::pi;
  for (std::size_t s = 0; s < w.size(); ++s) S[s] = hb * std::arg(w.psi[s]);

  // Axis 0 first (other indices zero), then each later axis line by line from
  // the hyperplane already unwrapped.
  auto unwrap_line = [&](std::size_t base, std::size_t stride, std::size_t n) {
    for (std::size_t j = 1; j < n; ++j) {
      const std::size_t a = base + (j - 1) * stride, b = base + j * stride;
      const double d = S[b] - S[a];
      S[b] -= hb * twopi * std::round(d / (hb * twopi));
    }
  };
  const std::size_t nd = g.dimension();
  unwrap_line(0, g.stride(0), g.points(0));
  for (std::size_t axis = 1; axis < nd; ++axis) {
    const std::size_t s = g.stride(axis), n = g.points(axis);
    for (std::size_t base = 0; base < g.size(); base += s * n) unwrap_line(base, s, n);
  }
  if (opt.normalize) {
    const double n = integrate(p);
    p *= 1.0 / n;
  }
  return HydroField(std::move(p), std::move(S), hb);
}

inline WaveField madelung_compose(const HydroField& h) {
  WaveField w(h.grid_ptr(), h.hbar);
  for (std::size_t s = 0; s < h.size(); ++s) {
    if (h.p[s] < 0.0) throw InvalidArgument("madelung_compose: negative p at site " + std::to_string(s));
    w.psi[s] = std::polar(std::sqrt(h.p[s]), h.S[s] / h.hbar);
  }
  return w;
}

// --- observables -------------------------------------------------------------

struct Moments {
  std::vector<double> mean, variance, mean_momentum;
};

inline Moments moments(const HydroField& h) {
  const Grid& g = h.grid();
  const std::size_t nd = g.dimension();
  Moments m;
  m.mean.assign(nd, 0.0);
  m.variance.assign(nd, 0.0);
  m.mean_momentum.assign(nd, 0.0);
  const double dv = g.cell_volume();
  const double total = integrate(h.p);
  for (std::size_t k = 0; k < nd; ++k) {
    if (g.periodic(k)) {
      const double L = g.length(k), a = g.lower(k);
      double c = 0.0, sn = 0.0;
      for (std::size_t s = 0; s < h.size(); ++s) {
        const double th = 2.0 * std::numbers::pi * (g.site_coordinate(s, k) - a) / L;
        c += h.p[s] * std::cos(th);
        sn += h.p[s] * std::sin(th);
      }
      double mean = a;
      if (std::hypot(c, sn) * dv > 1e-12 * total) {
        double th = std::atan2(sn, c);
        if (th < 0) th += 2.0 * std::numbers::pi;
        mean = a + L * th / (2.0 * std::numbers::pi);
      }
      double var = 0.0;
      for (std::size_t s = 0; s < h.size(); ++s) {
        double d = g.site_coordinate(s, k) - mean;
        d -= L * std::round(d / L);
        var += h.p[s] * d * d;
      }
      m.mean[k] = mean;
      m.variance[k] = var * dv / total;
    } else {
      double mean = 0.0;
      for (std::size_t s = 0; s < h.size(); ++s) mean += h.p[s] * g.site_coordinate(s, k);
      mean *= dv / total;
      double var = 0.0;
      for (std::size_t s = 0; s < h.size(); ++s) {
        const double d = g.site_coordinate(s, k) - mean;
        var += h.p[s] * d * d;
      }
      m.mean[k] = mean;
      m.variance[k] = var * dv / total;
    }
    ScalarField dS = gradient(h.S, k, h.phase_diff());
    m.mean_momentum[k] = integrate(h.p * dS) / total;
  }
  return m;
}

// --- Galilean boost ----------------------------------------------------------

namespace detail {

inline std::vector<double> axis_velocities(const std::vector<double>& v, const Metric& metric,
                                           std::size_t nd) {
  if (v.size() == nd) return v;
  if (v.size() == metric.particle_count() && metric.space_dim() == 1) return v;
  throw InvalidArgument("galilean_boost: velocity vector needs one entry per coordinate");
}

inline std::vector<long> boost_shifts(const Grid& g, const Metric& metric,
                                      const std::vector<double>& v, double t, double hbar) {
  const std::size_t nd = g.dimension();
  std::vector<long> shift(nd, 0);
  for (std::size_t k = 0; k < nd; ++k) {
    const double disp = v[k] * t / g.spacing(k);
    const double r = std::round(disp);
    if (std::abs(disp - r) > 1e-9 * std::max(1.0, std::abs(disp)))
      throw IncommensurateBoost("galilean_boost: v*t on axis " + std::to_string(k) +
                                " is not a whole number of grid sites");
    if (g.periodic(k)) {
      const double q = metric.mass(k) * v[k] * g.length(k) / (2.0 * std::numbers::pi * hbar);
      if (std::abs(q - std::round(q)) > 1e-9 * std::max(1.0, std::abs(q)))
        throw IncommensurateBoost("galilean_boost: m*v*L/(2*pi*hbar) on axis " + std::to_string(k) +
                                  " is not an integer");
    } else if (r != 0.0) {
      throw IncommensurateBoost("galilean_boost: non-zero shift on truncated axis " +
                                std::to_string(k));
    }
    shift[k] = static_cast<long>(r);
  }
  return shift;
}

// Site that lands on `site` after shifting by `shift` (periodic rotation).
inline std::size_t source_site(const Grid& g, std::size_t site, const std::vector<long>& shift) {
  std::size_t src = 0;
  for (std::size_t k = 0; k < g.dimension(); ++k) {
    const long n = static_cast<long>(g.points(k));
    long j = static_cast<long>(g.axis_index(site, k)) - shift[k];
    j %= n;
    if (j < 0) j += n;
    src += static_cast<std::size_t>(j) * g.stride(k);
  }
  return src;
}

}  // namespace detail

inline HydroField galilean_boost(const HydroField& h, const Metric& metric,
                                 const std::vector<double>& velocity, double t) {
  const Grid& g = h.grid();
  metric.check_grid(g);
  const auto v = detail::axis_velocities(velocity, metric, g.dimension());
  const auto shift = detail::boost_shifts(g, metric, v, t, h.hbar);
  ScalarField p(h.grid_ptr()), S(h.grid_ptr());
  double ke = 0.0;
  for (std::size_t k = 0; k < g.dimension(); ++k) ke += 0.5 * metric.mass(k) * v[k] * v[k] * t;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const std::size_t src = detail::source_site(g, s, shift);
    p[s] = h.p[src];
    double ph = 0.0;
    for (std::size_t k = 0; k < g.dimension(); ++k)
      ph += metric.mass(k) * v[k] * g.site_coordinate(s, k);
    S[s] = h.S[src] + ph - ke;
  }
  return HydroField(std::move(p), std::move(S), h.hbar);
}

inline WaveField galilean_boost(const WaveField& w, const Metric& metric,
                                const std::vector<double>& velocity, double t) {
  const Grid& g = *w.grid;
  metric.check_grid(g);
  const auto v = detail::axis_velocities(velocity, metric, g.dimension());
  const auto shift = detail::boost_shifts(g, metric, v, t, w.hbar);
  WaveField out(w.grid, w.hbar);
  double ke = 0.0;
  for (std::size_t k = 0; k < g.dimension(); ++k) ke += 0.5 * metric.mass(k) * v[k] * v[k] * t;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const std::size_t src = detail::source_site(g, s, shift);
    double ph = 0.0;
    for (std::size_t k = 0; k < g.dimension(); ++k)
      ph += metric.mass(k) * v[k] * g.site_coordinate(s, k);
    out.psi[s] = w.psi[src] * std::polar(1.0, (ph - ke) / w.hbar);
  }
  return out;
}

// --- initial states ----------------------------------------------------------

// Product of per-axis Gaussians exp(-(x-c)^2/(4 sigma^2)) e^{i k x}, normalized.
inline WaveField gaussian_packet(const GridPtr& grid, double hbar, const std::vector<double>& center,
                                 const std::vector<double>& sigma, const std::vector<double>& k) {
  const std::size_t nd = grid->dimension();
  auto pick = [&](const std::vector<double>& v, std::size_t a, double dflt) {
    if (v.empty()) return dflt;
    return v.size() == 1 ? v[0] : v.at(a);
  };
  WaveField w = WaveField::from_function(grid, hbar, [&](std::span<const double> x) {
    double re = 0.0, ph = 0.0;
    for (std::size_t a = 0; a < nd; ++a) {
      const double c = pick(center, a, 0.0), sg = pick(sigma, a, 1.0), kk = pick(k, a, 0.0);
      double d = x[a] - c;
      if (grid->periodic(a)) d -= grid->length(a) * std::round(d / grid->length(a));
      re += -d * d / (4.0 * sg * sg);
      ph += kk * x[a];
    }
    return std::polar(std::exp(re), ph);
  });
  w.normalize();
  return w;
}

inline WaveField plane_wave(const GridPtr& grid, double hbar, const std::vector<double>& k) {
  const std::size_t nd = grid->dimension();
  WaveField w = WaveField::from_function(grid, hbar, [&](std::span<const double> x) {
    double ph = 0.0;
    for (std::size_t a = 0; a < nd; ++a) ph += (k.size() == 1 ? k[0] : k.at(a)) * x[a];
    return std::polar(1.0, ph);
  });
  w.normalize();
  return w;
}

// --- state CSV ---------------------------------------------------------------

inline std::string state_csv_header(const Grid& g) {
  std::string h = "i";
  for (std::size_t k = 0; k < g.dimension(); ++k) h += ",x" + std::to_string(k + 1);
  return h + ",p,S,re,im";
}

inline void write_state_rows(std::ostream& os, const HydroField& h, const WaveField& w,
                             const std::string& prefix = {}) {
  const Grid& g = h.grid();
  for (std::size_t s = 0; s < g.size(); ++s) {
    os << prefix << s;
    for (std::size_t k = 0; k < g.dimension(); ++k) os << ',' << format_double(g.site_coordinate(s, k));
    os << ',' << format_double(h.p[s]) << ',' << format_double(h.S[s]) << ','
       << format_double(w.psi[s].real()) << ',' << format_double(w.psi[s].imag()) << '\n';
  }
}

inline void write_state_csv(std::ostream& os, const HydroField& h, const WaveField& w) {
  os << state_csv_header(h.grid()) << '\n';
  write_state_rows(os, h, w);
}

// Reads a state file on `grid`; leading lines starting with '#' are skipped.
inline WaveField read_state_csv(std::istream& is, const GridPtr& grid, double hbar) {
  std::string line;
  std::size_t lineno = 0;
  const std::string expected = state_csv_header(*grid);
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    break;
  }
  if (line != expected)
    throw ConfigError("state file line " + std::to_string(lineno) + ": expected header '" +
                      expected + "'");
  WaveField w(grid, hbar);
  std::vector<bool> seen(grid->size(), false);
  const std::size_t ncol = grid->dimension() + 5;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v;
      if (!parse_double(cell, v) || !std::isfinite(v))
        throw ConfigError("state file line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      cols.push_back(v);
    }
    if (cols.size() != ncol)
      throw ConfigError("state file line " + std::to_string(lineno) + ": expected " +
                        std::to_string(ncol) + " columns");
    const double idx = cols[0];
    if (idx < 0 || idx >= static_cast<double>(grid->size()) || idx != std::floor(idx))
      throw ConfigError("state file line " + std::to_string(lineno) + ": site index out of range");
    const auto s = static_cast<std::size_t>(idx);
    w.psi[s] = Complex(cols[ncol - 2], cols[ncol - 1]);
    seen[s] = true;
  }
  for (std::size_t s = 0; s < seen.size(); ++s)
    if (!seen[s]) throw ConfigError("state file: missing site " + std::to_string(s));
  return w;
}

}  // namespace infoqm
