#pragma once

#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "infoqm/errors.hpp"
#include "infoqm/fields.hpp"
#include "infoqm/lattice.hpp"
#include "infoqm/measure_lang.hpp"
#include "infoqm/spectral.hpp"

namespace infoqm {

struct PhysicalParams {
  double hbar = 1.0;
  double lambda = 0.125;  // hbar^2/8 for hbar = 1
  double b = 0.0;
  double beta = 1.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double eta = 0.0;

  static PhysicalParams natural(double hbar = 1.0) {
    PhysicalParams p;
    p.hbar = hbar;
    p.lambda = hbar * hbar / 8.0;
    return p;
  }
  void validate() const {
    if (!(hbar > 0.0) || !std::isfinite(hbar)) throw InvalidArgument("hbar must be positive");
    for (double v : {lambda, b, beta, alpha1, alpha2, eta})
      if (!std::isfinite(v)) throw InvalidArgument("physical parameters must be finite");
  }
};

struct MeasureValue {
  double value = 0.0;
  std::size_t clamped_sites = 0;
  double boundary_flux = 0.0;
};

struct MeasureOptions {
  DensityOptions density;
  bool boundary_flux = false;
};

inline double surface_term(const HydroField& h, const Metric& metric) {
  return integrate(laplacian(h.p, metric));
}

inline MeasureValue measure_value(const Expr& e, const HydroField& h, const Metric& metric,
                                  const ParamMap& params = {}, const MeasureOptions& opt = {}) {
  DensityResult d = evaluate_density(e, h, metric, params, opt.density);
  MeasureValue mv;
  mv.value = integrate(h.p * d.density);
  mv.clamped_sites = d.clamped_sites;
  if (opt.boundary_flux) mv.boundary_flux = surface_term(h, metric);
  return mv;
}

inline double fisher_information(const HydroField& h, const Metric& metric, double clamp = 1e-300) {
  metric.check_grid(h.grid());
  ScalarField L = h.p.map([clamp](double v) { return std::log(v < clamp ? clamp : v); });
  ScalarField H(h.grid_ptr(), 0.0);
  for (std::size_t k = 0; k < h.grid().dimension(); ++k) {
    ScalarField d = gradient(L, k);
    H += (d * d) * metric.inverse_mass(k);
  }
  return integrate(h.p * H);
}

struct PotentialResult {
  ScalarField Q;
  std::size_t clamped_sites = 0;
};

// Q = -(hbar^2/8) g_ij (2 d_i d_j p / p - d_i p d_j p / p^2), evaluated through log p.
inline PotentialResult quantum_potential(const HydroField& h, const Metric& metric, double hbar,
                                         double clamp = 1e-300) {
  metric.check_grid(h.grid());
  std::size_t clamped = 0;
  ScalarField L = h.p.map([&](double v) {
    if (v < clamp) {
      ++clamped;
      v = clamp;
    }
    return std::log(v);
  });
  ScalarField bracket(h.grid_ptr(), 0.0);
  for (std::size_t k = 0; k < h.grid().dimension(); ++k) {
    ScalarField d = gradient(L, k);
    bracket += (second_derivative(L, k, k) * 2.0 + d * d) * metric.inverse_mass(k);
  }
  return PotentialResult{bracket * (-hbar * hbar / 8.0), clamped};
}

struct EnergyParts {
  double kinetic = 0.0;    // int p g dS dS / 2
  double potential = 0.0;  // int p V
  double measure = 0.0;    // lambda int p H
  double total() const { return kinetic + potential + measure; }
  std::size_t clamped_sites = 0;
};

inline double phase_kinetic(const HydroField& h, const Metric& metric) {
  ScalarField ke(h.grid_ptr(), 0.0);
  for (std::size_t k = 0; k < h.grid().dimension(); ++k) {
    ScalarField d = gradient(h.S, k, h.phase_diff());
    ke += (d * d) * (0.5 * metric.inverse_mass(k));
  }
  return integrate(h.p * ke);
}

inline EnergyParts energy_parts(const HydroField& h, const PotentialSpec& V, const Expr& e,
                                const Metric& metric, double lambda, const ParamMap& params = {},
                                const DensityOptions& dopt = {}) {
  EnergyParts out;
  out.kinetic = phase_kinetic(h, metric);
  out.potential = integrate(h.p * potential_field(V, h.grid_ptr(), metric));
  if (lambda != 0.0) {
    MeasureOptions mo;
    mo.density = dopt;
    MeasureValue mv = measure_value(e, h, metric, params, mo);
    out.measure = lambda * mv.value;
    out.clamped_sites = mv.clamped_sites;
  }
  return out;
}

inline double energy_functional(const HydroField& h, const PotentialSpec& V, const Expr& e,
                                const Metric& metric, double lambda, const ParamMap& params = {}) {
  return energy_parts(h, V, e, metric, lambda, params).total();
}

// <psi|H|psi> / <psi|psi> with hbar^2/2 g_ij d_i psi* d_j psi; spectral on
// periodic grids, central differences otherwise.
inline double hamiltonian_expectation(const WaveField& w, const PotentialSpec& V, const Metric& metric) {
  const Grid& g = *w.grid;
  const double hb = w.hbar;
  const double norm = w.norm_squared();
  ScalarField Vf = potential_field(V, w.grid, metric);
  double pot = 0.0;
  for (std::size_t s = 0; s < w.size(); ++s) pot += Vf[s] * std::norm(w.psi[s]);
  pot *= g.cell_volume();
  double kin = 0.0;
  if (g.all_periodic()) {
    std::vector<std::complex<double>> buf = w.psi;
    FftPlan plan(g, buf);
    plan.forward();
    const auto sym = kinetic_symbol(g, metric);
    double acc = 0.0;
    for (std::size_t s = 0; s < buf.size(); ++s) acc += sym[s] * std::norm(buf[s]);
    kin = 0.5 * hb * hb * acc * g.cell_volume() / static_cast<double>(g.size());
  } else {
    ScalarField re(w.grid), im(w.grid);
    for (std::size_t s = 0; s < w.size(); ++s) re[s] = w.psi[s].real(), im[s] = w.psi[s].imag();
    for (std::size_t k = 0; k < g.dimension(); ++k) {
      ScalarField a = gradient(re, k), b = gradient(im, k);
      kin += 0.5 * hb * hb * metric.inverse_mass(k) * integrate(a * a + b * b);
    }
  }
  return (kin + pot) / norm;
}

struct CramerRao {
  double variance = 0.0;
  double fisher = 0.0;
  double product = 0.0;
  bool satisfied = false;
};

// Var * I_1 along one axis with the unweighted Fisher information int p (d log p)^2.
inline CramerRao cramer_rao_check(const HydroField& h, std::size_t axis = 0) {
  check_axis(h.grid(), axis);
  HydroField n = h;
  n.normalize();
  CramerRao r;
  r.variance = moments(n).variance[axis];
  ScalarField L = n.p.map([](double v) { return std::log(v < 1e-300 ? 1e-300 : v); });
  ScalarField d = gradient(L, axis);
  r.fisher = integrate(n.p * d * d);
  r.product = r.variance * r.fisher;
  r.satisfied = r.product >= 1.0 - 1e-9;
  return r;
}

inline double renormalized_mass(double m, double lambda, double alpha2) {
  const double f = 1.0 + 2.0 * lambda * alpha2 * alpha2;
  if (!(f > 0.0))
    throw NonPositiveEffectiveMass("1 + 2*lambda*alpha2^2 = " + format_double(f) + " is not positive");
  return m / f;
}

inline Metric renormalized_metric(const Metric& m, double lambda, double alpha2) {
  std::vector<double> masses;
  for (double v : m.particle_masses()) masses.push_back(renormalized_mass(v, lambda, alpha2));
  return Metric(masses, m.space_dim());
}

}  // namespace infoqm
