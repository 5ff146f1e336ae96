#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "infoqm/errors.hpp"
#include "infoqm/fields.hpp"
#include "infoqm/lattice.hpp"
#include "infoqm/measure_lang.hpp"
#include "infoqm/measures.hpp"
#include "infoqm/spectral.hpp"

namespace infoqm {

// ---------------------------------------------------------------------------
// Functional derivative of I = int p H

struct FunctionalOptions {
  bool force_numeric = false;
  double rel_eps = 1e-6;   // eps = rel_eps * max(p), capped at site_cap * p_k
  double site_cap = 1e-3;
  double clamp = 1e-300;
};

namespace detail {

// -4 g_ii d_i d_i sqrt(p) / sqrt(p), the variation of int p g (d log p)^2.
inline ScalarField fisher_variation(const ScalarField& p, const Metric& metric, double clamp = 1e-300) {
  ScalarField a = p.map([clamp](double v) { return std::sqrt(v < clamp ? clamp : v); });
  ScalarField out(p.grid_ptr(), 0.0);
  for (std::size_t k = 0; k < p.grid().dimension(); ++k)
    out += second_derivative(a, k, k) * (-4.0 * metric.inverse_mass(k));
  for (std::size_t s = 0; s < out.size(); ++s) out[s] /= a[s];
  return out;
}

// Exact variation of the lattice Fisher functional h sum p g (D log p)^2:
// g [(D L)^2 - 2 D(p D L) / p], the log form of the quantum-potential bracket.
inline ScalarField fisher_variation_discrete(const ScalarField& p, const Metric& metric, double clamp = 1e-300) {
  ScalarField pc = p.map([clamp](double v) { return v < clamp ? clamp : v; });
  ScalarField L = pc.map([](double v) { return std::log(v); });
  ScalarField out(p.grid_ptr(), 0.0);
  for (std::size_t k = 0; k < p.grid().dimension(); ++k) {
    ScalarField d = gradient(L, k);
    ScalarField flux = gradient(pc * d, k);
    for (std::size_t s = 0; s < out.size(); ++s) flux[s] /= pc[s];
    out += (d * d - flux * 2.0) * metric.inverse_mass(k);
  }
  return out;
}

inline std::optional<double> coefficient_of(const Expr& e, const Expr& target, const ParamMap& params) {
  if (e == target) return 1.0;
  if (e.op() == Op::Mul) {
    if (auto c = constant_value(e.arg(0), params); c && e.arg(1) == target) return *c;
    if (auto c = constant_value(e.arg(1), params); c && e.arg(0) == target) return *c;
  }
  if (e.op() == Op::Neg) {
    if (auto c = coefficient_of(e.arg(0), target, params)) return -*c;
  }
  return std::nullopt;
}

inline std::optional<ScalarField> analytic_variation(const Expr& e, const HydroField& h, const Metric& metric,
                                                     const ParamMap& params, double clamp) {
  if (is_constant(e)) {
    if (auto c = constant_value(e, params)) return ScalarField(h.grid_ptr(), *c);
    return std::nullopt;
  }
  if (e.op() == Op::Add || e.op() == Op::Sub) {
    auto a = analytic_variation(e.arg(0), h, metric, params, clamp);
    auto b = analytic_variation(e.arg(1), h, metric, params, clamp);
    if (!a || !b) return std::nullopt;
    return e.op() == Op::Add ? *a + *b : *a - *b;
  }
  if (auto c = coefficient_of(e, fisher_expr(), params)) return fisher_variation_discrete(h.p, metric, clamp) * *c;
  if (auto c = coefficient_of(e, dsl::log(dsl::p()), params)) {
    return h.p.map([clamp, k = *c](double v) { return k * (std::log(v < clamp ? clamp : v) + 1.0); });
  }
  return std::nullopt;
}

// Numeric variation: site-wise central differences of int p H, summed only
// over the sites whose contribution changed.
inline ScalarField numeric_variation(const Expr& e, const HydroField& h, const Metric& metric,
                                     const ParamMap& params, const FunctionalOptions& opt) {
  const double pmax = h.p.max();
  DensityOptions dopt;
  dopt.clamp = opt.clamp;
  ScalarField out(h.grid_ptr(), 0.0);
  HydroField work = h;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double pk = h.p[k];
    const double eps = std::min(opt.rel_eps * pmax, opt.site_cap * pk);
    if (!(eps > 0.0)) continue;
    work.p[k] = pk + eps;
    ScalarField up = work.p * evaluate_density(e, work, metric, params, dopt).density;
    work.p[k] = pk - eps;
    ScalarField dn = work.p * evaluate_density(e, work, metric, params, dopt).density;
    work.p[k] = pk;
    double diff = 0.0;
    for (std::size_t s = 0; s < h.size(); ++s) diff += up[s] - dn[s];
    out[k] = diff / (2.0 * eps);
  }
  return out;
}

}  // namespace detail

// delta(int p H)/delta p. Builtin forms and their constant multiples use closed
// expressions; everything else is differentiated numerically, term by term.
inline ScalarField functional_derivative(const Expr& e, const HydroField& h, const Metric& metric,
                                         const ParamMap& params = {}, const FunctionalOptions& opt = {}) {
  metric.check_grid(h.grid());
  if (uses_op(e, Op::Dt)) throw InvalidArgument("functional derivative: dt() terms are not local in p");
  if (opt.force_numeric) return detail::numeric_variation(e, h, metric, params, opt);
  if (auto a = detail::analytic_variation(e, h, metric, params, opt.clamp)) return *a;
  if (e.op() == Op::Add || e.op() == Op::Sub) {
    ScalarField a = functional_derivative(e.arg(0), h, metric, params, opt);
    ScalarField b = functional_derivative(e.arg(1), h, metric, params, opt);
    return e.op() == Op::Add ? a + b : a - b;
  }
  return detail::numeric_variation(e, h, metric, params, opt);
}

// ---------------------------------------------------------------------------
// Nonlinearities

struct NoNonlinearity {};
struct LogDensity {
  double b = 0.0;
};
struct ScaledFisher {
  double beta = 1.0;
};
struct PhaseKinetic {
  double alpha2 = 0.0;
};
struct CustomMeasure {
  Expr measure;
  ParamMap params;
};
using NonlinearitySpec = std::variant<NoNonlinearity, LogDensity, ScaledFisher, PhaseKinetic, CustomMeasure>;

inline std::string nonlinearity_name(const NonlinearitySpec& n) {
  switch (n.index()) {
    case 0: return "none";
    case 1: return "log_density";
    case 2: return "scaled_fisher";
    case 3: return "phase_kinetic";
    default: return "custom";
  }
}

struct SolverOptions {
  double T = 1.0;
  double dt = 0.0;  // 0 picks the method default
  std::size_t snapshot_every = 1;
  double log_clamp = 1e-12;  // relative to max p
};

struct SolverMeta {
  std::string method;
  double dt = 0.0;
  std::size_t steps = 0;
  std::size_t snapshot_every = 1;
  std::size_t clamped_sites = 0;  // max over steps
  std::size_t vacuum_sites = 0;   // max over steps, madelung only
  bool cfl_warning = false;
  std::vector<std::string> warnings;
};

struct EvolutionResult {
  std::vector<double> times;
  std::vector<WaveField> waves;
  std::vector<HydroField> hydro;
  std::vector<double> norm, energy, fisher;
  SolverMeta meta;

  std::size_t size() const { return times.size(); }
  ScalarField density(std::size_t i) const { return waves.empty() ? hydro.at(i).p : waves.at(i).density(); }
};

class EvolutionAborted : public NodeDetected {
 public:
  EvolutionAborted(std::size_t site, const std::string& message, std::shared_ptr<EvolutionResult> partial)
      : NodeDetected(site, message), partial_(std::move(partial)) {}
  // Snapshots up to and including the last good state.
  const EvolutionResult& partial() const { return *partial_; }

 private:
  std::shared_ptr<EvolutionResult> partial_;
};

namespace detail {

inline std::size_t step_count(double T, double& dt) {
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("final time must be positive");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive");
  const double r = T / dt;
  std::size_t n = static_cast<std::size_t>(std::llround(r));
  if (n == 0 || std::abs(r - static_cast<double>(n)) > 1e-9 * r) n = static_cast<std::size_t>(std::ceil(r));
  dt = T / static_cast<double>(n);
  return n;
}

inline bool snapshot_due(std::size_t step, std::size_t steps, std::size_t every) {
  return step == steps || (every > 0 && step % every == 0);
}

// Extra real potential a nonlinearity contributes, evaluated from p.
struct NonlinearTerm {
  NonlinearitySpec spec;
  PhysicalParams phys;
  Metric metric;
  double log_clamp = 1e-12;

  bool active() const {
    return !(std::holds_alternative<NoNonlinearity>(spec) || std::holds_alternative<PhaseKinetic>(spec) ||
             (std::holds_alternative<ScaledFisher>(spec) && std::get<ScaledFisher>(spec).beta == 1.0));
  }

  ScalarField potential(const ScalarField& p, std::size_t& clamped) const {
    clamped = 0;
    if (const auto* ld = std::get_if<LogDensity>(&spec)) {
      const double c = log_clamp * p.max();
      return p.map([&](double v) {
        if (v < c) {
          ++clamped;
          v = c;
        }
        return ld->b * std::log(v);
      });
    }
    const double q = phys.hbar * phys.hbar / 8.0;
    if (const auto* sf = std::get_if<ScaledFisher>(&spec)) {
      return fisher_variation_discrete(clamp_rel(p, clamped), metric) * ((sf->beta - 1.0) * q);
    }
    if (const auto* cm = std::get_if<CustomMeasure>(&spec)) {
      HydroField h(clamp_rel(p, clamped), ScalarField(p.grid_ptr(), 0.0), phys.hbar);
      return functional_derivative(cm->measure, h, metric, cm->params) * phys.lambda -
             fisher_variation_discrete(h.p, metric) * q;
    }
    return ScalarField(p.grid_ptr(), 0.0);
  }

  ScalarField clamp_rel(const ScalarField& p, std::size_t& clamped) const {
    const double c = log_clamp * p.max();
    return p.map([&](double v) {
      if (v < c) {
        ++clamped;
        return c;
      }
      return v;
    });
  }

  // Energy whose variation is potential(): added to <H>.
  double energy(const ScalarField& p) const {
    if (const auto* ld = std::get_if<LogDensity>(&spec)) {
      const double c = log_clamp * p.max();
      return ld->b * integrate(p.map([c](double v) { return v < c ? v * std::log(c) - c : v * std::log(v) - v; }));
    }
    const double q = phys.hbar * phys.hbar / 8.0;
    std::size_t unused = 0;
    if (const auto* sf = std::get_if<ScaledFisher>(&spec)) {
      return (sf->beta - 1.0) * q * fisher_information(HydroField(clamp_rel(p, unused), ScalarField(p.grid_ptr(), 0.0)), metric);
    }
    if (const auto* cm = std::get_if<CustomMeasure>(&spec)) {
      HydroField h(clamp_rel(p, unused), ScalarField(p.grid_ptr(), 0.0), phys.hbar);
      return phys.lambda * measure_value(cm->measure, h, metric, cm->params).value - q * fisher_information(h, metric);
    }
    return 0.0;
  }
};

inline Metric kinetic_metric(const NonlinearitySpec& n, const Metric& m, const PhysicalParams& phys) {
  if (const auto* pk = std::get_if<PhaseKinetic>(&n)) return renormalized_metric(m, phys.lambda, pk->alpha2);
  return m;
}

inline double wave_energy(const WaveField& w, const PotentialSpec& V, const Metric& kin,
                          const NonlinearTerm& nl) {
  return hamiltonian_expectation(w, V, kin) * w.norm_squared() + nl.energy(w.density());
}

inline void record_wave(EvolutionResult& r, double t, const WaveField& w, const PotentialSpec& V,
                        const Metric& kin, const NonlinearTerm& nl) {
  r.times.push_back(t);
  r.waves.push_back(w);
  ScalarField p = w.density();
  r.norm.push_back(integrate(p));
  r.energy.push_back(wave_energy(w, V, kin, nl));
  r.fisher.push_back(fisher_information(HydroField(p, ScalarField(w.grid, 0.0), w.hbar), nl.metric));
}

inline EvolutionResult split_step(const WaveField& psi0, const PotentialSpec& V, const Metric& metric,
                                  const NonlinearitySpec& nonlin, const PhysicalParams& phys,
                                  const SolverOptions& opt, const std::string& method) {
  const Grid& g = *psi0.grid;
  if (!g.all_periodic()) throw MethodUnavailable(method + " solver needs an all-periodic grid; use madelung");
  metric.check_grid(g);
  phys.validate();
  if (std::abs(psi0.hbar - phys.hbar) > 1e-15 * phys.hbar) throw InvalidArgument("hbar of state and parameters differ");
  const Metric kin = kinetic_metric(nonlin, metric, phys);
  NonlinearTerm nl{nonlin, phys, metric, opt.log_clamp};
  const bool active = nl.active();

  double dt = opt.dt > 0.0 ? opt.dt : 0.1 * g.min_spacing() * g.min_spacing() * metric.min_mass() / phys.hbar;
  const std::size_t steps = step_count(opt.T, dt);
  const double hb = phys.hbar;

  ScalarField Vf = potential_field(V, psi0.grid, metric);
  std::vector<std::complex<double>> half_v(g.size()), kin_phase(g.size());
  for (std::size_t s = 0; s < g.size(); ++s) half_v[s] = std::polar(1.0, -Vf[s] * dt / (2.0 * hb));
  const auto sym = kinetic_symbol(g, kin);
  for (std::size_t s = 0; s < g.size(); ++s) kin_phase[s] = std::polar(1.0, -hb * sym[s] * dt / 2.0);

  WaveField w = psi0;
  FftPlan plan(g, w.psi);
  EvolutionResult r;
  r.meta.method = method;
  r.meta.dt = dt;
  r.meta.steps = steps;
  r.meta.snapshot_every = opt.snapshot_every;
  record_wave(r, 0.0, w, V, kin, nl);

  auto potential_half = [&]() {
    if (!active) {
      for (std::size_t s = 0; s < g.size(); ++s) w.psi[s] *= half_v[s];
      return;
    }
    std::size_t clamped = 0;
    ScalarField N = nl.potential(w.density(), clamped);
    r.meta.clamped_sites = std::max(r.meta.clamped_sites, clamped);
    for (std::size_t s = 0; s < g.size(); ++s) w.psi[s] *= half_v[s] * std::polar(1.0, -N[s] * dt / (2.0 * hb));
  };

  for (std::size_t step = 1; step <= steps; ++step) {
    potential_half();
    plan.forward();
    for (std::size_t s = 0; s < g.size(); ++s) w.psi[s] *= kin_phase[s];
    plan.backward();
    potential_half();
    if (snapshot_due(step, steps, opt.snapshot_every)) {
      for (std::size_t s = 0; s < g.size(); ++s)
        if (!std::isfinite(w.psi[s].real()) || !std::isfinite(w.psi[s].imag()))
          throw NonFiniteValue(s, method + ": non-finite wavefunction at step " + std::to_string(step));
      record_wave(r, static_cast<double>(step) * dt, w, V, kin, nl);
    }
  }
  if (r.meta.clamped_sites > 0)
    r.meta.warnings.push_back("log argument clamped at " + std::to_string(r.meta.clamped_sites) + " sites");
  return r;
}

}  // namespace detail

// Strang split-step Fourier integration of the linear equation.
inline EvolutionResult solve_linear(const WaveField& psi0, const PotentialSpec& V, const Metric& metric,
                                    const SolverOptions& opt, const PhysicalParams& phys = {}) {
  PhysicalParams p = phys;
  p.hbar = psi0.hbar;
  return detail::split_step(psi0, V, metric, NoNonlinearity{}, p, opt, "linear");
}

inline EvolutionResult solve_nonlinear(const WaveField& psi0, const PotentialSpec& V, const Metric& metric,
                                       const NonlinearitySpec& nonlin, const PhysicalParams& phys,
                                       const SolverOptions& opt) {
  if (const auto* cm = std::get_if<CustomMeasure>(&nonlin)) {
    if (uses_op(cm->measure, Op::Dt)) throw InvalidArgument("custom nonlinearity: dt() is not local");
  }
  return detail::split_step(psi0, V, metric, nonlin, phys, opt,
                            std::holds_alternative<NoNonlinearity>(nonlin) ? "linear" : "nonlinear");
}

// ---------------------------------------------------------------------------
// Imaginary time

struct ImaginaryTimeOptions {
  double tol = 1e-13;
  double dt = 1e-3;
  std::size_t max_iter = 200000;
  std::size_t check_every = 100;
  double log_clamp = 1e-12;
};

struct GroundState {
  WaveField psi;
  double energy = 0.0;
  std::size_t iterations = 0;
};

inline GroundState imaginary_time_ground_state(const WaveField& guess, const PotentialSpec& V,
                                               const Metric& metric, const NonlinearitySpec& nonlin = NoNonlinearity{},
                                               const PhysicalParams& phys_in = {},
                                               const ImaginaryTimeOptions& opt = {}) {
  const Grid& g = *guess.grid;
  if (!g.all_periodic()) throw MethodUnavailable("imaginary time relaxation needs an all-periodic grid");
  if (!(opt.dt > 0.0) || !(opt.tol > 0.0) || opt.check_every == 0) throw InvalidArgument("imaginary time: bad options");
  PhysicalParams phys = phys_in;
  phys.hbar = guess.hbar;
  const double hb = phys.hbar;
  const Metric kin = detail::kinetic_metric(nonlin, metric, phys);
  detail::NonlinearTerm nl{nonlin, phys, metric, opt.log_clamp};
  const bool active = nl.active();
  ScalarField Vf = potential_field(V, guess.grid, metric);
  std::vector<double> half_v(g.size()), kin_decay(g.size());
  for (std::size_t s = 0; s < g.size(); ++s) half_v[s] = std::exp(-Vf[s] * opt.dt / (2.0 * hb));
  const auto sym = kinetic_symbol(g, kin);
  for (std::size_t s = 0; s < g.size(); ++s) kin_decay[s] = std::exp(-hb * sym[s] * opt.dt / 2.0);

  GroundState out{guess, 0.0, 0};
  WaveField& w = out.psi;
  w.normalize();
  FftPlan plan(g, w.psi);
  auto potential_half = [&]() {
    if (!active) {
      for (std::size_t s = 0; s < g.size(); ++s) w.psi[s] *= half_v[s];
      return;
    }
    std::size_t clamped = 0;
    ScalarField N = nl.potential(w.density(), clamped);
    for (std::size_t s = 0; s < g.size(); ++s) w.psi[s] *= half_v[s] * std::exp(-N[s] * opt.dt / (2.0 * hb));
  };
  double e_prev = detail::wave_energy(w, V, kin, nl);
  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    potential_half();
    plan.forward();
    for (std::size_t s = 0; s < g.size(); ++s) w.psi[s] *= kin_decay[s];
    plan.backward();
    potential_half();
    w.normalize();
    if (it % opt.check_every == 0) {
      const double e = detail::wave_energy(w, V, kin, nl);
      if (!std::isfinite(e)) throw ConvergenceError("imaginary time: energy became non-finite");
      if (std::abs(e - e_prev) < opt.tol) {
        out.energy = e;
        out.iterations = it;
        return out;
      }
      e_prev = e;
    }
  }
  throw ConvergenceError("imaginary time: no convergence after " + std::to_string(opt.max_iter) + " iterations");
}

// ---------------------------------------------------------------------------
// Hydrodynamic form

struct MadelungOptions {
  double T = 1.0;
  double dt = 0.0;  // 0 picks cfl * h^2 m / hbar
  std::size_t snapshot_every = 1;
  double cfl = 0.1;
  std::optional<double> lambda;  // defaults to hbar^2/8
  std::optional<Expr> measure;   // defaults to the Fisher density
  ParamMap measure_params;
  double node_floor = 1e-12;     // relative to max p
  double node_occupied = 1e-8;   // relative level the sites around a node must reach
  double vacuum_floor = 1e-14;   // relative to max p
  double vacuum_band = 3.0;      // decades over which the vacuum viscosity fades out
  double viscosity = 4.0;        // in units of hbar g
};

namespace detail {

inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

class MadelungRhs {
 public:
  MadelungRhs(const HydroField& h0, const PotentialSpec& V, const Metric& metric, const MadelungOptions& opt)
      : grid_(h0.grid_ptr()),
        metric_(metric),
        opt_(opt),
        hbar_(h0.hbar),
        lambda_(opt.lambda.value_or(h0.hbar * h0.hbar / 8.0)),
        V_(potential_field(V, h0.grid_ptr(), metric)) {
    if (opt.measure && !(*opt.measure == fisher_expr())) custom_ = *opt.measure;
  }

  void operator()(const ScalarField& p, const ScalarField& S, ScalarField& dp, ScalarField& dS) const {
    const Grid& g = *grid_;
    const double period = 2.0 * std::numbers::pi * hbar_;
    const double pmax = p.max();
    const double fl = opt_.vacuum_floor * pmax;
    ScalarField pc = p.map([](double v) { return v < 1e-300 ? 1e-300 : v; });
    ScalarField w = pc.map([&](double v) { return 1.0 - smoothstep(std::log10(v / fl) / opt_.vacuum_band); });
    dp = ScalarField(grid_, 0.0);
    dS = ScalarField(grid_, 0.0);
    ScalarField kinetic(grid_, 0.0);
    const auto& pv = p.values();
    const auto& sv = S.values();
    const auto& wv = w.values();
    auto& dpv = dp.values();
    auto& dsv = dS.values();
    for (std::size_t k = 0; k < g.dimension(); ++k) {
      const double gk = metric_.inverse_mass(k), hk = g.spacing(k);
      const double nu0 = opt_.viscosity * hbar_ * gk;
      const bool per = g.periodic(k);
      ScalarField dSk = gradient(S, k, DiffOptions{period});
      kinetic += (dSk * dSk) * (0.5 * gk);
      for_each_line(g, k, [&](std::size_t base, std::size_t st, std::size_t n) {
        const std::size_t faces = per ? n : n - 1;
        for (std::size_t f = 0; f < faces; ++f) {
          const std::size_t a = base + f * st, b = base + ((f + 1) % n) * st;
          const double dSab = wrap_diff(sv[b] - sv[a], per ? period : 0.0);
          const double flux = gk * 0.5 * (pv[a] + pv[b]) * dSab / hk;
          const double nu = 0.5 * nu0 * (wv[a] + wv[b]);
          const double fp = flux - nu * (pv[b] - pv[a]) / hk;  // total face flux of p
          const double fs = nu * dSab / hk;                     // viscous face flux of S
          dpv[a] -= fp / hk;
          dpv[b] += fp / hk;
          dsv[a] += fs / hk;
          dsv[b] -= fs / hk;
        }
      });
    }
    ScalarField Q = quantum_term(pc, S);
    for (std::size_t s = 0; s < g.size(); ++s) dsv[s] -= kinetic[s] + V_[s] + Q[s];
  }

  double lambda() const { return lambda_; }
  const std::optional<Expr>& custom() const { return custom_; }

 private:
  ScalarField quantum_term(const ScalarField& pc, const ScalarField& S) const {
    if (!custom_) return fisher_variation(pc, metric_) * lambda_;
    HydroField h(pc, S, hbar_);
    return functional_derivative(*custom_, h, metric_, opt_.measure_params) * lambda_;
  }

  GridPtr grid_;
  Metric metric_;
  MadelungOptions opt_;
  double hbar_;
  double lambda_;
  ScalarField V_;
  std::optional<Expr> custom_;
};

// A site below the node floor with occupied sites two steps away on both sides
// along some axis.
inline std::optional<std::size_t> find_interior_dip(const ScalarField& p, double floor, double occupied) {
  const Grid& g = p.grid();
  std::optional<std::size_t> hit;
  for (std::size_t k = 0; k < g.dimension() && !hit; ++k) {
    const bool per = g.periodic(k);
    for_each_line(g, k, [&](std::size_t base, std::size_t st, std::size_t n) {
      if (hit || n < 5) return;
      for (std::size_t j = 0; j < n; ++j) {
        if (!per && (j < 2 || j + 2 >= n)) continue;
        const double v = p[base + j * st];
        if (!(v < floor)) continue;
        const double l = p[base + ((j + n - 2) % n) * st], r = p[base + ((j + 2) % n) * st];
        if (l >= occupied && r >= occupied) {
          hit = base + j * st;
          return;
        }
      }
    });
  }
  return hit;
}

}  // namespace detail

// Method-of-lines RK4 for the continuity and Hamilton-Jacobi equations.
inline EvolutionResult solve_madelung(const HydroField& h0, const PotentialSpec& V, const Metric& metric,
                                      const MadelungOptions& opt) {
  const Grid& g = h0.grid();
  metric.check_grid(g);
  require_finite(h0.p, "madelung initial p");
  require_finite(h0.S, "madelung initial S");
  if (h0.p.min() < 0.0) throw InvalidArgument("madelung: negative initial density");
  if (opt.measure && uses_op(*opt.measure, Op::Dt)) throw InvalidArgument("madelung: dt() measures are not local");
  const double hb = h0.hbar;
  const double limit = opt.cfl * g.min_spacing() * g.min_spacing() * metric.min_mass() / hb;
  double dt = opt.dt > 0.0 ? opt.dt : limit;
  const std::size_t steps = detail::step_count(opt.T, dt);

  {
    const double pmax = h0.p.max();
    if (auto site = detail::find_interior_dip(h0.p, opt.node_floor * pmax, opt.node_occupied * pmax))
      throw NodeDetected(*site, "madelung: initial density has a node at site " + std::to_string(*site));
  }
  detail::MadelungRhs rhs(h0, V, metric, opt);
  const Expr measure = opt.measure.value_or(fisher_expr());
  auto result = std::make_shared<EvolutionResult>();
  EvolutionResult& r = *result;
  r.meta.method = "madelung";
  r.meta.dt = dt;
  r.meta.steps = steps;
  r.meta.snapshot_every = opt.snapshot_every;
  if (dt > limit * (1.0 + 1e-12)) {
    r.meta.cfl_warning = true;
    r.meta.warnings.push_back("dt " + format_double(dt) + " exceeds the CFL guard " + format_double(limit));
  }
  auto record = [&](double t, const HydroField& h) {
    r.times.push_back(t);
    r.hydro.push_back(h);
    r.norm.push_back(integrate(h.p));
    r.energy.push_back(energy_functional(h, V, measure, metric, rhs.lambda(), opt.measure_params));
    r.fisher.push_back(fisher_information(h, metric));
  };

  HydroField h = h0;
  record(0.0, h);
  ScalarField k1p, k1s, k2p, k2s, k3p, k3s, k4p, k4s;
  const std::size_t n = g.size();
  HydroField tmp = h;
  auto abort = [&](std::size_t step, std::size_t site, const std::string& what) {
    const double t_last = static_cast<double>(step - 1) * dt;
    if (r.times.back() != t_last) record(t_last, h);
    throw EvolutionAborted(site, "madelung: " + what + " at step " + std::to_string(step), result);
  };
  for (std::size_t step = 1; step <= steps; ++step) {
    try {
      rhs(h.p, h.S, k1p, k1s);
      for (std::size_t s = 0; s < n; ++s) tmp.p[s] = h.p[s] + 0.5 * dt * k1p[s], tmp.S[s] = h.S[s] + 0.5 * dt * k1s[s];
      rhs(tmp.p, tmp.S, k2p, k2s);
      for (std::size_t s = 0; s < n; ++s) tmp.p[s] = h.p[s] + 0.5 * dt * k2p[s], tmp.S[s] = h.S[s] + 0.5 * dt * k2s[s];
      rhs(tmp.p, tmp.S, k3p, k3s);
      for (std::size_t s = 0; s < n; ++s) tmp.p[s] = h.p[s] + dt * k3p[s], tmp.S[s] = h.S[s] + dt * k3s[s];
      rhs(tmp.p, tmp.S, k4p, k4s);
    } catch (const NonFiniteValue& e) {
      abort(step, e.site(), "non-finite intermediate stage");
    }

    HydroField next = h;
    std::size_t clamped = 0;
    for (std::size_t s = 0; s < n; ++s) {
      next.p[s] = h.p[s] + dt / 6.0 * (k1p[s] + 2.0 * k2p[s] + 2.0 * k3p[s] + k4p[s]);
      next.S[s] = h.S[s] + dt / 6.0 * (k1s[s] + 2.0 * k2s[s] + 2.0 * k3s[s] + k4s[s]);
      if (!std::isfinite(next.p[s]) || !std::isfinite(next.S[s])) abort(step, s, "non-finite field");
      if (next.p[s] < 1e-300) {
        next.p[s] = 1e-300;
        ++clamped;
      }
    }
    r.meta.clamped_sites = std::max(r.meta.clamped_sites, clamped);
    const double pmax = next.p.max();
    std::size_t vac = 0;
    for (std::size_t s = 0; s < n; ++s) vac += next.p[s] < opt.node_floor * pmax;
    r.meta.vacuum_sites = std::max(r.meta.vacuum_sites, vac);
    if (auto site = detail::find_interior_dip(next.p, opt.node_floor * pmax, opt.node_occupied * pmax))
      abort(step, *site, "density node formed at site " + std::to_string(*site));
    h = std::move(next);
    if (detail::snapshot_due(step, steps, opt.snapshot_every)) record(static_cast<double>(step) * dt, h);
  }
  return r;
}

}  // namespace infoqm
