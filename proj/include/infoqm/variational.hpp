#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "infoqm/dynamics.hpp"
#include "infoqm/errors.hpp"
#include "infoqm/fields.hpp"
#include "infoqm/measure_lang.hpp"
#include "infoqm/measures.hpp"
#include "infoqm/random.hpp"

namespace infoqm {

struct Trajectory {
  std::vector<double> times;
  std::vector<HydroField> fields;
  PotentialSpec V = ZeroPotential{};
  Metric metric{std::vector<double>{1.0}, 1};
  double lambda = 0.125;
  Expr measure = fisher_expr();
  ParamMap params;

  double dt() const { return times.at(1) - times.at(0); }
  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.size() < 3 || fields.size() != times.size())
      throw InvalidArgument("trajectory needs at least three slices with one field each");
    const double d = dt();
    if (!(d > 0.0)) throw InvalidArgument("trajectory times must increase");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (std::abs((times[i] - times[i - 1]) - d) > 1e-9 * d) throw InvalidArgument("trajectory time grid must be uniform");
    for (const auto& f : fields)
      if (!f.grid().same_shape(fields[0].grid())) throw InvalidArgument("trajectory slices must share one grid");
    metric.check_grid(fields[0].grid());
  }

  static Trajectory from_evolution(const EvolutionResult& r, const PotentialSpec& V, const Metric& metric,
                                   double lambda) {
    Trajectory t;
    t.times = r.times;
    if (!r.hydro.empty()) {
      t.fields = r.hydro;
    } else {
      DecomposeOptions o;
      o.node_threshold = 0.0;
      o.normalize = false;
      for (const auto& w : r.waves) t.fields.push_back(madelung_decompose(w, o));
    }
    t.V = V;
    t.metric = metric;
    t.lambda = lambda;
    return t;
  }
};

namespace detail {

inline double wrap_time_diff(double d, double hbar) { return wrap_diff(d, 2.0 * std::numbers::pi * hbar); }

// dS/dt at slice i: central inside, second-order one-sided at the ends.
inline ScalarField phase_rate(const Trajectory& tr, std::size_t i) {
  const std::size_t M = tr.size() - 1;
  const double dt = tr.dt(), hb = tr.fields[0].hbar;
  ScalarField out(tr.fields[i].grid_ptr());
  auto d = [&](std::size_t a, std::size_t b, std::size_t s) {
    return wrap_time_diff(tr.fields[b].S[s] - tr.fields[a].S[s], hb);
  };
  for (std::size_t s = 0; s < out.size(); ++s) {
    if (i == 0)
      out[s] = (3.0 * d(0, 1, s) - d(1, 2, s)) / (2.0 * dt);
    else if (i == M)
      out[s] = (3.0 * d(M - 1, M, s) - d(M - 2, M - 1, s)) / (2.0 * dt);
    else
      out[s] = (d(i, i + 1, s) + d(i - 1, i, s)) / (2.0 * dt);
  }
  return out;
}

inline ScalarField hj_classical(const Trajectory& tr, std::size_t i, const ScalarField& Vf) {
  const HydroField& h = tr.fields[i];
  ScalarField out = phase_rate(tr, i) + Vf;
  for (std::size_t k = 0; k < h.grid().dimension(); ++k) {
    ScalarField d = gradient(h.S, k, h.phase_diff());
    out += (d * d) * (0.5 * tr.metric.inverse_mass(k));
  }
  return out;
}

// Fisher uses the compact amplitude stencil; other measures go through the
// general functional derivative.
inline ScalarField measure_gradient(const Trajectory& tr, const HydroField& h) {
  if (auto c = coefficient_of(tr.measure, fisher_expr(), tr.params)) return fisher_variation(h.p, tr.metric) * *c;
  return functional_derivative(tr.measure, h, tr.metric, tr.params);
}

}  // namespace detail

struct ActionParts {
  double classical = 0.0;
  double measure = 0.0;  // lambda sum dt int p H
  double total() const { return classical + measure; }
};

inline ActionParts action_parts(const Trajectory& tr) {
  tr.validate();
  const double dt = tr.dt();
  ScalarField Vf = potential_field(tr.V, tr.fields[0].grid_ptr(), tr.metric);
  ActionParts a;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const HydroField& h = tr.fields[i];
    a.classical += dt * integrate(h.p * detail::hj_classical(tr, i, Vf));
    if (tr.lambda != 0.0) {
      DensityOptions dopt;
      a.measure += dt * tr.lambda * integrate(h.p * evaluate_density(tr.measure, h, tr.metric, tr.params, dopt).density);
    }
  }
  return a;
}

inline double discrete_action(const Trajectory& tr) { return action_parts(tr).total(); }

struct ElResidual {
  std::vector<ScalarField> residual_p;  // interior slices 1..M-1
  std::vector<ScalarField> residual_S;
  double norm_p = 0.0;  // p-weighted L2 over interior slices
  double norm_S = 0.0;  // L2 over interior slices
};

struct ElOptions {
  // sites with p below support_floor * max p are left out of norm_p
  double support_floor = 1e-10;
};

inline ElResidual el_residual(const Trajectory& tr, const ElOptions& opt = {}) {
  tr.validate();
  const double dt = tr.dt();
  ScalarField Vf = potential_field(tr.V, tr.fields[0].grid_ptr(), tr.metric);
  ElResidual out;
  double np = 0.0, ns = 0.0;
  for (std::size_t i = 1; i + 1 < tr.size(); ++i) {
    const HydroField& h = tr.fields[i];
    ScalarField rp = detail::hj_classical(tr, i, Vf);
    if (tr.lambda != 0.0) rp += detail::measure_gradient(tr, h) * tr.lambda;
    ScalarField rs = (tr.fields[i + 1].p - tr.fields[i - 1].p) * (1.0 / (2.0 * dt));
    for (std::size_t k = 0; k < h.grid().dimension(); ++k) {
      ScalarField dS = gradient(h.S, k, h.phase_diff());
      rs += gradient(h.p * dS, k) * tr.metric.inverse_mass(k);
    }
    const double cut = opt.support_floor * h.p.max();
    ScalarField wp = h.p.map([cut](double v) { return v < cut ? 0.0 : v; });
    np += dt * integrate(wp * rp * rp);
    ns += dt * integrate(rs * rs);
    out.residual_p.push_back(std::move(rp));
    out.residual_S.push_back(std::move(rs));
  }
  out.norm_p = std::sqrt(np);
  out.norm_S = std::sqrt(ns);
  return out;
}

struct PerturbationConfig {
  std::size_t count = 20;
  double amplitude = 1e-2;
  std::uint64_t seed = 1;
  double min_width = 0.3;  // in units of the initial standard deviation
  double max_width = 1.0;
  double center_spread = 2.0;
  std::optional<double> lambda;  // overrides the trajectory's multiplier
};

struct MinimalityReport {
  std::vector<double> delta_action;
  std::vector<double> delta_classical;
  std::vector<double> delta_measure;
  std::vector<double> measure_excess;  // delta_measure minus its first-order part
  std::size_t rejected = 0;
  bool all_positive = false;
  bool all_nonnegative = false;  // with the -1e-8 allowance
};

namespace detail {

struct Bump {
  std::vector<double> center, width;
  double sign = 1.0;
};

inline Trajectory perturb(const Trajectory& tr, const Bump& b, double eps, bool& ok) {
  Trajectory out = tr;
  ok = true;
  const std::size_t M = tr.size() - 1;
  const Grid& g = tr.fields[0].grid();
  for (std::size_t i = 1; i < M; ++i) {
    const double env = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(M));
    HydroField& h = out.fields[i];
    const double before = integrate(h.p);
    for (std::size_t s = 0; s < g.size(); ++s) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < g.dimension(); ++k) {
        double d = g.site_coordinate(s, k) - b.center[k];
        if (g.periodic(k)) d -= g.length(k) * std::round(d / g.length(k));
        r2 += d * d / (b.width[k] * b.width[k]);
      }
      const double f = 1.0 + eps * b.sign * env * std::exp(-0.5 * r2);
      if (!(f > 0.0)) ok = false;
      h.p[s] *= f;
    }
    h.p *= before / integrate(h.p);
  }
  return out;
}

}  // namespace detail

inline MinimalityReport minimality_check(const Trajectory& tr_in, const PerturbationConfig& cfg) {
  tr_in.validate();
  Trajectory tr = tr_in;
  if (cfg.lambda) tr.lambda = *cfg.lambda;
  const ActionParts base = action_parts(tr);
  const Moments m0 = moments(tr.fields[0]);
  const Grid& g = tr.fields[0].grid();
  const double dt = tr.dt();

  // first-order part of the measure term along each slice
  std::vector<ScalarField> grad;
  for (std::size_t i = 0; i < tr.size(); ++i)
    grad.push_back(tr.lambda != 0.0 ? functional_derivative(tr.measure, tr.fields[i], tr.metric, tr.params)
                                    : ScalarField(tr.fields[i].grid_ptr(), 0.0));

  MinimalityReport rep;
  Rng rng(cfg.seed);
  std::size_t attempts = 0;
  while (rep.delta_action.size() < cfg.count && attempts < 10 * cfg.count + 10) {
    ++attempts;
    detail::Bump b;
    for (std::size_t k = 0; k < g.dimension(); ++k) {
      const double sd = std::sqrt(std::max(m0.variance[k], 1e-300));
      b.center.push_back(m0.mean[k] + cfg.center_spread * sd * rng.uniform(-1.0, 1.0));
      b.width.push_back(sd * rng.uniform(cfg.min_width, cfg.max_width));
    }
    b.sign = rng.sign();
    bool ok = true;
    Trajectory pt = detail::perturb(tr, b, cfg.amplitude, ok);
    if (!ok) {
      ++rep.rejected;
      continue;
    }
    const ActionParts a = action_parts(pt);
    double linear = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i)
      linear += dt * tr.lambda * integrate(grad[i] * (pt.fields[i].p - tr.fields[i].p));
    rep.delta_action.push_back(a.total() - base.total());
    rep.delta_classical.push_back(a.classical - base.classical);
    rep.delta_measure.push_back(a.measure - base.measure);
    rep.measure_excess.push_back(a.measure - base.measure - linear);
  }
  rep.all_positive = !rep.delta_action.empty();
  rep.all_nonnegative = !rep.delta_action.empty();
  for (double d : rep.delta_action) {
    rep.all_positive = rep.all_positive && d > 0.0;
    rep.all_nonnegative = rep.all_nonnegative && d >= -1e-8;
  }
  return rep;
}

}  // namespace infoqm
