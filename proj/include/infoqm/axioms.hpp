#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "infoqm/errors.hpp"
#include "infoqm/fields.hpp"
#include "infoqm/lattice.hpp"
#include "infoqm/measure_lang.hpp"
#include "infoqm/measures.hpp"
#include "infoqm/numfmt.hpp"
#include "infoqm/random.hpp"

namespace infoqm {

using json = nlohmann::ordered_json;

// --- ensemble ----------------------------------------------------------------

enum class SampleKind { Periodic, EdgeInside, EdgeOutside };

inline const char* sample_kind_name(SampleKind k) {
  switch (k) {
    case SampleKind::Periodic:
      return "periodic";
    case SampleKind::EdgeInside:
      return "truncated_edge_inside";
    default:
      return "truncated_edge_outside";
  }
}

inline SampleKind sample_kind_from(const std::string& s) {
  if (s == "periodic") return SampleKind::Periodic;
  if (s == "truncated_edge_inside") return SampleKind::EdgeInside;
  if (s == "truncated_edge_outside") return SampleKind::EdgeOutside;
  throw InvalidArgument("unknown sample kind '" + s + "'");
}

struct Bump1 {
  double weight = 1.0, center = 0.0, width = 1.0;
};

// Everything needed to rebuild one ensemble member exactly.
struct SampleSpec {
  std::size_t index = 0;
  SampleKind kind = SampleKind::Periodic;
  std::size_t points = 96;
  double length = 2.0 * std::numbers::pi;
  double mass = 1.0;
  double background = 0.05;
  std::vector<Bump1> bumps;
  std::vector<double> phase;  // S = sum_j phase[j] sin(j k x + j)
  std::vector<double> rate_p, rate_S;

  bool periodic() const { return kind == SampleKind::Periodic; }
};

inline json to_json(const SampleSpec& s) {
  json b = json::array();
  for (const auto& x : s.bumps) b.push_back({x.weight, x.center, x.width});
  return json{{"index", s.index},   {"kind", sample_kind_name(s.kind)}, {"points", s.points},
              {"length", s.length}, {"mass", s.mass},                    {"background", s.background},
              {"bumps", b},         {"phase", s.phase},                  {"rate_p", s.rate_p},
              {"rate_S", s.rate_S}};
}

inline SampleSpec sample_from_json(const json& j) {
  SampleSpec s;
  s.index = j.at("index").get<std::size_t>();
  s.kind = sample_kind_from(j.at("kind").get<std::string>());
  s.points = j.at("points").get<std::size_t>();
  s.length = j.at("length").get<double>();
  s.mass = j.at("mass").get<double>();
  s.background = j.at("background").get<double>();
  for (const auto& b : j.at("bumps")) s.bumps.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()});
  s.phase = j.at("phase").get<std::vector<double>>();
  s.rate_p = j.at("rate_p").get<std::vector<double>>();
  s.rate_S = j.at("rate_S").get<std::vector<double>>();
  return s;
}

struct EnsembleConfig {
  std::uint64_t seed = 1;
  std::size_t samples = 50;
  bool truncated = true;  // include edge samples of both flux signs
  std::size_t points = 96;
  std::size_t threads = 1;
};

struct Sample {
  SampleSpec spec;
  HydroField state;
  Metric metric{std::vector<double>{1.0}, 1};
  TimeContext time;
};

namespace detail {

inline double trig_sum(const std::vector<double>& c, double kx) {
  double r = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    const double m = static_cast<double>(j + 1);
    r += c[j] * std::sin(m * kx + m);
  }
  return r;
}

}  // namespace detail

// Builds the field; returns nullopt for a member that cannot be normalized.
inline std::optional<Sample> realize(const SampleSpec& s, double hbar = 1.0) {
  const Boundary bc = s.periodic() ? Boundary::Periodic : Boundary::Truncated;
  auto g = Grid::make(GridSpec::line(s.points, 0.0, s.length, bc));
  const double L = s.length, k = 2.0 * std::numbers::pi / L;
  ScalarField p = ScalarField::from_function(g, [&](auto x) {
    double v = s.background;
    for (const auto& b : s.bumps) {
      if (s.periodic()) {
        for (int img = -2; img <= 2; ++img) {
          const double z = (x[0] + img * L - b.center) / b.width;
          v += b.weight * std::exp(-0.5 * z * z);
        }
      } else {
        const double z = (x[0] - b.center) / b.width;
        v += b.weight * std::exp(-0.5 * z * z);
      }
    }
    return v;
  });
  const double norm = integrate(p);
  if (!(norm > 0.0) || !std::isfinite(norm) || !(p.min() > 0.0)) return std::nullopt;
  p *= 1.0 / norm;
  ScalarField S = ScalarField::from_function(g, [&](auto x) { return detail::trig_sum(s.phase, k * x[0]); });
  Sample out{s, HydroField(p, S, hbar), Metric({s.mass}, 1), {}};
  const double span = 1e-3;
  auto shifted = [&](double sgn) {
    ScalarField pp(g), ss(g);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double kx = k * g->site_coordinate(i, 0);
      pp[i] = p[i] * std::exp(sgn * 0.5 * span * detail::trig_sum(s.rate_p, kx));
      ss[i] = S[i] + sgn * 0.5 * span * detail::trig_sum(s.rate_S, kx);
    }
    return HydroField(pp, ss, hbar);
  };
  out.time = TimeContext{shifted(-1.0), shifted(1.0), span};
  return out;
}

inline std::vector<SampleSpec> generate_ensemble(const EnsembleConfig& cfg) {
  std::vector<SampleSpec> out;
  Rng rng(Rng::mix(cfg.seed, 0xa710));
  const double L = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    SampleSpec s;
    s.index = i;
    s.points = cfg.points;
    s.length = L;
    s.mass = rng.uniform(0.5, 2.0);
    s.background = rng.uniform(0.02, 0.1);
    if (cfg.truncated && i % 4 == 1)
      s.kind = SampleKind::EdgeInside;
    else if (cfg.truncated && i % 4 == 3)
      s.kind = SampleKind::EdgeOutside;
    const int parts = 1 + static_cast<int>(rng.next() % 3);
    for (int c = 0; c < parts; ++c)
      s.bumps.push_back({rng.uniform(0.2, 1.0), rng.uniform(0.0, L), rng.uniform(0.08, 0.2) * L});
    if (!s.periodic()) {
      // dominant bump straddling the left edge; its side decides the flux sign
      const double w = rng.uniform(0.3, 0.6);
      const double off = rng.uniform(0.4, 1.0) * w;
      s.bumps[0] = {rng.uniform(2.0, 4.0), s.kind == SampleKind::EdgeInside ? off : -off, w};
      for (std::size_t c = 1; c < s.bumps.size(); ++c) s.bumps[c].center = rng.uniform(0.3 * L, 0.8 * L);
    }
    for (int j = 0; j < 3; ++j) s.phase.push_back(0.3 * rng.normal());
    for (int j = 0; j < 3; ++j) s.rate_p.push_back(0.3 * rng.normal());
    for (int j = 0; j < 3; ++j) s.rate_S.push_back(0.3 * rng.normal());
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) f(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline double measure_on(const Expr& e, const Sample& s, const ParamMap& params, bool dt) {
  DensityOptions o;
  if (dt) o.time = &s.time;
  return integrate(s.state.p * evaluate_density(e, s.state, s.metric, params, o).density);
}

inline Sample uniform_version(const Sample& s) {
  Sample u = s;
  const double L = s.state.grid().length(0);
  u.state.p = ScalarField(s.state.grid_ptr(), 1.0 / L);
  u.time.before.p = u.state.p;
  u.time.after.p = u.state.p;
  return u;
}

inline Sample scaled_version(const Sample& s, double lambda) {
  Sample u = s;
  u.state.p *= lambda;
  u.time.before.p *= lambda;
  u.time.after.p *= lambda;
  return u;
}

// Product of two one-axis samples as a two-particle state.
inline Sample product_of(const Sample& a, const Sample& b) {
  GridSpec spec{2, 1, {a.state.grid().spec().axes[0], b.state.grid().spec().axes[0]}};
  auto g = Grid::make(spec);
  auto tensor = [&](const HydroField& x, const HydroField& y) {
    ScalarField p(g), S(g);
    for (std::size_t s = 0; s < g->size(); ++s) {
      const std::size_t i = g->axis_index(s, 0), j = g->axis_index(s, 1);
      p[s] = x.p[i] * y.p[j];
      S[s] = x.S[i] + y.S[j];
    }
    return HydroField(p, S, x.hbar);
  };
  Sample out{a.spec, tensor(a.state, b.state), Metric({a.spec.mass, b.spec.mass}, 1), {}};
  out.time = TimeContext{tensor(a.time.before, b.time.before), tensor(a.time.after, b.time.after), a.time.span};
  return out;
}

// Quantized boost: one momentum quantum, shifted by four sites.
struct BoostSetup {
  double velocity = 0.0, time = 0.0;
};

inline BoostSetup boost_setup(const Sample& s) {
  const Grid& g = s.state.grid();
  const double v = 2.0 * std::numbers::pi * s.state.hbar / (s.spec.mass * g.length(0));
  return {v, 4.0 * g.spacing(0) / v};
}

}  // namespace detail

// --- report ------------------------------------------------------------------

enum class Verdict { Pass, Fail, Skipped };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Pass:
      return "pass";
    case Verdict::Fail:
      return "fail";
    default:
      return "skipped";
  }
}

struct Witness {
  std::string check;
  std::vector<SampleSpec> samples;
  double lambda = 0.0;    // homogeneity scale
  double velocity = 0.0;  // galilean
  double time = 0.0;
  double measured = 0.0;
  double reference = 0.0;
  double deviation = 0.0;
  std::string note;
};

inline json to_json(const Witness& w) {
  json s = json::array();
  for (const auto& x : w.samples) s.push_back(to_json(x));
  json j{{"check", w.check}, {"samples", s}, {"measured", w.measured}, {"reference", w.reference}, {"deviation", w.deviation}};
  if (w.lambda != 0.0) j["lambda"] = w.lambda;
  if (w.velocity != 0.0) j["velocity"] = w.velocity, j["time"] = w.time;
  if (!w.note.empty()) j["note"] = w.note;
  return j;
}

inline Witness witness_from_json(const json& j) {
  Witness w;
  w.check = j.at("check").get<std::string>();
  for (const auto& s : j.at("samples")) w.samples.push_back(sample_from_json(s));
  w.measured = j.at("measured").get<double>();
  w.reference = j.at("reference").get<double>();
  w.deviation = j.at("deviation").get<double>();
  if (j.contains("lambda")) w.lambda = j["lambda"].get<double>();
  if (j.contains("velocity")) w.velocity = j["velocity"].get<double>(), w.time = j["time"].get<double>();
  if (j.contains("note")) w.note = j["note"].get<std::string>();
  return w;
}

struct CheckResult {
  Verdict verdict = Verdict::Pass;
  std::optional<Witness> witness;
  std::vector<Witness> extra;  // positivity: flux witnesses of each sign
  std::string detail;
  std::size_t evaluated = 0;
};

struct AxiomReport {
  std::string measure;
  ParamMap params;
  std::uint64_t seed = 0;
  std::size_t samples = 0, skipped = 0, periodic = 0, truncated = 0;
  CheckResult positivity, uniform_minimum, locality, homogeneity, separability, galilean, translation, ahd;
  int derivative_count = 0, spatial_derivative_count = 0;

  std::vector<std::pair<std::string, const CheckResult*>> checks() const {
    return {{"positivity", &positivity},   {"uniform_minimum", &uniform_minimum}, {"locality", &locality},
            {"homogeneity", &homogeneity}, {"separability", &separability},       {"galilean", &galilean},
            {"translation", &translation}, {"ahd", &ahd}};
  }
  bool all_pass() const {
    for (const auto& [n, c] : checks())
      if (c->verdict == Verdict::Fail) return false;
    return true;
  }
  std::vector<std::string> failed() const {
    std::vector<std::string> out;
    for (const auto& [n, c] : checks())
      if (c->verdict == Verdict::Fail) out.push_back(n);
    return out;
  }
};

inline json to_json(const AxiomReport& r) {
  json checks = json::object();
  for (const auto& [name, c] : r.checks()) {
    json j{{"verdict", verdict_name(c->verdict)}, {"evaluated", c->evaluated}};
    if (!c->detail.empty()) j["detail"] = c->detail;
    if (c->witness) j["witness"] = to_json(*c->witness);
    if (!c->extra.empty()) {
      json e = json::array();
      for (const auto& w : c->extra) e.push_back(to_json(w));
      j["flux_witnesses"] = e;
    }
    checks[name] = j;
  }
  json params = json::object();
  for (const auto& [k, v] : r.params) params[k] = v;
  return json{{"measure", r.measure},
              {"params", params},
              {"ensemble",
               {{"seed", r.seed}, {"size", r.samples}, {"skipped", r.skipped}, {"periodic", r.periodic}, {"truncated", r.truncated}}},
              {"derivatives", {{"spatial", r.spatial_derivative_count}, {"total", r.derivative_count}}},
              {"checks", checks},
              {"all_pass", r.all_pass()}};
}

// --- checks ------------------------------------------------------------------

struct AxiomTolerances {
  double positivity = 1e-10;
  double uniform = 1e-10;
  double relative = 1e-8;
};

namespace detail {

inline double rel_dev(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// Standalone re-evaluation of a witness; returns the deviation it records.
inline double evaluate_witness(const Expr& e, const ParamMap& params, const Witness& w, double* measured = nullptr,
                               double* reference = nullptr) {
  const bool dt = uses_op(e, Op::Dt);
  auto get = [](const SampleSpec& s) {
    auto r = realize(s);
    if (!r) throw InvalidArgument("witness sample cannot be realized");
    return *r;
  };
  double m = 0.0, ref = 0.0, dev = 0.0;
  if (w.check == "positivity") {
    m = measure_on(e, get(w.samples.at(0)), params, dt);
    dev = m;
  } else if (w.check == "surface_flux") {
    Sample s = get(w.samples.at(0));
    m = surface_term(s.state, s.metric);
    dev = m;
  } else if (w.check == "uniform_minimum") {
    Sample s = get(w.samples.at(0));
    m = measure_on(e, uniform_version(s), params, dt);
    ref = measure_on(e, s, params, dt);
    dev = m - ref;
  } else if (w.check == "uniform_phase_independence") {
    Sample s = get(w.samples.at(0));
    Sample u = uniform_version(s);
    m = measure_on(e, u, params, dt);
    u.state.S = ScalarField(u.state.grid_ptr(), 0.0);
    u.time.before.S = u.state.S;
    u.time.after.S = u.state.S;
    ref = measure_on(e, u, params, dt);
    dev = m - ref;
  } else if (w.check == "homogeneity") {
    Sample s = get(w.samples.at(0)), sl = scaled_version(s, w.lambda);
    DensityOptions o0, o1;
    if (dt) o0.time = &s.time, o1.time = &sl.time;
    const ScalarField H = evaluate_density(e, s.state, s.metric, params, o0).density;
    const ScalarField Hl = evaluate_density(e, sl.state, sl.metric, params, o1).density;
    m = linf_distance(H, Hl);
    ref = H.max_abs();
    dev = m / std::max(1.0, ref);
  } else if (w.check == "separability") {
    Sample a = get(w.samples.at(0)), b = get(w.samples.at(1));
    m = measure_on(e, product_of(a, b), params, dt);
    ref = measure_on(e, a, params, dt) + measure_on(e, b, params, dt);
    dev = rel_dev(m, ref);
  } else if (w.check == "galilean") {
    Sample s = get(w.samples.at(0));
    Sample b = s;
    b.state = galilean_boost(s.state, s.metric, {w.velocity}, w.time);
    m = measure_on(e, b, params, false);
    ref = measure_on(e, s, params, false);
    dev = rel_dev(m, ref);
  } else {
    throw InvalidArgument("witness check '" + w.check + "' has no numeric replay");
  }
  if (measured) *measured = m;
  if (reference) *reference = ref;
  return dev;
}

inline Witness make_witness(const Expr& e, const ParamMap& params, std::string check, std::vector<SampleSpec> samples,
                            double lambda = 0.0, double velocity = 0.0, double time = 0.0) {
  Witness w;
  w.check = std::move(check);
  w.samples = std::move(samples);
  w.lambda = lambda;
  w.velocity = velocity;
  w.time = time;
  w.deviation = evaluate_witness(e, params, w, &w.measured, &w.reference);
  return w;
}

}  // namespace detail

inline double replay_witness(const Expr& e, const ParamMap& params, const Witness& w) {
  return detail::evaluate_witness(e, params, w);
}

// Runs on an explicit list of members; cfg supplies the seed label and thread count.
inline AxiomReport run_axiom_suite(const Expr& e, const std::vector<SampleSpec>& specs, const EnsembleConfig& cfg,
                                   const ParamMap& params_in = {}, const AxiomTolerances& tol = {}) {
  AxiomReport r;
  r.measure = to_string(e);
  r.seed = cfg.seed;
  r.samples = specs.size();

  ParamMap params = params_in;
  std::set<std::string> names;
  collect_params(e, names);
  for (const auto& n : names)
    if (!params.count(n)) throw InvalidArgument("measure parameter '" + n + "' has no value");
  r.params = params;
  const bool dt = uses_op(e, Op::Dt);

  AuditOptions ao;
  ao.params = params;
  const StructuralReport sr = structural_audit(e, ao);
  r.derivative_count = sr.max_total_derivatives;
  r.spatial_derivative_count = sr.max_derivatives;

  std::vector<std::optional<Sample>> samples(specs.size());
  detail::parallel_for(specs.size(), cfg.threads, [&](std::size_t i) { samples[i] = realize(specs[i]); });

  struct PerSample {
    double value = 0.0, flux = 0.0, uniform = 0.0, uniform_zero_S = 0.0, homog_dev = 0.0, homog_lambda = 0.0;
    double boosted = 0.0;
    bool galilean_done = false;
  };
  std::vector<PerSample> per(specs.size());
  detail::parallel_for(specs.size(), cfg.threads, [&](std::size_t i) {
    if (!samples[i]) return;
    const Sample& s = *samples[i];
    PerSample& q = per[i];
    q.value = detail::measure_on(e, s, params, dt);
    q.flux = surface_term(s.state, s.metric);
    for (double lam : {0.5, 2.0, 10.0}) {
      Sample sl = detail::scaled_version(s, lam);
      DensityOptions o0, o1;
      if (dt) o0.time = &s.time, o1.time = &sl.time;
      const ScalarField H = evaluate_density(e, s.state, s.metric, params, o0).density;
      const ScalarField Hl = evaluate_density(e, sl.state, sl.metric, params, o1).density;
      const double d = linf_distance(H, Hl) / std::max(1.0, H.max_abs());
      if (d > q.homog_dev) q.homog_dev = d, q.homog_lambda = lam;
    }
    if (s.spec.periodic()) {
      Sample u = detail::uniform_version(s);
      q.uniform = detail::measure_on(e, u, params, dt);
      u.state.S = ScalarField(u.state.grid_ptr(), 0.0);
      u.time.before.S = u.state.S;
      u.time.after.S = u.state.S;
      q.uniform_zero_S = detail::measure_on(e, u, params, dt);
      if (!dt) {
        const auto bs = detail::boost_setup(s);
        Sample b = s;
        b.state = galilean_boost(s.state, s.metric, {bs.velocity}, bs.time);
        q.boosted = detail::measure_on(e, b, params, false);
        q.galilean_done = true;
      }
    }
  });

  // merge in index order
  std::optional<std::size_t> worst_pos, worst_uni, worst_phase, worst_homog, worst_gal, neg_flux, pos_flux;
  double worst_pos_v = 0.0, worst_uni_v = 0.0, worst_phase_v = 0.0, worst_homog_v = 0.0, worst_gal_v = 0.0;
  double neg_flux_v = 0.0, pos_flux_v = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!samples[i]) {
      ++r.skipped;
      continue;
    }
    const PerSample& q = per[i];
    (specs[i].periodic() ? r.periodic : r.truncated)++;
    ++r.positivity.evaluated;
    ++r.homogeneity.evaluated;
    if (q.value < -tol.positivity && q.value < worst_pos_v) worst_pos_v = q.value, worst_pos = i;
    if (!specs[i].periodic()) {
      if (q.flux < neg_flux_v) neg_flux_v = q.flux, neg_flux = i;
      if (q.flux > pos_flux_v) pos_flux_v = q.flux, pos_flux = i;
    }
    if (q.homog_dev > tol.relative && q.homog_dev > worst_homog_v) worst_homog_v = q.homog_dev, worst_homog = i;
    if (specs[i].periodic()) {
      ++r.uniform_minimum.evaluated;
      const double excess = q.uniform - q.value;
      if (excess > tol.uniform && excess > worst_uni_v) worst_uni_v = excess, worst_uni = i;
      const double pd = std::abs(q.uniform - q.uniform_zero_S);
      if (pd > tol.uniform * std::max(1.0, std::abs(q.uniform_zero_S)) && pd > worst_phase_v) worst_phase_v = pd, worst_phase = i;
      if (q.galilean_done) {
        ++r.galilean.evaluated;
        const double d = detail::rel_dev(q.boosted, q.value);
        if (d > tol.relative && d > worst_gal_v) worst_gal_v = d, worst_gal = i;
      }
    }
  }

  // positivity
  if (worst_pos) {
    r.positivity.verdict = Verdict::Fail;
    r.positivity.witness = detail::make_witness(e, params, "positivity", {specs[*worst_pos]});
  }
  if (neg_flux) r.positivity.extra.push_back(detail::make_witness(e, params, "surface_flux", {specs[*neg_flux]}));
  if (pos_flux) r.positivity.extra.push_back(detail::make_witness(e, params, "surface_flux", {specs[*pos_flux]}));
  r.positivity.detail = r.truncated ? "truncated members carry boundary flux of both signs" : "periodic members only";

  // uniform minimum: lowest value at uniform p, and that value independent of S
  if (worst_uni) {
    r.uniform_minimum.verdict = Verdict::Fail;
    r.uniform_minimum.witness = detail::make_witness(e, params, "uniform_minimum", {specs[*worst_uni]});
  } else if (worst_phase) {
    r.uniform_minimum.verdict = Verdict::Fail;
    r.uniform_minimum.witness = detail::make_witness(e, params, "uniform_phase_independence", {specs[*worst_phase]});
  }
  if (worst_uni && worst_phase)
    r.uniform_minimum.extra.push_back(detail::make_witness(e, params, "uniform_phase_independence", {specs[*worst_phase]}));
  r.uniform_minimum.detail = "periodic members; uniform p with each member's S";
  if (r.uniform_minimum.evaluated == 0) r.uniform_minimum.verdict = Verdict::Skipped;

  r.locality.detail = "pointwise density by construction";

  // homogeneity: numeric over the ensemble, symbolic from the audit
  if (worst_homog) {
    r.homogeneity.verdict = Verdict::Fail;
    r.homogeneity.witness =
        detail::make_witness(e, params, "homogeneity", {specs[*worst_homog]}, per[*worst_homog].homog_lambda);
  } else if (sr.homogeneity == Homogeneity::Inhomogeneous) {
    r.homogeneity.verdict = Verdict::Fail;
  }
  r.homogeneity.detail = "symbolic " + sr.symbolic + (sr.numeric_agrees ? "" : " (numeric disagrees)");

  // separability over consecutive periodic pairs
  {
    std::vector<std::size_t> per_idx;
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (samples[i] && specs[i].periodic()) per_idx.push_back(i);
    const std::size_t pairs = std::min<std::size_t>(5, per_idx.size() / 2);
    std::vector<double> dev(pairs, 0.0);
    detail::parallel_for(pairs, cfg.threads, [&](std::size_t k) {
      const Sample& a = *samples[per_idx[2 * k]];
      const Sample& b = *samples[per_idx[2 * k + 1]];
      const double joint = detail::measure_on(e, detail::product_of(a, b), params, dt);
      dev[k] = detail::rel_dev(joint, detail::measure_on(e, a, params, dt) + detail::measure_on(e, b, params, dt));
    });
    std::optional<std::size_t> worst;
    double wv = 0.0;
    for (std::size_t k = 0; k < pairs; ++k)
      if (dev[k] > tol.relative && dev[k] > wv) wv = dev[k], worst = k;
    r.separability.evaluated = pairs;
    if (worst) {
      r.separability.verdict = Verdict::Fail;
      r.separability.witness = detail::make_witness(e, params, "separability",
                                                    {specs[per_idx[2 * *worst]], specs[per_idx[2 * *worst + 1]]});
    }
    if (pairs == 0) r.separability.verdict = Verdict::Skipped;
    r.separability.detail = "two-particle products of periodic members";
  }

  // galilean
  if (dt) {
    r.galilean.verdict = Verdict::Skipped;
    r.galilean.detail = "time derivatives: a moving frame is not representable inside the two-snapshot stencil";
  } else if (worst_gal) {
    r.galilean.verdict = Verdict::Fail;
    const auto bs = detail::boost_setup(*samples[*worst_gal]);
    r.galilean.witness = detail::make_witness(e, params, "galilean", {specs[*worst_gal]}, 0.0, bs.velocity, bs.time);
    r.galilean.detail = "quantized boost, one momentum quantum";
  } else {
    r.galilean.detail = "quantized boost, one momentum quantum";
    if (r.galilean.evaluated == 0) r.galilean.verdict = Verdict::Skipped;
  }

  // translation
  if (sr.uses_x) {
    r.translation.verdict = Verdict::Fail;
    Witness w;
    w.check = "translation";
    std::string axes;
    for (auto a : sr.coordinates) axes += (axes.empty() ? "x" : ",x") + std::to_string(a + 1);
    w.note = "explicit coordinate dependence on " + axes;
    w.measured = static_cast<double>(sr.coordinates.size());
    r.translation.witness = w;
  }
  r.translation.detail = "structural";

  // AHD on the total derivative count
  r.ahd.detail = "spatial " + std::to_string(sr.max_derivatives) + ", total " + std::to_string(sr.max_total_derivatives);
  if (sr.max_total_derivatives > 2) {
    r.ahd.verdict = Verdict::Fail;
    Witness w;
    w.check = "ahd";
    w.measured = sr.max_total_derivatives;
    w.reference = 2;
    w.deviation = sr.max_total_derivatives - 2;
    w.note = "derivatives in one product term";
    r.ahd.witness = w;
  }
  return r;
}

inline AxiomReport run_axiom_suite(const Expr& e, const EnsembleConfig& cfg, const ParamMap& params = {},
                                   const AxiomTolerances& tol = {}) {
  return run_axiom_suite(e, generate_ensemble(cfg), cfg, params, tol);
}

}  // namespace infoqm
