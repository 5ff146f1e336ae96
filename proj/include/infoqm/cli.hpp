#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "infoqm/axioms.hpp"
#include "infoqm/config.hpp"
#include "infoqm/dynamics.hpp"
#include "infoqm/measures.hpp"
#include "infoqm/uniqueness.hpp"
#include "infoqm/variational.hpp"

namespace infoqm::cli {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

namespace fs = std::filesystem;

inline std::string csv_header(const std::string& hash) { return std::string("# infoqm ") + kVersion + " config_hash=" + hash + "\n"; }

inline json json_header(const std::string& hash) { return json{{"version", kVersion}, {"config_hash", hash}}; }

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError(p.string() + ": cannot open for writing");
  os << text;
  if (!os) throw Error("IoError", p.string() + ": write failed");
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t dflt) {
  if (flag) return *flag;
  if (const char* env = std::getenv("INFOQM_SEED")) {
    double v = 0.0;
    if (!parse_double(env, v) || v < 0 || v != std::floor(v) || v > 1.8e19)
      throw ConfigError(std::string("INFOQM_SEED: expected a non-negative integer, got '") + env + "'");
    return static_cast<std::uint64_t>(v);
  }
  return dflt;
}

inline ParamMap parse_params(const std::vector<std::string>& items) {
  ParamMap out;
  for (const auto& it : items) {
    const auto eq = it.find('=');
    double v = 0.0;
    if (eq == std::string::npos || eq == 0 || !parse_double(it.substr(eq + 1), v) || !std::isfinite(v))
      throw ConfigError("--param expects name=value, got '" + it + "'");
    out[it.substr(0, eq)] = v;
  }
  return out;
}

inline Expr parse_measure(const std::string& text) {
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), e.column(), std::string("--measure: ") + e.what());
  }
}

inline EvolutionResult evolve(const RunConfig& c, SolverKind kind) {
  const GridPtr g = c.make_grid();
  const Metric m = c.metric();
  const WaveField psi0 = initial_state(c, g);
  if (kind == SolverKind::Madelung) {
    MadelungOptions mo;
    mo.T = c.T;
    mo.dt = c.dt;
    mo.snapshot_every = c.snapshot_every;
    mo.lambda = c.phys.lambda;
    mo.vacuum_floor = c.vacuum_floor;
    if (c.nonlinearity == "custom") mo.measure = c.measure, mo.measure_params = c.measure_params;
    else if (c.nonlinearity != "none") throw ConfigError("madelung solver supports nonlinearity none or custom only");
    DecomposeOptions d;
    d.node_threshold = 0.0;  // interior nodes are caught by the solver's own check
    return solve_madelung(madelung_decompose(psi0, d), c.potential, m, mo);
  }
  SolverOptions so;
  so.T = c.T;
  so.dt = c.dt;
  so.snapshot_every = c.snapshot_every;
  if (kind == SolverKind::Linear) {
    if (c.nonlinearity != "none") throw ConfigError("linear solver: set nonlinearity = none or use --solver nonlinear");
    return solve_linear(psi0, c.potential, m, so, c.phys);
  }
  return solve_nonlinear(psi0, c.potential, m, c.nonlinearity_spec(), c.phys, so);
}

inline void write_simulation(const fs::path& dir, const RunConfig& c, const EvolutionResult& r) {
  fs::create_directories(dir);
  std::string snap = csv_header(c.hash);
  const bool have_waves = !r.waves.empty();
  const Grid& g = have_waves ? *r.waves[0].grid : r.hydro[0].grid();
  snap += "t," + state_csv_header(g) + "\n";
  DecomposeOptions raw;
  raw.node_threshold = 0.0;
  raw.normalize = false;
  std::ostringstream os;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const HydroField h = have_waves ? madelung_decompose(r.waves[i], raw) : r.hydro[i];
    const WaveField w = have_waves ? r.waves[i] : madelung_compose(r.hydro[i]);
    write_state_rows(os, h, w, format_double(r.times[i]) + ",");
  }
  snap += os.str();
  write_text(dir / "snapshots.csv", snap);

  std::string cons = csv_header(c.hash) + "t,norm,energy,I_F\n";
  for (std::size_t i = 0; i < r.size(); ++i)
    cons += format_double(r.times[i]) + "," + format_double(r.norm[i]) + "," + format_double(r.energy[i]) + "," +
            format_double(r.fisher[i]) + "\n";
  write_text(dir / "conserved.csv", cons);

  json meta{{"infoqm", json_header(c.hash)},
            {"method", r.meta.method},
            {"dt", r.meta.dt},
            {"steps", r.meta.steps},
            {"snapshot_every", r.meta.snapshot_every},
            {"snapshots", r.size()},
            {"clamped_sites", r.meta.clamped_sites},
            {"vacuum_sites", r.meta.vacuum_sites},
            {"cfl_warning", r.meta.cfl_warning},
            {"warnings", r.meta.warnings}};
  write_json(dir / "meta.json", meta);
}

inline std::string option_hash(const std::string& canonical) { return hex64(fnv1a(canonical)); }

}  // namespace detail

// Runs one command line; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  using namespace detail;

  CLI::App app{"infoqm: information measures and quantum dynamics"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 1;
  bool deterministic = false;
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--threads", threads, "worker threads for parallel loops")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "fixed reduction order (always on for shipped loops)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "evolve the configured initial state");
  std::string sim_cfg, sim_solver, sim_out;
  sim->add_option("--config", sim_cfg)->required();
  sim->add_option("--solver", sim_solver)->check(CLI::IsMember({"linear", "madelung", "nonlinear"}));
  sim->add_option("--out", sim_out)->required();

  // measure eval
  auto* meas = app.add_subcommand("measure", "measure functionals");
  meas->require_subcommand(1);
  auto* meval = meas->add_subcommand("eval", "evaluate a measure on the configured initial state");
  std::string me_cfg, me_measure, me_out;
  std::vector<std::string> me_params;
  meval->add_option("--config", me_cfg)->required();
  meval->add_option("--measure", me_measure);
  meval->add_option("--param", me_params);
  meval->add_option("--out", me_out);

  // axioms
  auto* ax = app.add_subcommand("axioms", "axiom checks and the uniqueness scan");
  ax->require_subcommand(1);
  auto* axc = ax->add_subcommand("check", "run the axiom suite on a measure");
  std::string axc_measure, axc_report;
  std::size_t axc_samples = 50, axc_points = 96;
  std::vector<std::string> axc_params;
  bool axc_periodic = false;
  axc->add_option("--measure", axc_measure)->required();
  axc->add_option("--seed", seed_flag);
  axc->add_option("--samples", axc_samples)->check(CLI::PositiveNumber);
  axc->add_option("--points", axc_points)->check(CLI::Range(8, 4096));
  axc->add_option("--param", axc_params);
  axc->add_flag("--periodic-only", axc_periodic);
  axc->add_option("--report", axc_report);
  auto* axd = ax->add_subcommand("derive", "uniqueness scan over the finite candidate basis");
  ScanConfig scfg;
  std::string axd_out;
  axd->add_option("--max-terms", scfg.max_terms)->check(CLI::Range(1, 3));
  axd->add_option("--ahd-bound", scfg.ahd_bound)->check(CLI::Range(0, 8));
  axd->add_flag("--periodic-only", scfg.periodic_only);
  axd->add_option("--seed", seed_flag);
  axd->add_option("--out", axd_out);

  // variational verify
  auto* var = app.add_subcommand("variational", "discrete action checks");
  var->require_subcommand(1);
  auto* vv = var->add_subcommand("verify", "EL residuals and minimality on a fresh trajectory");
  std::string vv_cfg, vv_out;
  vv->add_option("--config", vv_cfg)->required();
  vv->add_option("--seed", seed_flag);
  vv->add_option("--out", vv_out)->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "linear vs madelung on one config");
  std::string cmp_cfg, cmp_out;
  cmp->add_option("--config", cmp_cfg)->required();
  cmp->add_option("--out", cmp_out)->required();

  auto error_line = [&](const std::string& code, const std::string& msg) {
    err << "error: " << json{{"code", code}, {"message", msg}}.dump() << "\n";
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    error_line("UsageError", e.what());
    return 1;
  }

  try {
    if (*sim) {
      RunConfig c = load_run_config(sim_cfg);
      if (!sim_solver.empty()) c.solver = solver_kind_from(sim_solver);
      try {
        const EvolutionResult r = evolve(c, c.solver);
        write_simulation(sim_out, c, r);
        for (const auto& w : r.meta.warnings) err << "warning: " << w << "\n";
        out << "simulate: " << r.meta.method << ", " << r.size() << " snapshots, norm drift "
            << format_double(std::abs(r.norm.back() - r.norm.front())) << "\n";
      } catch (const EvolutionAborted& e) {
        write_simulation(sim_out, c, e.partial());
        throw;
      }
      return 0;
    }

    if (*meval) {
      RunConfig c = load_run_config(me_cfg);
      Expr e = me_measure.empty() ? c.measure : parse_measure(me_measure);
      ParamMap params = c.measure_params;
      for (const auto& [k, v] : parse_params(me_params)) params[k] = v;
      const GridPtr g = c.make_grid();
      DecomposeOptions d;
      d.node_threshold = 0.0;
      const HydroField h = madelung_decompose(initial_state(c, g), d);
      MeasureOptions mo;
      mo.boundary_flux = true;
      const MeasureValue mv = measure_value(e, h, c.metric(), params, mo);
      const std::string hash = option_hash(c.hash + "|" + to_string(e));
      json j{{"infoqm", json_header(hash)},
             {"measure", to_string(e)},
             {"value", mv.value},
             {"clamped_sites", mv.clamped_sites},
             {"boundary_flux", mv.boundary_flux}};
      if (me_out.empty())
        out << j.dump(2) << "\n";
      else
        write_json(me_out, j);
      return 0;
    }

    if (*axc) {
      const Expr e = parse_measure(axc_measure);
      EnsembleConfig ec;
      ec.seed = resolve_seed(seed_flag, 1);
      ec.samples = axc_samples;
      ec.points = axc_points;
      ec.truncated = !axc_periodic;
      ec.threads = threads;
      const ParamMap params = parse_params(axc_params);
      const AxiomReport r = run_axiom_suite(e, ec, params);
      std::string canon = "axioms check|" + to_string(e) + "|" + std::to_string(ec.seed) + "|" + std::to_string(ec.samples) +
                          "|" + std::to_string(ec.points) + "|" + (axc_periodic ? "periodic" : "mixed");
      for (const auto& [k, v] : params) canon += "|" + k + "=" + format_double(v);
      json j{{"infoqm", json_header(option_hash(canon))}};
      const json body = to_json(r);
      for (const auto& [k, v] : body.items()) j[k] = v;
      if (!axc_report.empty()) write_json(axc_report, j);
      out << "axioms check: " << r.measure << "\n";
      for (const auto& [n, ch] : r.checks()) out << "  " << n << ": " << verdict_name(ch->verdict) << "\n";
      if (r.skipped) out << "  skipped samples: " << r.skipped << "\n";
      return 0;
    }

    if (*axd) {
      scfg.seed = resolve_seed(seed_flag, 1);
      const ScanResult r = uniqueness_scan(scfg);
      const std::string canon = "axioms derive|" + std::to_string(scfg.max_terms) + "|" + std::to_string(scfg.ahd_bound) + "|" +
                                (scfg.periodic_only ? "periodic" : "mixed") + "|" + std::to_string(scfg.seed);
      json j{{"infoqm", json_header(option_hash(canon))}};
      for (auto& [k, v] : r.trace.items()) j[k] = v;
      if (!axd_out.empty())
        write_json(axd_out, j);
      else
        out << j.dump(2) << "\n";
      if (!axd_out.empty()) {
        out << "survivors: dimension " << r.dimension << "\n";
        for (const auto& g : r.generators) out << "  " << g << "\n";
      }
      return 0;
    }

    if (*vv) {
      RunConfig c = load_run_config(vv_cfg);
      if (c.solver == SolverKind::Nonlinear) throw ConfigError(vv_cfg + ": variational verify needs method linear or madelung");
      const EvolutionResult run = evolve(c, c.solver);
      Trajectory tr = Trajectory::from_evolution(run, c.potential, c.metric(), c.phys.lambda);
      tr.measure = c.measure;
      tr.params = c.measure_params;
      const ElResidual el = el_residual(tr);
      PerturbationConfig pc;
      pc.count = c.perturbations;
      pc.amplitude = c.amplitude;
      pc.seed = resolve_seed(seed_flag, c.seed);
      const MinimalityReport mr = minimality_check(tr, pc);
      pc.lambda = 0.0;
      const MinimalityReport ctl = minimality_check(tr, pc);
      std::size_t pos = 0, neg = 0;
      for (double d : ctl.delta_action) (d > 0 ? pos : neg)++;
      json j{{"infoqm", json_header(option_hash(c.hash + "|" + std::to_string(pc.seed)))},
             {"solver", run.meta.method},
             {"slices", tr.size()},
             {"action", discrete_action(tr)},
             {"residual", {{"norm_p", el.norm_p}, {"norm_S", el.norm_S}}},
             {"minimality",
              {{"lambda", tr.lambda},
               {"delta_action", mr.delta_action},
               {"delta_measure", mr.delta_measure},
               {"measure_excess", mr.measure_excess},
               {"rejected", mr.rejected},
               {"all_positive", mr.all_positive},
               {"all_nonnegative", mr.all_nonnegative}}},
             {"control",
              {{"lambda", 0.0}, {"delta_action", ctl.delta_action}, {"positive", pos}, {"negative", neg}, {"indefinite", pos > 0 && neg > 0}}}};
      write_json(vv_out, j);
      out << "variational verify: residual p " << format_double(el.norm_p) << ", S " << format_double(el.norm_S)
          << "; minimality " << (mr.all_positive ? "all positive" : "not all positive") << "; control "
          << (pos > 0 && neg > 0 ? "indefinite" : "definite") << "\n";
      return 0;
    }

    if (*cmp) {
      RunConfig c = load_run_config(cmp_cfg);
      const EvolutionResult lin = evolve(c, SolverKind::Linear);
      const EvolutionResult mad = evolve(c, SolverKind::Madelung);
      if (lin.size() != mad.size()) throw ConvergenceError("compare: solvers produced different snapshot counts");
      std::string csv = csv_header(c.hash) + "t,linf_p,norm_linear,norm_madelung\n";
      double worst = 0.0;
      for (std::size_t i = 0; i < lin.size(); ++i) {
        const double d = linf_distance(lin.density(i), mad.density(i));
        worst = std::max(worst, d);
        csv += format_double(lin.times[i]) + "," + format_double(d) + "," + format_double(lin.norm[i]) + "," + format_double(mad.norm[i]) + "\n";
      }
      fs::create_directories(cmp_out);
      write_text(fs::path(cmp_out) / "compare.csv", csv);
      out << "compare: max Linf(p) " << format_double(worst) << "\n";
      return 0;
    }
  } catch (const NodeDetected& e) {
    error_line(e.code(), e.what());
    return 2;
  } catch (const NonFiniteValue& e) {
    error_line(e.code(), e.what());
    return 2;
  } catch (const ConvergenceError& e) {
    error_line(e.code(), e.what());
    return 2;
  } catch (const Error& e) {
    if (e.code() == "IoError") {
      error_line(e.code(), e.what());
      return 2;
    }
    error_line(e.code(), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    error_line("InvalidArgument", e.what());
    return 1;
  } catch (const std::exception& e) {
    error_line("RuntimeError", e.what());
    return 2;
  }
  return 1;
}

}  // namespace infoqm::cli
