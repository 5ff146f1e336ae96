#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "infoqm/cli.hpp"
#include "infoqm/config.hpp"

using namespace infoqm;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = INFOQM_CONFIG_DIR;

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "infoqm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("infoqm_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

IniFile ini(const std::string& text) {
  std::istringstream is(text);
  return IniFile::parse(is, "t.cfg");
}

json error_payload(const std::string& err) {
  const std::string prefix = "error: ";
  EXPECT_EQ(err.rfind(prefix, 0), 0u) << err;
  return json::parse(err.substr(prefix.size()));
}

}  // namespace

TEST(Config, SectionsKeysAndComments) {
  auto f = ini("# top\n[grid]\npoints = 64 ; trailing\nlower=-1\n\n[solver]\nT = 2\n");
  ASSERT_TRUE(f.find("grid", "points"));
  EXPECT_EQ(f.find("grid", "points")->value, "64");
  EXPECT_EQ(f.find("grid", "lower")->line, 4u);
  EXPECT_EQ(f.find("solver", "T")->value, "2");
  EXPECT_EQ(f.find("solver", "dt"), nullptr);
}

TEST(Config, SyntaxErrorsCarryLocation) {
  try {
    ini("[grid]\npoints 64\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("t.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(ini("points = 3\n"), ConfigError);
  EXPECT_THROW(ini("[grid\n"), ConfigError);
  EXPECT_THROW(ini("[grid]\na = 1\na = 2\n"), ConfigError);
}

TEST(Config, UnknownKeysAndSectionsRejected) {
  try {
    parse_run_config(ini("[grid]\npoints = 64\n[solver]\nsteps = 3\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("t.cfg:4: unknown key 'steps' in [solver]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[extras]\nx = 1\n")), ConfigError);
}

TEST(Config, TypedValuesValidated) {
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[solver]\nT = abc\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[solver]\nT = inf\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[solver]\ndeterministic = yes\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\nboundary = open\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[physics]\nmass = 1, 2\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[state]\nkind = file\nfile = missing.csv\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[grid]\npoints = 64\n[measure]\nexpr = gg(p,\n")), ConfigError);
  EXPECT_THROW(parse_run_config(ini("[solver]\nT = 1\n")), ConfigError);
}

TEST(Config, VectorsAndDefaults) {
  auto c = parse_run_config(ini("[grid]\nparticles = 2\npoints = 16, 24\nlower = -1\nupper = 1\n"
                                "[physics]\nmass = 1, 2\n[measure]\nexpr = A*gg(log(p), log(p))\nparam.A = 2\n"));
  ASSERT_EQ(c.grid.axes.size(), 2u);
  EXPECT_EQ(c.grid.axes[1].points, 24u);
  EXPECT_EQ(c.grid.axes[1].lower, -1.0);
  EXPECT_EQ(c.masses, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(c.phys.lambda, 0.125);
  EXPECT_EQ(c.measure_params.at("A"), 2.0);
  EXPECT_EQ(c.hash.size(), 16u);
}

TEST(Config, HashIgnoresLayoutButNotValues) {
  auto a = parse_run_config(ini("[grid]\npoints = 64\n[solver]\nT = 2\n"));
  auto b = parse_run_config(ini("# comment\n[solver]\nT=2\n\n[grid]\n  points   = 64\n"));
  auto c = parse_run_config(ini("[grid]\npoints = 64\n[solver]\nT = 3\n"));
  EXPECT_EQ(a.hash, b.hash);
  EXPECT_NE(a.hash, c.hash);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    if (e.path().extension() == ".cfg") {
      EXPECT_NO_THROW(load_run_config(e.path())) << e.path();
    }
  }
}

TEST(Cli, SimulateLinearConservesNorm) {
  auto dir = scratch("sim");
  auto o = run_cli({"simulate", "--config", kConfigs + "/free_gauss.cfg", "--solver", "linear", "--out", dir.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  std::istringstream is(slurp(dir / "conserved.csv"));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("# infoqm ", 0), 0u);
  EXPECT_NE(line.find("config_hash="), std::string::npos);
  std::getline(is, line);
  EXPECT_EQ(line, "t,norm,energy,I_F");
  double n0 = 0.0, worst = 0.0;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    const double n = std::stod(line.substr(line.find(',') + 1));
    if (rows++ == 0) n0 = n;
    worst = std::max(worst, std::abs(n - n0));
  }
  EXPECT_GT(rows, 10u);
  EXPECT_LE(worst, 1e-10);
  const std::string snap = slurp(dir / "snapshots.csv");
  EXPECT_NE(snap.find("\nt,i,x1,p,S,re,im\n"), std::string::npos);
}

TEST(Cli, DeterministicRunsAreByteIdentical) {
  auto a = scratch("det_a"), b = scratch("det_b");
  const std::string cfg = kConfigs + "/free_gauss.cfg";
  ASSERT_EQ(run_cli({"simulate", "--config", cfg, "--solver", "madelung", "--out", a.string(), "--deterministic"}).code, 0);
  ASSERT_EQ(run_cli({"simulate", "--config", cfg, "--solver", "madelung", "--out", b.string(), "--deterministic"}).code, 0);
  for (const char* f : {"snapshots.csv", "conserved.csv", "meta.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, AxiomsCheckFisherAllPass) {
  auto dir = scratch("axc");
  auto o = run_cli({"axioms", "check", "--measure", "fisher", "--seed", "7", "--samples", "50", "--report", (dir / "r.json").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  auto j = json::parse(slurp(dir / "r.json"));
  EXPECT_EQ(j["all_pass"], true);
  EXPECT_EQ(j["ensemble"]["seed"], 7);
  EXPECT_EQ(j["infoqm"]["version"], cli::kVersion);
}

TEST(Cli, SeedFallsBackToEnvironment) {
  auto dir = scratch("seed");
  ::setenv("INFOQM_SEED", "11", 1);
  auto o = run_cli({"axioms", "check", "--measure", "general(0,1)", "--samples", "12", "--report", (dir / "a.json").string()});
  ::unsetenv("INFOQM_SEED");
  ASSERT_EQ(o.code, 0) << o.err;
  ASSERT_EQ(run_cli({"axioms", "check", "--measure", "general(0,1)", "--samples", "12", "--seed", "11", "--threads", "3", "--report",
                     (dir / "b.json").string()})
                .code,
            0);
  EXPECT_EQ(json::parse(slurp(dir / "a.json"))["ensemble"]["seed"], 11);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  ::setenv("INFOQM_SEED", "x1", 1);
  auto bad = run_cli({"axioms", "check", "--measure", "fisher", "--samples", "2"});
  ::unsetenv("INFOQM_SEED");
  EXPECT_EQ(bad.code, 1);
}

TEST(Cli, AxiomsDeriveEndsWithFisherFamily) {
  auto dir = scratch("derive");
  const auto path = (dir / "trace.json").string();
  auto o = run_cli({"axioms", "derive", "--max-terms", "3", "--ahd-bound", "2", "--out", path});
  ASSERT_EQ(o.code, 0) << o.err;
  auto j = json::parse(slurp(path));
  EXPECT_EQ(j.items().begin().key(), "infoqm");
  std::string last;
  for (const auto& [k, v] : j.items()) last = k;
  EXPECT_EQ(last, "survivors");
  EXPECT_EQ(j["survivors"]["dimension"], 1);
  EXPECT_EQ(j["survivors"]["generators"][0], "gg(log(p), log(p))");
  const std::string first = slurp(path);
  ASSERT_EQ(run_cli({"axioms", "derive", "--max-terms", "3", "--ahd-bound", "2", "--out", path}).code, 0);
  EXPECT_EQ(slurp(path), first);
}

TEST(Cli, MeasureEvalReportsValueAndFlux) {
  auto o = run_cli({"measure", "eval", "--config", kConfigs + "/free_gauss.cfg"});
  ASSERT_EQ(o.code, 0) << o.err;
  auto j = json::parse(o.out);
  EXPECT_NEAR(j["value"].get<double>(), 1.0, 1e-6);
  EXPECT_TRUE(j.contains("clamped_sites"));
  EXPECT_TRUE(j.contains("boundary_flux"));
  auto g = run_cli({"measure", "eval", "--config", kConfigs + "/free_gauss.cfg", "--measure", "general(A, B)", "--param", "A=2",
                    "--param", "B=0"});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_NEAR(json::parse(g.out)["value"].get<double>(), 2.0, 2e-6);
}

TEST(Cli, VariationalVerifyReport) {
  auto dir = scratch("var");
  auto o = run_cli({"variational", "verify", "--config", kConfigs + "/variational_gauss.cfg", "--out", (dir / "v.json").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  auto j = json::parse(slurp(dir / "v.json"));
  EXPECT_LT(j["residual"]["norm_p"].get<double>(), 1e-3);
  EXPECT_LT(j["residual"]["norm_S"].get<double>(), 1e-3);
  EXPECT_EQ(j["minimality"]["all_positive"], true);
  EXPECT_EQ(j["control"]["indefinite"], true);
}

TEST(Cli, CompareEmitsDifferenceTrace) {
  auto dir = scratch("cmp");
  auto o = run_cli({"compare", "--config", kConfigs + "/free_gauss.cfg", "--out", dir.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  std::istringstream is(slurp(dir / "compare.csv"));
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  EXPECT_EQ(line, "t,linf_p,norm_linear,norm_madelung");
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string t, d;
    std::getline(ss, t, ',');
    std::getline(ss, d, ',');
    EXPECT_LT(std::stod(d), 1e-3);
  }
}

TEST(Cli, ValidationErrorsExitOne) {
  auto u = run_cli({"frobnicate"});
  EXPECT_EQ(u.code, 1);
  EXPECT_EQ(error_payload(u.err)["code"], "UsageError");
  auto flag = run_cli({"simulate", "--config", "x.cfg", "--out", "o", "--bogus"});
  EXPECT_EQ(flag.code, 1);

  auto dir = scratch("bad");
  std::ofstream(dir / "bad.cfg") << "[grid]\npoints = 64\nspacing = 3\n";
  auto b = run_cli({"simulate", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(b.code, 1);
  auto p = error_payload(b.err);
  EXPECT_EQ(p["code"], "ConfigError");
  EXPECT_NE(p["message"].get<std::string>().find("bad.cfg:3"), std::string::npos);

  auto m = run_cli({"axioms", "check", "--measure", "gg(p,", "--samples", "2"});
  EXPECT_EQ(m.code, 1);
  EXPECT_EQ(error_payload(m.err)["code"], "ParseError");
}

TEST(Cli, NodeInInitialStateExitsTwo) {
  auto dir = scratch("node");
  // a standing wave has interior nodes
  std::ofstream(dir / "node.cfg") << "[grid]\npoints = 64\n[state]\nkind = file\nfile = node.csv\n[solver]\nmethod = madelung\nT = 0.01\n";
  {
    std::ofstream os(dir / "node.csv");
    auto g = Grid::make(GridSpec::line(64, 0.0, 2.0 * std::numbers::pi));
    WaveField w = WaveField::from_function(g, 1.0, [](auto x) { return Complex(std::cos(x[0]), 0.0); });
    w.normalize();
    DecomposeOptions d;
    d.node_threshold = 0.0;
    write_state_csv(os, madelung_decompose(w, d), w);
  }
  auto o = run_cli({"simulate", "--config", (dir / "node.cfg").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(error_payload(o.err)["code"], "NodeDetected");
}

TEST(Cli, BinaryExitCodes) {
  const std::string bin = INFOQM_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --version > /dev/null").c_str()), 0);
  const int rc = std::system((bin + " axioms derive --max-terms 9 > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 1);
}
