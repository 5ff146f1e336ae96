#include <gtest/gtest.h>

#include <chrono>

#include "infoqm/axioms.hpp"
#include "infoqm/uniqueness.hpp"

using namespace infoqm;

namespace {

AxiomReport suite(const std::string& name, const std::vector<double>& args, std::uint64_t seed = 7, std::size_t threads = 1) {
  EnsembleConfig c;
  c.seed = seed;
  c.threads = threads;
  return run_axiom_suite(builtin(name, args), c);
}

Verdict verdict(const AxiomReport& r, const std::string& check) {
  for (const auto& [n, c] : r.checks())
    if (n == check) return c->verdict;
  throw std::runtime_error("no check " + check);
}

}  // namespace

TEST(Ensemble, MixesBoundaryKinds) {
  EnsembleConfig c;
  auto specs = generate_ensemble(c);
  ASSERT_EQ(specs.size(), 50u);
  std::size_t in = 0, out = 0, per = 0;
  for (const auto& s : specs) (s.kind == SampleKind::EdgeInside ? in : s.kind == SampleKind::EdgeOutside ? out : per)++;
  EXPECT_GT(in, 0u);
  EXPECT_GT(out, 0u);
  EXPECT_GT(per, 0u);
  c.truncated = false;
  for (const auto& s : generate_ensemble(c)) EXPECT_TRUE(s.periodic());
}

TEST(Ensemble, EdgeSamplesHaveBothFluxSigns) {
  EnsembleConfig c;
  bool neg = false, pos = false;
  for (const auto& s : generate_ensemble(c)) {
    auto smp = realize(s);
    ASSERT_TRUE(smp);
    const double f = surface_term(smp->state, smp->metric);
    if (s.kind == SampleKind::EdgeInside) neg = neg || f < 0;
    if (s.kind == SampleKind::EdgeOutside) pos = pos || f > 0;
    if (s.periodic()) {
      EXPECT_NEAR(f, 0.0, 1e-9);
    }
  }
  EXPECT_TRUE(neg);
  EXPECT_TRUE(pos);
}

TEST(Ensemble, SpecJsonRoundTrip) {
  auto specs = generate_ensemble(EnsembleConfig{});
  for (std::size_t i = 0; i < 4; ++i) {
    const SampleSpec back = sample_from_json(to_json(specs[i]));
    EXPECT_EQ(to_json(back).dump(), to_json(specs[i]).dump());
    EXPECT_EQ(linf_distance(realize(back)->state.p, realize(specs[i])->state.p), 0.0);
  }
}

TEST(Suite, FisherAllPass) {
  auto r = suite("fisher", {});
  EXPECT_TRUE(r.all_pass()) << to_json(r).dump(1);
  EXPECT_EQ(r.skipped, 0u);
  EXPECT_EQ(r.samples, 50u);
  EXPECT_EQ(r.derivative_count, 2);
}

TEST(Suite, GeneralSurfaceTermFailsPositivity) {
  auto r = suite("general", {0.0, 1.0});
  EXPECT_EQ(r.failed(), std::vector<std::string>{"positivity"});
  ASSERT_TRUE(r.positivity.witness);
  EXPECT_LT(r.positivity.witness->measured, 0.0);
  EXPECT_NE(r.positivity.witness->samples.at(0).kind, SampleKind::Periodic);
  ASSERT_EQ(r.positivity.extra.size(), 2u);
  double lo = 0, hi = 0;
  for (const auto& w : r.positivity.extra) {
    EXPECT_NE(w.samples.at(0).kind, SampleKind::Periodic);
    lo = std::min(lo, w.measured), hi = std::max(hi, w.measured);
  }
  EXPECT_LT(lo, 0.0);
  EXPECT_GT(hi, 0.0);
}

TEST(Suite, PhaseDependentMeasureFailsGalileanAndUniformMinimum) {
  auto r = suite("iq", {0.0, 1.0});
  EXPECT_EQ(verdict(r, "galilean"), Verdict::Fail);
  EXPECT_EQ(verdict(r, "uniform_minimum"), Verdict::Fail);
  EXPECT_EQ(verdict(r, "homogeneity"), Verdict::Pass);
  EXPECT_EQ(verdict(r, "separability"), Verdict::Pass);
  EXPECT_EQ(verdict(r, "positivity"), Verdict::Pass);
}

TEST(Suite, HigherDerivativeMeasureFailsAhdOnly) {
  auto r = suite("h1", {0.1});
  EXPECT_EQ(r.failed(), std::vector<std::string>{"ahd"});
  EXPECT_EQ(r.derivative_count, 4);
  ASSERT_TRUE(r.ahd.witness);
  EXPECT_EQ(r.ahd.witness->measured, 4.0);
}

TEST(Suite, TimeDerivativeMeasureSkipsGalilean) {
  auto r = suite("h2", {0.1});
  EXPECT_EQ(verdict(r, "ahd"), Verdict::Fail);
  EXPECT_EQ(verdict(r, "galilean"), Verdict::Skipped);
}

TEST(Suite, ExplicitCoordinateFailsTranslation) {
  EnsembleConfig c;
  c.samples = 8;
  auto r = run_axiom_suite(parse("x1*gg(log(p), log(p))"), c);
  EXPECT_EQ(verdict(r, "translation"), Verdict::Fail);
  EXPECT_EQ(verdict(r, "locality"), Verdict::Pass);
}

TEST(Suite, UnboundParameterRejected) {
  EXPECT_THROW(run_axiom_suite(parse("A*gg(log(p), log(p))"), EnsembleConfig{}), InvalidArgument);
  EXPECT_NO_THROW(run_axiom_suite(parse("A*gg(log(p), log(p))"), EnsembleConfig{}, {{"A", 2.0}}));
}

TEST(Suite, WitnessesReplayStandalone) {
  for (auto [name, args] : std::vector<std::pair<std::string, std::vector<double>>>{
           {"general", {0.0, 1.0}}, {"iq", {0.0, 1.0}}, {"iq", {1.0, 0.5}}, {"general", {1.0, -2.0}}}) {
    const Expr e = builtin(name, args);
    auto r = suite(name, args);
    std::size_t replayed = 0;
    for (const auto& [n, c] : r.checks()) {
      if (n == "ahd" || n == "translation" || !c->witness) continue;
      const Witness back = witness_from_json(to_json(*c->witness));
      EXPECT_NEAR(replay_witness(e, {}, back), c->witness->deviation, 1e-12) << name << " " << n;
      ++replayed;
    }
    for (const auto& w : r.positivity.extra) EXPECT_NEAR(replay_witness(e, {}, w), w.deviation, 1e-12);
    EXPECT_GT(replayed, 0u) << name;
  }
}

TEST(Suite, DeterministicAtFixedSeed) {
  const auto a = to_json(suite("general", {0.0, 1.0})).dump();
  EXPECT_EQ(a, to_json(suite("general", {0.0, 1.0})).dump());
  EXPECT_NE(a, to_json(suite("general", {0.0, 1.0}, 8)).dump());
}

TEST(Suite, ThreadCountDoesNotChangeReport) {
  for (const char* n : {"fisher", "iq"}) {
    std::vector<double> args = std::string(n) == "iq" ? std::vector<double>{0.0, 1.0} : std::vector<double>{};
    EXPECT_EQ(to_json(suite(n, args, 7, 1)).dump(), to_json(suite(n, args, 7, 4)).dump());
  }
}

TEST(Suite, UnnormalizableMembersAreSkippedAndCounted) {
  EnsembleConfig c;
  c.samples = 6;
  auto specs = generate_ensemble(c);
  specs[2].background = 0.0;
  specs[2].bumps.clear();
  specs[4].background = -1.0;
  auto r = run_axiom_suite(fisher_expr(), specs, c);
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_EQ(r.positivity.evaluated, 4u);
  EXPECT_TRUE(r.all_pass());
  EXPECT_EQ(to_json(r)["ensemble"]["skipped"], 2);
}

TEST(Suite, ReportJsonShape) {
  auto j = to_json(suite("general", {0.0, 1.0}));
  EXPECT_EQ(j["checks"]["positivity"]["verdict"], "fail");
  EXPECT_EQ(j["checks"]["positivity"]["flux_witnesses"].size(), 2u);
  EXPECT_EQ(j["ensemble"]["seed"], 7);
  EXPECT_EQ(j["all_pass"], false);
}

// --- uniqueness scan ---------------------------------------------------------

TEST(Scan, Chainrule) {
  using namespace scan;
  // d/dp [p^(3/2) log p] = 3/2 p^(1/2) log p + p^(1/2)
  Poly d = deriv(mono(3, 1));
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ((d[Key{1, 1}]), 1.5);
  EXPECT_EQ((d[Key{1, 0}]), 1.0);
  EXPECT_TRUE(deriv(mono(0)).empty());
}

TEST(Scan, DefaultLeavesOnlyFisher) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = uniqueness_scan(ScanConfig{});
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(sec, 30.0);
  EXPECT_EQ(r.dimension, 1);
  ASSERT_EQ(r.generators.size(), 1u);
  EXPECT_EQ(r.generators[0], "gg(log(p), log(p))");
  EXPECT_EQ(r.trace["survivors"]["constraints"][0], "Fisher coefficient A > 0");
  EXPECT_TRUE(r.order_invariant);
  EXPECT_TRUE(r.sums_unchanged);
}

TEST(Scan, TraceCitesEachAxiom) {
  auto t = uniqueness_scan(ScanConfig{}).trace;
  const auto& steps = t["steps"];
  ASSERT_EQ(steps.size(), 4u);
  EXPECT_EQ(steps[0]["axiom"], "rotational invariance + ahd");
  EXPECT_EQ(steps[1]["axiom"], "homogeneity");
  EXPECT_EQ(steps[1]["constraints"][0], "gg blocks U1*gg(U2,U3): u1+u2+u3 = 0");
  EXPECT_EQ(steps[1]["constraints"][1], "lap blocks V1*lap(V2): v1+v2 = 0");
  EXPECT_EQ(steps[2]["axiom"], "separability");
  EXPECT_EQ(steps[2]["family"]["dimension"], 2);
  EXPECT_EQ(steps[3]["axiom"], "positivity");
  EXPECT_NE(steps[3]["conclusion"].get<std::string>().find("B = 0"), std::string::npos);
  // the admissible window for B shrinks with the edge feature
  const auto& eps = steps[3]["edge_sequence"];
  const double w0 = eps[0]["B_interval"][1].get<double>() - eps[0]["B_interval"][0].get<double>();
  const double w5 = eps[5]["B_interval"][1].get<double>() - eps[5]["B_interval"][0].get<double>();
  EXPECT_LT(w5, 1e-4 * w0);
  for (const auto& a : steps[0]["admitted"]) EXPECT_EQ(a["derivatives"], 2);
}

TEST(Scan, HomogeneousBlocksAreExactlyTheScaleFreeOnes) {
  using namespace scan;
  const auto F = basis_functions();
  std::vector<std::size_t> per;
  const auto blocks = enumerate_blocks(F, 2, per);
  for (const auto& b : blocks) {
    if (is_zero(b.red) || b.tmpl == 4) continue;
    if (!b.has_log_factor) {
      EXPECT_EQ(is_homogeneous(b.red), b.exponent_sum2 == 0) << b.text;
    }
  }
}

TEST(Scan, HigherDerivativeBoundEnlargesFamily) {
  ScanConfig c;
  c.ahd_bound = 4;
  auto r = uniqueness_scan(c);
  EXPECT_GT(r.dimension, 1);
  EXPECT_EQ(r.generators[0], "gg(log(p), log(p))");
  EXPECT_TRUE(r.order_invariant);
  EXPECT_TRUE(r.trace["steps"][3].contains("not_eliminated"));
}

TEST(Scan, PeriodicOnlyLeavesSurfaceTermFree) {
  ScanConfig c;
  c.periodic_only = true;
  auto r = uniqueness_scan(c);
  EXPECT_EQ(r.dimension, 2);
  EXPECT_EQ(r.trace["steps"][3]["boundary_dependence"], true);
  EXPECT_NE(std::find(r.generators.begin(), r.generators.end(), "lap(p)/p"), r.generators.end());
}

TEST(Scan, SummedTermsDoNotChangeFamily) {
  auto t = uniqueness_scan(ScanConfig{}).trace;
  ASSERT_EQ(t["summed_terms"].size(), 3u);
  for (const auto& s : t["summed_terms"]) EXPECT_EQ(s["family"]["dimension"], 1);
  ScanConfig one;
  one.max_terms = 1;
  EXPECT_EQ(uniqueness_scan(one).dimension, 1);
}

TEST(Scan, DeterministicBytes) {
  ScanConfig c;
  c.seed = 3;
  EXPECT_EQ(uniqueness_scan(c).trace.dump(1), uniqueness_scan(c).trace.dump(1));
}

TEST(Scan, RejectsBadConfig) {
  ScanConfig c;
  c.max_terms = 0;
  EXPECT_THROW(uniqueness_scan(c), InvalidArgument);
}
