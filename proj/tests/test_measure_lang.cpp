#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "infoqm/measure_lang.hpp"
#include "infoqm/random.hpp"

using namespace infoqm;
using namespace infoqm::dsl;

namespace {

GridPtr line(std::size_t n, double a, double b, Boundary bc = Boundary::Periodic) {
  return Grid::make(GridSpec::line(n, a, b, bc));
}

HydroField gaussian(const GridPtr& g, double sigma) {
  return HydroField(ScalarField::from_function(g, [&](auto x) {
                      return std::exp(-x[0] * x[0] / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
                    }),
                    ScalarField(g, 0.0));
}

// Random expression over the monomial/log basis used by the property tests.
Expr random_expr(Rng& rng, int depth) {
  const int pick = static_cast<int>(rng.uniform() * (depth > 0 ? 9 : 4));
  auto mono = [&]() {
    const long a = static_cast<long>(rng.uniform() * 9) - 4;
    return a == 0 ? Expr::p() : dsl::pow(Expr::p(), Rational(a, 2));
  };
  switch (pick) {
    case 0: return mono();
    case 1: return log(p());
    case 2: return num(std::round(rng.uniform(-3, 3) * 4) / 4 + 0.5);
    case 3: return S();
    case 4: return random_expr(rng, depth - 1) + random_expr(rng, depth - 1);
    case 5: return random_expr(rng, depth - 1) * random_expr(rng, depth - 1);
    case 6: return gg(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    case 7: return lap(random_expr(rng, depth - 1)) / mono();
    default: return random_expr(rng, depth - 1) - random_expr(rng, depth - 1);
  }
}

}  // namespace

TEST(Parse, FisherAst) {
  Expr e = parse("gg(log(p), log(p))");
  EXPECT_EQ(e, gg(log(p()), log(p())));
  EXPECT_EQ(e, fisher_expr());
  EXPECT_EQ(parse("fisher"), fisher_expr());
}

TEST(Parse, IqAst) {
  Expr e = parse("gg(a1*log(p) + a2*S, a1*log(p) + a2*S)");
  Expr u = Expr::param("a1") * log(p()) + Expr::param("a2") * S();
  EXPECT_EQ(e, gg(u, u));
  EXPECT_EQ(parse("iq"), e);
  Expr v = num(0) * log(p()) + num(1) * S();
  EXPECT_EQ(parse("iq(0,1)"), gg(v, v));
}

TEST(Parse, H1Ast) {
  Expr e = parse("gg(log(p) + eta*gg(log(p),log(p)), log(p) + eta*gg(log(p),log(p)))");
  Expr u = log(p()) + Expr::param("eta") * gg(log(p()), log(p()));
  EXPECT_EQ(e, gg(u, u));
  EXPECT_EQ(parse("h1"), e);
}

TEST(Parse, BuiltinsMatchDefinitions) {
  EXPECT_EQ(parse("general(2, 3)"), parse("2*gg(log(p),log(p)) + 3*lap(p)/p"));
  EXPECT_EQ(parse("scaled_fisher(0.5)"), parse("0.5*gg(log(p),log(p))"));
  EXPECT_EQ(parse("h2(0.1)"), parse("gg(log(p)+0.1*dt(p)/p, log(p)+0.1*dt(p)/p)"));
}

TEST(Parse, ExponentsAndPrecedence) {
  EXPECT_EQ(parse("p^(1/2)"), dsl::pow(p(), Rational(1, 2)));
  EXPECT_EQ(parse("p^-2"), dsl::pow(p(), Rational(-2)));
  EXPECT_EQ(parse("p^2/2"), dsl::pow(p(), Rational(2)) / num(2));
  EXPECT_EQ(parse("1 - 2 - 3"), (num(1) - num(2)) - num(3));
  EXPECT_EQ(parse("-2*p"), num(-2) * p());
  EXPECT_EQ(parse("x1 + x2"), Expr::coord(0) + Expr::coord(1));
}

TEST(Parse, ErrorsCarryLocation) {
  try {
    parse("gg(log(p),\n  log(p)");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  try {
    parse("gg(p, p) $");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_EQ(e.column(), 10u);
  }
  EXPECT_THROW(parse("foo(p)"), ParseError);
  EXPECT_THROW(parse("log p"), ParseError);
  EXPECT_THROW(parse("p^(1/0)"), ParseError);
  ParseOptions strict;
  strict.known_params = std::set<std::string>{"eta"};
  EXPECT_THROW(parse("zeta*p", strict), ParseError);
  EXPECT_NO_THROW(parse("eta*p", strict));
}

TEST(Parse, PrintReparseIdempotent) {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    Expr e = random_expr(rng, 3);
    if (i % 3 == 0) e = -e;
    if (i % 5 == 0) e = dsl::pow(e, Rational(-3, 2));
    const std::string text = to_string(e);
    Expr back = parse(text);
    EXPECT_EQ(back, e) << text;
    EXPECT_EQ(to_string(back), text);
  }
  for (const char* s : {"fisher", "iq(0.5, -1)", "h1(0.1)", "h2(0.25)", "general(1,-2)", "dt(S)*x1"}) {
    Expr e = parse(s);
    EXPECT_EQ(parse(to_string(e)), e) << s;
  }
}

TEST(Density, FisherUniformIsZero) {
  auto g = line(64, 0.0, 1.0);
  HydroField h(ScalarField(g, 1.0), ScalarField(g, 0.0));
  auto r = evaluate_density(fisher_expr(), h, Metric::for_grid(*g));
  EXPECT_EQ(r.density.max_abs(), 0.0);
  EXPECT_EQ(r.clamped_sites, 0u);
}

TEST(Density, FisherGaussianAnalytic) {
  const double sigma = 1.3, mass = 2.0;
  auto g = line(400, -10.0, 10.0, Boundary::Truncated);
  HydroField h = gaussian(g, sigma);
  auto r = evaluate_density(fisher_expr(), h, Metric({mass}, 1));
  double err = 0;
  for (std::size_t s = 10; s + 10 < h.size(); ++s) {
    const double x = g->coordinate(0, s);
    err = std::max(err, std::abs(r.density[s] - std::pow(x / (sigma * sigma), 2) / mass));
  }
  EXPECT_LT(err, 1e-3);
}

TEST(Density, H2OnStationaryEqualsFisher) {
  auto g = line(128, -8.0, 8.0);
  HydroField h = gaussian(g, 1.0);
  TimeContext tc{h, h, 0.01};
  DensityOptions opt;
  opt.time = &tc;
  ParamMap pm{{"eta", 0.3}};
  auto a = evaluate_density(parse("h2"), h, Metric::for_grid(*g), pm, opt);
  auto b = evaluate_density(fisher_expr(), h, Metric::for_grid(*g));
  EXPECT_LT(linf_distance(a.density, b.density), 1e-8);
}

TEST(Density, DtRequiresTrajectory) {
  auto g = line(16, 0.0, 1.0);
  HydroField h(ScalarField(g, 1.0), ScalarField(g, 0.0));
  EXPECT_THROW(evaluate_density(parse("dt(p)"), h, Metric::for_grid(*g)), InvalidArgument);
}

TEST(Density, UnboundParameter) {
  auto g = line(16, 0.0, 1.0);
  HydroField h(ScalarField(g, 1.0), ScalarField(g, 0.0));
  EXPECT_THROW(evaluate_density(parse("eta*p"), h, Metric::for_grid(*g)), InvalidArgument);
}

TEST(Density, ClampsAreCounted) {
  auto g = line(16, 0.0, 1.0, Boundary::Truncated);
  ScalarField p(g, 1.0);
  p[3] = 0.0;
  p[7] = 1e-320;
  HydroField h(p, ScalarField(g, 0.0));
  auto r = evaluate_density(parse("log(p)"), h, Metric::for_grid(*g));
  EXPECT_EQ(r.clamped_sites, 2u);
  EXPECT_DOUBLE_EQ(r.density[3], std::log(1e-300));
}

TEST(Density, LinearInTopLevelSum) {
  Rng rng(23);
  auto g = line(64, 0.0, 2 * std::numbers::pi);
  Metric m = Metric::for_grid(*g);
  for (int i = 0; i < 30; ++i) {
    HydroField h(ScalarField::from_function(g, [&](auto x) { return std::exp(0.3 * std::sin(x[0] + i)); }),
                 ScalarField::from_function(g, [&](auto x) { return std::cos(2 * x[0]) * 0.1 * i; }));
    Expr e1 = random_expr(rng, 2), e2 = random_expr(rng, 2);
    auto sum = evaluate_density(e1 + e2, h, m).density;
    auto sep = evaluate_density(e1, h, m).density + evaluate_density(e2, h, m).density;
    EXPECT_LT(linf_distance(sum, sep), 1e-12 * std::max(1.0, sep.max_abs())) << to_string(e1 + e2);
  }
}

TEST(Density, PhaseSeamHandledByLinearity) {
  const double L = 10.0, k = 2 * std::numbers::pi * 2 / L;
  auto g = line(50, 0.0, L);
  HydroField h(ScalarField(g, 1.0 / L), ScalarField::from_function(g, [&](auto x) { return k * x[0]; }));
  auto r = evaluate_density(parse("gg(0.5*log(p) + 2*S, 0.5*log(p) + 2*S)"), h, Metric({2.0}, 1));
  for (std::size_t s = 0; s < h.size(); ++s) EXPECT_NEAR(r.density[s], 4 * k * k / 2.0, 1e-12);
}

TEST(Audit, Fisher) {
  auto r = structural_audit(fisher_expr());
  EXPECT_EQ(r.max_derivatives, 2);
  EXPECT_EQ(r.homogeneity, Homogeneity::Degree0);
  EXPECT_FALSE(r.uses_S);
  EXPECT_FALSE(r.uses_dt);
  EXPECT_FALSE(r.uses_x);
}

TEST(Audit, LogIsInhomogeneous) {
  auto r = structural_audit(parse("log(p)"));
  EXPECT_EQ(r.homogeneity, Homogeneity::Inhomogeneous);
  EXPECT_EQ(r.witness_lambda, 2.0);
  EXPECT_NEAR(r.deviation, std::log(2.0), 1e-12);
  EXPECT_EQ(r.symbolic, "logshift(1)");
}

TEST(Audit, H1CountsFour) {
  ParamMap pm{{"eta", 0.1}};
  auto r = structural_audit(parse("h1"), AuditOptions{pm});
  EXPECT_EQ(r.max_derivatives, 4);
  EXPECT_EQ(r.homogeneity, Homogeneity::Degree0);
}

TEST(Audit, H2TimeDerivativeCounted) {
  auto r = structural_audit(parse("h2(0.1)"));
  EXPECT_EQ(r.max_derivatives, 2);
  EXPECT_EQ(r.max_total_derivatives, 3);
  EXPECT_TRUE(r.uses_dt);
  EXPECT_EQ(r.homogeneity, Homogeneity::Degree0);
}

TEST(Audit, UsesFlags) {
  auto r = structural_audit(parse("gg(S, S) + x2*p"));
  EXPECT_TRUE(r.uses_S);
  EXPECT_TRUE(r.uses_x);
  EXPECT_EQ(r.coordinates, std::vector<std::size_t>{1});
  EXPECT_EQ(r.homogeneity, Homogeneity::Inhomogeneous);
}

TEST(Audit, GeneralFamilyDegreeZero) {
  EXPECT_EQ(structural_audit(parse("general(1, 1)")).homogeneity, Homogeneity::Degree0);
  EXPECT_EQ(structural_audit(parse("p*gg(p,p)")).homogeneity, Homogeneity::Inhomogeneous);
  EXPECT_EQ(structural_audit(parse("p^-2*gg(p, p)")).homogeneity, Homogeneity::Degree0);
  EXPECT_EQ(structural_audit(parse("p^(-3/2)*lap(p^(3/2))")).homogeneity, Homogeneity::Degree0);
  EXPECT_EQ(structural_audit(parse("gg(p^0, log(p))")).symbolic, "zero");
}

TEST(Audit, SymbolicAgreesWithNumeric) {
  Rng rng(99);
  int definite = 0;
  for (int i = 0; i < 300; ++i) {
    Expr e = random_expr(rng, 3);
    for (int field = 0; field < 20 && i < 40; ++field) {
      AuditOptions o;
      o.seed = 1000 + field;
      auto r = structural_audit(e, o);
      if (!r.symbolic_definite) continue;
      EXPECT_TRUE(r.numeric_agrees) << to_string(e) << " " << r.symbolic;
    }
    auto r = structural_audit(e);
    if (!r.symbolic_definite) continue;
    ++definite;
    EXPECT_TRUE(r.numeric_agrees) << to_string(e) << " " << r.symbolic;
  }
  EXPECT_GT(definite, 100);
}

TEST(Audit, ReauditConsistent) {
  Expr e = parse("h1(0.2) + 0.5*lap(p)/p");
  auto a = structural_audit(e), b = structural_audit(parse(to_string(e)));
  EXPECT_EQ(a.max_derivatives, b.max_derivatives);
  EXPECT_EQ(a.homogeneity, b.homogeneity);
  EXPECT_EQ(a.symbolic, b.symbolic);
}
