#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "infoqm/fields.hpp"
#include "infoqm/random.hpp"
#include "oracles.hpp"

using namespace infoqm;

namespace {

const double kPi = std::numbers::pi;

GridPtr line(std::size_t n, double a, double b, Boundary bc = Boundary::Periodic) {
  return Grid::make(GridSpec::line(n, a, b, bc));
}

// S with the gauge fixed at site 0.
double gauge_linf(const ScalarField& a, const ScalarField& b) {
  double m = 0;
  for (std::size_t s = 0; s < a.size(); ++s) m = std::max(m, std::abs((a[s] - a[0]) - (b[s] - b[0])));
  return m;
}

WaveField random_nodeless(const GridPtr& g, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> c(8);
  for (double& v : c) v = rng.normal();
  const double L = g->length(0);
  return WaveField::from_function(g, 1.0, [&](auto x) {
    const double th = 2 * kPi * x[0] / L;
    const double amp = std::exp(0.3 * c[0] * std::cos(th) + 0.3 * c[1] * std::sin(2 * th));
    const double ph = 2.0 * c[2] * std::sin(th) + c[3] * std::cos(3 * th) + 2 * kPi * 2 * x[0] / L;
    return std::polar(amp, ph);
  });
}

}  // namespace

TEST(Madelung, ConstantPsi) {
  auto g = line(32, 0.0, 2.0);
  WaveField w(g, std::vector<Complex>(32, Complex(0.7, 0.0)));
  auto h = madelung_decompose(w);
  EXPECT_EQ(h.S.max_abs(), 0.0);
  for (std::size_t s = 0; s < h.size(); ++s) EXPECT_NEAR(h.p[s], 0.5, 1e-14);
}

TEST(Madelung, PlaneWaveUnwrapsPastPi) {
  const double L = 5.0, hbar = 1.3, k = 2 * kPi / L;
  auto g = line(40, 0.0, L);
  WaveField w = WaveField::from_function(g, hbar, [&](auto x) { return std::polar(1.0 / std::sqrt(L), k * x[0]); });
  auto h = madelung_decompose(w);
  for (std::size_t s = 0; s < h.size(); ++s) {
    EXPECT_NEAR(h.p[s], 1.0 / L, 1e-14);
    EXPECT_NEAR(h.S[s], hbar * k * g->coordinate(0, s), 1e-12);
  }
}

TEST(Madelung, RoundTripUpToGlobalPhase) {
  auto g = line(128, 0.0, 6.0);
  WaveField w = random_nodeless(g, 5);
  w.normalize();
  WaveField back = madelung_compose(madelung_decompose(w));
  const Complex phase = back.psi[0] / w.psi[0];
  EXPECT_NEAR(std::abs(phase), 1.0, 1e-12);
  double err = 0;
  for (std::size_t s = 0; s < w.size(); ++s) err = std::max(err, std::abs(back.psi[s] - w.psi[s] * phase));
  EXPECT_LT(err, 1e-10);
}

TEST(Madelung, ComposeInverseCases) {
  auto g = line(16, 0.0, 4.0);
  HydroField h(ScalarField(g, 0.25), ScalarField(g, 0.0));
  for (auto z : madelung_compose(h).psi) EXPECT_EQ(z, Complex(0.5, 0.0));
  const double k = 2 * kPi / 4.0;
  HydroField pw(ScalarField(g, 0.25), ScalarField::from_function(g, [&](auto x) { return k * x[0]; }));
  auto w = madelung_compose(pw);
  for (std::size_t s = 0; s < w.size(); ++s)
    EXPECT_LT(std::abs(w.psi[s] - std::polar(0.5, k * g->coordinate(0, s))), 1e-15);
}

TEST(Madelung, NodeDetected) {
  auto g = line(32, 0.0, 1.0);
  WaveField w = WaveField::from_function(g, 1.0, [](auto x) { return Complex(std::sin(kPi * x[0]), 0.0); });
  EXPECT_THROW(madelung_decompose(w), NodeDetected);
}

TEST(Madelung, MultiDimensionalUnwrap) {
  GridSpec spec{1, 2, {{24, 0.0, 3.0, Boundary::Periodic}, {20, 0.0, 2.0, Boundary::Periodic}}};
  auto g = Grid::make(spec);
  const double kx = 2 * kPi * 2 / 3.0, ky = 2 * kPi * 3 / 2.0;
  WaveField w = WaveField::from_function(g, 1.0, [&](auto x) {
    return std::polar(std::exp(0.2 * std::cos(2 * kPi * x[0] / 3.0)), kx * x[0] + ky * x[1]);
  });
  auto h = madelung_decompose(w);
  auto ref = ScalarField::from_function(g, [&](auto x) { return kx * x[0] + ky * x[1]; });
  EXPECT_LT(gauge_linf(h.S, ref), 1e-10);
  EXPECT_NEAR(integrate(h.p), 1.0, 1e-12);
}

TEST(Moments, TruncatedGaussianVariance) {
  auto g = line(800, -20.0, 20.0, Boundary::Truncated);
  HydroField h(ScalarField::from_function(g, [](auto x) { return oracle::gauss_pdf(x[0], 0.0, 2.0); }),
               ScalarField(g, 0.0));
  auto m = moments(h);
  const double ref = oracle::simpson([](double x) { return x * x * oracle::gauss_pdf(x, 0, 2); }, -20, 20);
  EXPECT_NEAR(m.variance[0], 4.0, 1e-6);
  EXPECT_NEAR(m.variance[0], ref, 1e-6);
  EXPECT_NEAR(m.mean[0], 0.0, 1e-12);
}

TEST(Moments, PlaneWaveMomentum) {
  const double L = 8.0, hbar = 1.0, k = 2 * kPi * 3 / L;
  auto g = line(64, 0.0, L);
  HydroField h(ScalarField(g, 1.0 / L), ScalarField::from_function(g, [&](auto x) { return hbar * k * x[0]; }), hbar);
  EXPECT_NEAR(moments(h).mean_momentum[0], hbar * k, 1e-10);
}

TEST(Moments, UniformPeriodicVariance) {
  const double L = 1.0;
  auto g = line(1024, 0.0, L);
  HydroField h(ScalarField(g, 1.0 / L), ScalarField(g, 0.0));
  EXPECT_NEAR(moments(h).variance[0], L * L / 12.0, 1e-6);
}

TEST(Moments, CircularMeanAcrossSeam) {
  auto g = line(400, 0.0, 10.0);
  HydroField h(ScalarField::from_function(g, [](auto x) {
                 double d = x[0] - 9.5;
                 d -= 10.0 * std::round(d / 10.0);
                 return oracle::gauss_pdf(d, 0.0, 0.5);
               }),
               ScalarField(g, 0.0));
  auto m = moments(h);
  EXPECT_NEAR(m.mean[0], 9.5, 1e-9);
  EXPECT_NEAR(m.variance[0], 0.25, 1e-8);
}

TEST(Boost, ZeroVelocityIdentity) {
  auto g = line(64, 0.0, 8.0);
  Metric m = Metric::for_grid(*g);
  HydroField h = madelung_decompose(random_nodeless(g, 2));
  auto b = galilean_boost(h, m, {0.0}, 1.7);
  EXPECT_EQ(linf_distance(b.p, h.p), 0.0);
  EXPECT_EQ(linf_distance(b.S, h.S), 0.0);
}

TEST(Boost, PlaneWaveWavenumberShift) {
  const double L = 10.0, hbar = 1.0, mass = 2.0;
  auto g = line(100, 0.0, L);
  Metric m({mass}, 1);
  const double k = 2 * kPi / L;
  const double v = 2 * kPi * hbar * 2 / (mass * L);  // two quanta
  const double t = 5 * g->spacing(0) / v;
  auto w = plane_wave(g, hbar, {k});
  auto bw = galilean_boost(w, m, {v}, t);
  auto hb = madelung_decompose(bw);
  const double kp = k + mass * v / hbar;
  EXPECT_LT(linf_distance(hb.p, madelung_decompose(w).p), 1e-14);
  auto ref = ScalarField::from_function(g, [&](auto x) { return hbar * kp * x[0]; });
  EXPECT_LT(gauge_linf(hb.S, ref), 1e-10);
}

TEST(Boost, GaussianMomentumShift) {
  const double L = 10.0, hbar = 1.0, mass = 1.5;
  auto g = line(200, -5.0, 5.0);
  Metric m({mass}, 1);
  auto h0 = madelung_decompose(gaussian_packet(g, hbar, {0.0}, {1.0}, {0.4}));
  const double v = 2 * kPi * hbar / (mass * L);
  auto hb = galilean_boost(h0, m, {v}, 3 * g->spacing(0) / v);
  auto m0 = moments(h0), m1 = moments(hb);
  EXPECT_NEAR(m1.mean_momentum[0] - m0.mean_momentum[0], mass * v, 1e-10);
  EXPECT_NEAR(m1.mean[0] - m0.mean[0], 3 * g->spacing(0), 1e-9);
}

TEST(Boost, Incommensurate) {
  auto g = line(64, 0.0, 8.0);
  Metric m = Metric::for_grid(*g);
  HydroField h = madelung_decompose(random_nodeless(g, 3));
  EXPECT_THROW(galilean_boost(h, m, {0.3}, 1.0), IncommensurateBoost);
  const double v = 2 * kPi / 8.0;
  EXPECT_THROW(galilean_boost(h, m, {v}, 0.37 * g->spacing(0) / v), IncommensurateBoost);
}

TEST(StateCsv, RoundTrip) {
  auto g = line(32, -4.0, 4.0);
  auto w = random_nodeless(g, 9);
  w.normalize();
  auto h = madelung_decompose(w);
  std::stringstream ss;
  write_state_csv(ss, h, w);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "i,x1,p,S,re,im");
  ss.seekg(0);
  auto back = read_state_csv(ss, g, 1.0);
  for (std::size_t s = 0; s < w.size(); ++s) EXPECT_EQ(back.psi[s], w.psi[s]);
}

TEST(StateCsv, RejectsMissingSite) {
  auto g = line(4, 0.0, 1.0);
  std::stringstream ss("i,x1,p,S,re,im\n0,0,1,0,1,0\n1,0.25,1,0,1,0\n");
  EXPECT_THROW(read_state_csv(ss, g, 1.0), ConfigError);
}

TEST(Potential, HarmonicPerParticle) {
  GridSpec spec{2, 1, {{8, -1.0, 1.0, Boundary::Periodic}, {8, -1.0, 1.0, Boundary::Periodic}}};
  auto g = Grid::make(spec);
  Metric m({1.0, 2.0}, 1);
  auto V = potential_field(HarmonicPotential{{1.0, 3.0}}, g, m);
  const std::size_t s = 3 * 8 + 6;
  const double x = g->site_coordinate(s, 0), y = g->site_coordinate(s, 1);
  EXPECT_DOUBLE_EQ(V[s], 0.5 * 1.0 * 1.0 * x * x + 0.5 * 2.0 * 9.0 * y * y);
  EXPECT_THROW(potential_field(HarmonicPotential{{-1.0}}, g, m), InvalidArgument);
}
