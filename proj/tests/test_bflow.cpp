#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "horizonlab/bflow.hpp"

using namespace horizonlab;

static Chart make_chart(double Lambda, double M, double Q, Family fam = Family::RNdS) {
  Params p;
  p.family = fam;
  p.Lambda = Lambda;
  p.M = M;
  p.Q = Q;
  auto hd = find_horizons(p);
  if (Q > 0.0) return build_charts(hd, extend_mu(hd));
  return build_charts(hd);
}

static const Chart& rnds_chart() {
  static Chart ch = make_chart(0.02, 1.0, 0.5);
  return ch;
}

// richardson-extrapolated central difference of a scalar function of one knob
template <class F>
static double fd_deriv(F&& f, double h) {
  auto d = [&](double hh) { return (f(hh) - f(-hh)) / (2.0 * hh); };
  return (4.0 * d(0.5 * h) - d(h)) / 3.0;
}

TEST_CASE("compactification round-trips; guards on degenerate input") {
  std::mt19937 rng(101);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    BPhasePoint p{1.0 + std::abs(u(rng)), 2.0 + std::abs(u(rng)), u(rng), u(rng), std::abs(u(rng))};
    if (std::abs(p.xi) < 1e-3) p.xi = 0.5;
    auto q = compactify(p);
    CHECK(q.eps == (p.xi > 0 ? 1.0 : -1.0));
    auto b = decompactify(q);
    CHECK(b.r == Catch::Approx(p.r).epsilon(1e-14));
    CHECK(b.sigma == Catch::Approx(p.sigma).margin(1e-14 * std::abs(p.xi)));
    CHECK(b.xi == Catch::Approx(p.xi).epsilon(1e-14));
    CHECK(b.eta == Catch::Approx(p.eta).margin(1e-14 * std::abs(p.xi)));
  }
  CHECK_THROWS_AS(compactify(BPhasePoint{1.0, 3.0, 1.0, 0.0, 0.5}), FlowError);
  CHECK_THROWS_AS(decompactify(CompactifiedPoint{1.0, 3.0, 0.0, 0.1, 0.1, 1.0}), FlowError);
}

TEST_CASE("dual metric matches the contraction with the inverted metric block") {
  const Chart& ch = rnds_chart();
  auto fc = FlowChart::wave(ch);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ur(ch.rlo + 1e-6, ch.rhi - 1e-6);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 400; ++i) {
    double r = ur(rng), sg = u(rng), xi = u(rng), eta = std::abs(u(rng));
    auto cc = ch.eval(r);
    // metric block from (mu, s, c); invert independently of the stored A,B,C
    Eigen::Matrix2d g;
    g(0, 0) = cc.mu;
    g(0, 1) = g(1, 0) = cc.s * (1.0 + cc.mu * cc.c);
    g(1, 1) = cc.c * (2.0 + cc.mu * cc.c);
    Eigen::Matrix2d Gi = g.inverse();
    // covector (p_t, p_r) = (-sigma, xi): G = Gi^{tt} sg^2 - 2 Gi^{tr} sg xi + Gi^{rr} xi^2
    double oracle =
        Gi(0, 0) * sg * sg - 2.0 * Gi(0, 1) * sg * xi + Gi(1, 1) * xi * xi - eta * eta / (r * r);
    double scale = std::abs(oracle) + sg * sg + xi * xi + eta * eta + 1.0;
    CHECK(std::abs(dual_metric(fc, BPhasePoint{1.0, r, sg, xi, eta}) - oracle) < 1e-10 * scale);
  }
  // zero covector
  CHECK(dual_metric(fc, BPhasePoint{1.0, 5.0, 0.0, 0.0, 0.0}) == 0.0);
  // at a horizon in the EF chart: G = -2 s_j sigma xi - eta^2/r^2
  for (int j : {1, 2, 3}) {
    auto ef = FlowChart::ef(ch, j);
    double rj = ch.root_of(j), sj = ch.sign_of(j);
    double g = dual_metric(ef, BPhasePoint{1.0, rj, 0.7, -1.3, 0.4});
    CHECK(g == Catch::Approx(-2.0 * sj * 0.7 * (-1.3) - 0.16 / (rj * rj)).margin(1e-9));
  }
}

TEST_CASE("wave and EF charts assign the same G to the same covector") {
  const Chart& ch = rnds_chart();
  auto fcw = FlowChart::wave(ch);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> ur(ch.rlo + 1e-4, ch.rhi - 1e-4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int j : {0, 1, 2, 3}) {
    auto fce = FlowChart::ef(ch, j);
    double rj = ch.root_of(j);
    int done = 0;
    while (done < 120) {
      double r = ur(rng);
      // the EF_j time function is singular at the other horizons
      bool bad = false;
      for (int k : {0, 1, 2, 3})
        if (k != j && std::abs(r - ch.root_of(k)) < 0.05) bad = true;
      if (bad) continue;
      ++done;
      BPhasePoint p{1.4, r, u(rng), u(rng), std::abs(u(rng))};
      auto pe = to_ef(ch, j, p);
      double gw = dual_metric(fcw, p), ge = dual_metric(fce, pe);
      double scale = fiber_scale(p);
      CHECK(std::abs(gw - ge) < 1e-9 * scale * scale);
      auto back = to_wave(ch, j, pe);
      CHECK(back.xi == Catch::Approx(p.xi).margin(1e-11 * scale));
    }
    // regular right at r_j (the shift degenerates to s_j c there)
    for (double dr : {-1e-9, 0.0, 1e-9}) {
      BPhasePoint p{1.0, rj + dr, 0.9, -0.4, 0.3};
      auto pe = to_ef(ch, j, p);
      REQUIRE(std::isfinite(pe.xi));
      CHECK(std::abs(dual_metric(fcw, p) - dual_metric(fce, pe)) < 1e-9);
    }
  }
}

TEST_CASE("hamiltonian_rhs is the canonical vector field of G") {
  const Chart& ch = rnds_chart();
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> ur(ch.rlo + 1e-3, ch.rhi - 1e-3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  auto check_at = [&](const FlowChart& fc, const BPhasePoint& p) {
    auto d = hamiltonian_rhs(fc, p);
    CHECK(d[2] == 0.0);
    CHECK(d[4] == 0.0);
    double fib = fiber_scale(p) + 1.0;
    // G is quadratic in sigma and xi: plain central differences are exact
    double h = 1e-3;
    auto gs = [&](double hh) {
      return dual_metric(fc, BPhasePoint{p.tau0, p.r, p.sigma + hh, p.xi, p.eta});
    };
    auto gx = [&](double hh) {
      return dual_metric(fc, BPhasePoint{p.tau0, p.r, p.sigma, p.xi + hh, p.eta});
    };
    CHECK(std::abs(p.tau0 * (gs(h) - gs(-h)) / (2 * h) - d[0]) < 1e-9 * fib * fib * p.tau0);
    CHECK(std::abs((gx(h) - gx(-h)) / (2 * h) - d[1]) < 1e-9 * fib * fib);
    // the r-derivative sees the chart profiles; normalize by their own scale
    auto b = fc.block(p.r);
    double scale_r = std::abs(b.Ap) * p.sigma * p.sigma +
                     2.0 * std::abs(b.Bp * p.sigma * p.xi) + std::abs(b.Cp) * p.xi * p.xi +
                     2.0 * p.eta * p.eta / cube(p.r) + std::abs(d[3]) + 1.0;
    // the chart blend regions carry huge high derivatives; bound the truncation
    // error by a step-halving pair (err(d2) ~ |d2 - d1| / 15) plus a roundoff floor
    auto gr = [&](double hh) {
      return dual_metric(fc, BPhasePoint{p.tau0, p.r + hh, p.sigma, p.xi, p.eta});
    };
    double hr = 1e-4 * (1.0 + p.r);
    double d1 = fd_deriv(gr, hr), d2 = fd_deriv(gr, 0.5 * hr);
    CHECK(std::abs(d2 + d[3]) < 4.0 * std::abs(d2 - d1) + 1e-6 * scale_r);
    CHECK(hamilton_r(fc, p) == d[1]);
  };
  auto fcw = FlowChart::wave(ch);
  for (int i = 0; i < 250; ++i)
    check_at(fcw, BPhasePoint{1.7, ur(rng), u(rng), u(rng), std::abs(u(rng))});
  for (int j : {0, 2}) {
    auto fce = FlowChart::ef(ch, j);
    for (int i = 0; i < 120; ++i)
      check_at(fce, BPhasePoint{0.8, ur(rng), u(rng), u(rng), std::abs(u(rng))});
  }
}

TEST_CASE("EF chart closed forms") {
  const Chart& ch = rnds_chart();
  Params pa = ch.params;
  auto fc = FlowChart::ef(ch, 2);
  double r = 2.2, sg = 0.8, xi = -0.6, eta = 0.9, t0 = 1.7;
  double m = mu(pa, r), dm = dmu(pa, r), s2 = ch.sign_of(2);
  auto d = hamiltonian_rhs(fc, BPhasePoint{t0, r, sg, xi, eta});
  CHECK(d[0] == Catch::Approx(t0 * (-2.0 * s2 * xi)).margin(1e-13));
  CHECK(d[1] == Catch::Approx(-2.0 * s2 * sg - 2.0 * m * xi).margin(1e-13));
  CHECK(d[3] == Catch::Approx(dm * xi * xi - 2.0 * eta * eta / cube(r)).margin(1e-12));
  CHECK(s2 == -1.0);
}

TEST_CASE("rescaled field: exact rates at the radial set, transported Ghat identity") {
  const Chart& ch = rnds_chart();
  for (int j : {0, 1, 2, 3}) {
    double rj = ch.root_of(j), sj = ch.sign_of(j), dm = ch.dmu_star(rj);
    for (double eps : {1.0, -1.0}) {
      for (auto* fc : {new FlowChart(FlowChart::ef(ch, j)), new FlowChart(FlowChart::wave(ch))}) {
        auto d = rescaled_rhs(*fc, CompactifiedPoint{1.0, rj, 0.7, 0.0, 0.0, eps});
        CHECK(d[0] == Catch::Approx(-2.0 * sj * eps).margin(1e-8));
        CHECK(std::abs(d[1]) < 1e-8);
        CHECK(d[2] == Catch::Approx(-eps * dm * 0.7).epsilon(1e-8));
        CHECK(d[3] == 0.0);
        CHECK(d[4] == 0.0);
        delete fc;
      }
    }
  }
  // off the set: d Ghat / ds~ = 2 eps W Ghat, checked by FD along the field
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> ur(ch.rlo + 1e-3, ch.rhi - 1e-3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  auto fcw = FlowChart::wave(ch);
  for (int i = 0; i < 250; ++i) {
    CompactifiedPoint q{1.0, ur(rng), 0.3, u(rng), std::abs(u(rng)), u(rng) > 0 ? 1.0 : -1.0};
    auto d = rescaled_rhs(fcw, q);
    auto b = fcw.block(q.r);
    double W = b.Ap * q.sigma_hat * q.sigma_hat - 2.0 * b.Bp * q.eps * q.sigma_hat + b.Cp +
               2.0 * q.eta_hat * q.eta_hat / cube(q.r);
    double gh = dual_metric_hat(fcw, q);
    double dg = fd_deriv(
        [&](double hh) {
          CompactifiedPoint z = q;
          z.r += hh * d[1];
          z.sigma_hat += hh * d[3];
          z.eta_hat += hh * d[4];
          return dual_metric_hat(fcw, z);
        },
        1e-4);
    double scale = (std::abs(b.Ap) + std::abs(b.Bp) + std::abs(b.Cp) + 1.0) *
                   (q.sigma_hat * q.sigma_hat + q.eta_hat * q.eta_hat + 1.0);
    CHECK(std::abs(dg - 2.0 * q.eps * W * gh) < 2e-5 * scale);
    // Ghat agrees with G/xi^2
    auto p = decompactify(q);
    CHECK(std::abs(gh - dual_metric(fcw, p) / (p.xi * p.xi)) < 1e-11 * (std::abs(gh) + 1.0));
  }
}

TEST_CASE("radial null rays: exact speed, horizon crossings, radial-set limits") {
  const Chart& ch = rnds_chart();
  auto fc = FlowChart::wave(ch);
  double r0 = ch.root_of(0), r1 = ch.root_of(1), r2 = ch.root_of(2), r3 = ch.root_of(3);

  auto linear_while_unscaled = [&](const Trajectory& tr, double rstart, double v, double rguard_lo,
                                   double rguard_hi) {
    for (auto& s : tr.samples) {
      if (s.loglam != 0.0) continue;
      if (s.p.r < rguard_lo || s.p.r > rguard_hi) continue;
      REQUIRE(std::abs(s.p.r - (rstart + v * s.s)) < 5e-7);
    }
  };
  auto monotone = [&](const Trajectory& tr, double sgn) {
    for (size_t k = 1; k < tr.samples.size(); ++k)
      REQUIRE(sgn * (tr.samples[k].p.r - tr.samples[k - 1].p.r) > -1e-9);
  };

  SECTION("outgoing from the static band piles up on L3") {
    auto p = radial_null_point(fc, 5.0, 1.0, +1);
    auto tr = integrate(fc, p, 50.0, 1e-11);
    REQUIRE(tr.endpoint == Endpoint::RadialLimit);
    CHECK(tr.limit_j == 3);
    monotone(tr, +1.0);
    CHECK(std::abs(tr.samples.back().p.r - r3) < 1e-5);
    linear_while_unscaled(tr, 5.0, 2.0, 0.0, r3 - 0.1);
    CHECK(tr.gdrift < 1e-8);
    CHECK(tr.sdrift < 1e-8);
  }
  SECTION("ingoing from the static band piles up on L2") {
    auto p = radial_null_point(fc, 5.0, 1.0, -1);
    auto tr = integrate(fc, p, 10.0, 1e-11);
    REQUIRE(tr.endpoint == Endpoint::RadialLimit);
    CHECK(tr.limit_j == 2);
    monotone(tr, -1.0);
    CHECK(std::abs(tr.samples.back().p.r - r2) < 1e-5);
    linear_while_unscaled(tr, 5.0, -2.0, r2 + 0.1, 20.0);
    CHECK(tr.gdrift < 1e-8);
  }
  SECTION("the transversal family crosses r2 and piles up on L1") {
    auto p = radial_null_point(fc, 5.0, -1.0, +1);
    auto tr = integrate(fc, p, 10.0, 1e-11);
    REQUIRE(tr.endpoint == Endpoint::RadialLimit);
    CHECK(tr.limit_j == 1);
    monotone(tr, -1.0);
    bool crossed = false;
    for (auto& s : tr.samples) crossed = crossed || s.p.r < r2 - 10.0 * ch.delta;
    CHECK(crossed);
    double rmin = 1e9;
    for (auto& s : tr.samples) rmin = std::min(rmin, s.p.r);
    CHECK(rmin > r1 - 1e-4);
    CHECK(std::abs(tr.samples.back().p.r - r1) < 1e-5);
    linear_while_unscaled(tr, 5.0, -2.0, r1 + 0.1, 20.0);
    CHECK(tr.gdrift < 1e-7);  // the ray crosses two blend shoulders at full speed
  }
  SECTION("the other family crosses r3 and leaves the chart") {
    auto p = radial_null_point(fc, 5.0, -1.0, -1);
    auto tr = integrate(fc, p, 10.0, 1e-11);
    REQUIRE(tr.endpoint == Endpoint::ExitedDomain);
    monotone(tr, +1.0);
    CHECK(tr.samples.back().p.r > r3);
    for (auto& s : tr.samples) REQUIRE(s.loglam == 0.0);
    linear_while_unscaled(tr, 5.0, 2.0, 0.0, 1e9);
    CHECK(tr.gdrift < 3e-6);  // crosses the cosmological-horizon blends at full speed
  }
  SECTION("from the corridor: crosses the Cauchy horizon, sinks at the artificial horizon") {
    auto p = radial_null_point(fc, 1.0, 1.0, -1);
    auto tr = integrate(fc, p, 5.0, 1e-11);
    REQUIRE(tr.endpoint == Endpoint::RadialLimit);
    CHECK(tr.limit_j == 0);
    monotone(tr, -1.0);
    bool crossed = false;
    for (auto& s : tr.samples) crossed = crossed || s.p.r < r1 - 3.0 * ch.delta;
    CHECK(crossed);
    double rmin = 1e9;
    for (auto& s : tr.samples) rmin = std::min(rmin, s.p.r);
    CHECK(rmin > r0 - 1e-4);
    CHECK(std::abs(tr.samples.back().p.r - r0) < 1e-5);
  }
  SECTION("below the artificial horizon the ray leaves through the inner boundary") {
    auto p = radial_null_point(fc, 0.09, -1.0, +1);
    auto tr = integrate(fc, p, 2.0, 1e-11);
    REQUIRE(tr.endpoint == Endpoint::ExitedDomain);
    CHECK(tr.samples.back().p.r < r0);
    for (auto& s : tr.samples) REQUIRE(s.loglam == 0.0);
  }
}

TEST_CASE("trapped orbit holds the photon sphere; sigma is exactly conserved") {
  const Chart& ch = rnds_chart();
  REQUIRE(ch.hd.trapping.has_value());
  double rP = ch.hd.trapping->rP;
  auto fc = FlowChart::wave(ch);
  auto p = trapped_point(ch, 0.1);
  CHECK(std::abs(dual_metric(fc, p)) < 1e-12);
  auto tr = integrate(fc, p, 50.0, 1e-12);
  REQUIRE(tr.endpoint == Endpoint::SpanEnded);
  for (auto& s : tr.samples) {
    REQUIRE(std::abs(s.p.r - rP) < 1e-6);
    REQUIRE(std::abs(s.p.xi) < 1e-6);
    REQUIRE(s.loglam == 0.0);
  }
  CHECK(tr.sdrift < 1e-14);
  CHECK(tr.gdrift < 1e-8);
}

TEST_CASE("off the trapped set, (r - rP)^2 grows in both flow directions") {
  const Chart& ch = rnds_chart();
  double rP = ch.hd.trapping->rP;
  auto fc = FlowChart::wave(ch);
  for (double dr : {0.1, -0.1}) {
    double r = rP + dr;
    BPhasePoint p{1.0, r, 1.0, 0.0, onshell_eta(fc, r, 1.0, 0.0)};
    BPhasePoint anti{1.0, r, -1.0, 0.0, p.eta};
    for (auto& q : {p, anti}) {
      auto tr = integrate(fc, q, 0.5, 1e-11);
      REQUIRE(tr.endpoint == Endpoint::SpanEnded);
      double F0 = sq(tr.samples.front().p.r - rP);
      double F1 = sq(tr.samples.back().p.r - rP);
      CHECK(F1 > 1.2 * F0);
    }
  }
}

TEST_CASE("hamilton2_r closed form on the static band") {
  const Chart& ch = rnds_chart();
  Params pa = ch.params;
  auto fc = FlowChart::wave(ch);
  for (double r : {2.5, 3.0, 5.0, 8.0, 10.5}) {
    for (double sg : {1.0, 0.7}) {
      BPhasePoint p{1.0, r, sg, 0.0, onshell_eta(fc, r, sg, 0.0)};
      double m = mu(pa, r), dm = dmu(pa, r);
      double oracle = -2.0 * r * r * sg * sg / m * (dm / (r * r) - 2.0 * m / cube(r));
      double got = hamilton2_r(fc, p);
      CHECK(std::abs(got - oracle) < 1e-8 * (std::abs(oracle) + 1.0));
    }
  }
}

TEST_CASE("corridor covectors move strictly monotonically in r") {
  const Chart& ch = rnds_chart();
  auto fc = FlowChart::wave(ch);
  double r1 = ch.root_of(1), r2 = ch.root_of(2);
  double r = 1.0, sg = 1.0, eta = 0.6;
  auto b = fc.block(r);
  double disc = 4.0 * sg * sg + 4.0 * b.C * eta * eta / (r * r);
  REQUIRE(disc > 0.0);
  for (double root : {(2.0 * b.B * sg + std::sqrt(disc)) / (2.0 * b.C),
                      (2.0 * b.B * sg - std::sqrt(disc)) / (2.0 * b.C)}) {
    BPhasePoint p{1.0, r, sg, root, eta};
    REQUIRE(std::abs(dual_metric(fc, p)) < 1e-12);
    auto tr = integrate(fc, p, 3.0, 1e-11);
    int inwin = 0;
    double dir = 0.0;
    for (size_t k = 1; k < tr.samples.size(); ++k) {
      double ra = tr.samples[k - 1].p.r, rb = tr.samples[k].p.r;
      if (ra < r1 + 0.05 || ra > r2 - 0.05 || rb < r1 + 0.05 || rb > r2 - 0.05) continue;
      ++inwin;
      if (dir == 0.0) dir = rb > ra ? 1.0 : -1.0;
      REQUIRE(dir * (rb - ra) > 0.0);
      REQUIRE(dir * hamilton_r(fc, tr.samples[k].p) > 0.0);
    }
    REQUIRE(inwin >= 30);
  }
}

TEST_CASE("component classification: hand rules, antipodes, crossings, monotone zones") {
  const Chart& ch = rnds_chart();
  auto fc = FlowChart::wave(ch);
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  SECTION("static-band rule and the SdS limit") {
    for (double sg : {1.0, -1.0}) {
      for (int br : {+1, -1}) {
        auto p = radial_null_point(fc, 5.0, sg, br);
        CHECK(classify_component(fc, p) == (sg > 0 ? 1 : -1));
      }
      auto ch0 = make_chart(0.02, 1.0, 0.0);
      auto fc0 = FlowChart::wave(ch0);
      auto q = radial_null_point(fc0, 5.0, sg, +1);
      CHECK(classify_component(fc0, q) == (sg > 0 ? 1 : -1));
    }
    CHECK_THROWS_AS(classify_component(fc, BPhasePoint{1.0, 5.0, 0.0, 0.0, 0.0}), FlowError);
  }

  SECTION("antipodal covectors land in opposite components") {
    int done = 0;
    while (done < 200) {
      double r = ch.rlo + 1e-3 + (ch.rhi - ch.rlo - 2e-3) * u01(rng);
      double sg = (u01(rng) < 0.5 ? -1 : 1) * (0.3 + 1.7 * u01(rng));
      auto b = fc.block(r);
      double etamax = b.C < 0.0 ? 0.9 * std::abs(sg) * r / std::sqrt(-b.C) : 2.0;
      double eta = etamax * u01(rng);
      double disc = 4.0 * sg * sg + 4.0 * b.C * eta * eta / (r * r);
      if (disc <= 1e-8) continue;
      double xi = (2.0 * b.B * sg + (u01(rng) < 0.5 ? 1 : -1) * std::sqrt(disc)) / (2.0 * b.C);
      BPhasePoint p{1.0, r, sg, xi, eta};
      if (std::abs(dual_metric(fc, p)) > 1e-8) continue;
      ++done;
      BPhasePoint a{1.0, r, -sg, -xi, eta};
      int cp = classify_component(fc, p), ca = classify_component(fc, a);
      REQUIRE(cp * ca == -1);
    }
  }

  SECTION("crossing table at all four horizons") {
    for (int j : {0, 1, 2, 3}) {
      double rj = ch.root_of(j), sj = ch.sign_of(j);
      for (double sg : {1.0, -1.0}) {
        for (double eta : {0.0, 0.5}) {
          auto b = fc.block(rj);
          double xi = (b.A * sg * sg - eta * eta / (rj * rj)) / (2.0 * b.B * sg);
          BPhasePoint p{1.0, rj, sg, xi, eta};
          REQUIRE(std::abs(dual_metric(fc, p)) < 1e-9);
          int m = classify_component(fc, p);
          int expect = (j <= 1 ? -1 : 1) * (sg > 0 ? 1 : -1);
          CHECK(m == expect);
          double hr = hamilton_r(fc, p);
          CHECK(hr == Catch::Approx(-2.0 * sj * sg).margin(1e-9));
          // Sigma_+ flows to smaller r at r0 and r3, larger r at r1 and r2
          if (j == 0 || j == 3)
            CHECK(m * hr < 0.0);
          else
            CHECK(m * hr > 0.0);
        }
      }
    }
  }

  SECTION("strict monotone zones beyond the artificial and cosmological horizons") {
    double r0 = ch.root_of(0), r3 = ch.root_of(3);
    auto zone = [&](double lo, double hi) {
      for (int i = 0; i < 60; ++i) {
        double r = lo + (hi - lo) * u01(rng);
        double sg = (u01(rng) < 0.5 ? -1 : 1) * (0.3 + 1.2 * u01(rng));
        double eta = 1.5 * u01(rng);
        auto b = fc.block(r);
        REQUIRE(b.C > 0.0);
        double disc = 4.0 * sg * sg + 4.0 * b.C * eta * eta / (r * r);
        double xi = (2.0 * b.B * sg + (u01(rng) < 0.5 ? 1 : -1) * std::sqrt(disc)) / (2.0 * b.C);
        BPhasePoint p{1.0, r, sg, xi, eta};
        int m = classify_component(fc, p);
        REQUIRE(m * hamilton_r(fc, p) < 0.0);
      }
    };
    zone(ch.rlo + 2e-3, r0 - 2e-3);
    zone(r3 + 2e-3, ch.rhi - 2e-3);
  }
}

TEST_CASE("classification is constant along flow lines") {
  const Chart& ch = rnds_chart();
  auto fc = FlowChart::wave(ch);
  auto run = [&](BPhasePoint p, double span) {
    auto tr = integrate(fc, p, span, 1e-11);
    int c0 = classify_component(fc, tr.samples.front().p);
    for (size_t k = 0; k < tr.samples.size(); k += 7) {
      auto& q = tr.samples[k].p;
      if (q.r < ch.rlo || q.r > ch.rhi) continue;
      REQUIRE(classify_component(fc, q) == c0);
    }
  };
  run(radial_null_point(fc, 5.0, 1.0, +1), 40.0);
  run(radial_null_point(fc, 5.0, -1.0, +1), 8.0);
  run(radial_null_point(fc, 5.0, -1.0, -1), 8.0);
  run(trapped_point(ch, 0.5), 12.0);
}

TEST_CASE("radial linearization: double eigenvalue and its 2x saddle partner") {
  const Chart& ch = rnds_chart();
  Params pa = ch.params;
  for (int j : {0, 1, 2, 3}) {
    double dm = ch.dmu_star(ch.root_of(j));
    for (double eps : {1.0, -1.0}) {
      auto ev = linearize_radial(ch, j, eps);
      CHECK(ev[0] == Catch::Approx(-eps * dm).epsilon(1e-5));
      CHECK(ev[1] == Catch::Approx(-eps * dm).epsilon(1e-5));
      CHECK(ev[2] == Catch::Approx(-2.0 * eps * dm).epsilon(1e-5));
      CHECK(std::abs(ev[2] / ev[0]) == Catch::Approx(2.0).epsilon(1e-4));
    }
  }
  // reference configuration: L_2 on the xi > 0 branch is a sink with rates
  // {-mu'(r2), -mu'(r2), -2 mu'(r2)}
  double dm2 = dmu(pa, ch.root_of(2));
  auto ev = linearize_radial(ch, 2, +1.0);
  CHECK(dm2 > 0.0);
  CHECK(ev[0] == Catch::Approx(-dm2).epsilon(1e-6));
  CHECK(ev[1] == Catch::Approx(-dm2).epsilon(1e-6));
  CHECK(ev[2] == Catch::Approx(-2.0 * dm2).epsilon(1e-6));
}

TEST_CASE("measured contraction rates reproduce beta at every horizon") {
  const Chart& ch = rnds_chart();
  for (int j : {1, 2, 3}) {
    auto rr = measure_radial_rates(ch, j);
    double beta = ch.hd.at(j).beta;
    CHECK(rr.rate_tau0 == Catch::Approx(2.0).epsilon(0.01));
    CHECK(rr.rate_rho == Catch::Approx(-std::abs(ch.dmu_star(ch.root_of(j)))).epsilon(0.01));
    CHECK(rr.rate_rho0 == Catch::Approx(2.0 * rr.rate_rho).epsilon(0.015));
    CHECK(rr.beta == Catch::Approx(beta).epsilon(0.01));
  }
  auto rr0 = measure_radial_rates(ch, 0);
  CHECK(rr0.beta == Catch::Approx(2.0 / ch.dmu_star(ch.root_of(0))).epsilon(0.01));
  // Reissner-Nordstrom M=1, Q=0.8: beta_1 = 4/15 exactly
  auto chrn = make_chart(0.0, 1.0, 0.8, Family::RN);
  auto rr1 = measure_radial_rates(chrn, 1);
  CHECK(rr1.beta == Catch::Approx(4.0 / 15.0).epsilon(0.01));
}

TEST_CASE("trapping linearization reproduces nu_min") {
  for (double Q : {0.0, 0.5}) {
    auto ch = make_chart(0.02, 1.0, Q);
    REQUIRE(ch.hd.trapping.has_value());
    double nu = linearize_trapping(ch);
    CHECK(nu == Catch::Approx(ch.hd.trapping->nu_min).epsilon(1e-5));
    CHECK(ch.hd.trapping->gamma0 ==
          Catch::Approx(mu(ch.params, ch.hd.trapping->rP) * nu / 4.0).epsilon(1e-5));
  }
  Params pd;
  pd.family = Family::dS;
  pd.M = 0.0;
  pd.Lambda = 0.03;
  auto chd = build_charts(find_horizons(pd));
  CHECK_THROWS_AS(trapped_point(chd, 1.0), NoPhotonSphere);
  CHECK_THROWS_AS(linearize_trapping(chd), NoPhotonSphere);
}

// ---------------------------------------------------------------------- KdS

static HorizonData kds_data() {
  Params p;
  p.family = Family::KdS;
  p.Lambda = 0.02;
  p.M = 1.0;
  p.a = 0.05;
  return find_horizons(p);
}

TEST_CASE("carter constant: closed forms and chart consistency") {
  auto hd = kds_data();
  Params pa = hd.params;
  double E = 1.0 + pa.gam();

  // equatorial closed form
  KdSPoint p;
  p.r = 3.0;
  p.sigma = 0.4;
  p.zeta = -0.7;
  p.theta = 0.5 * pi_v;
  p.eta = 0.9;
  CHECK(carter(pa, p) ==
        Catch::Approx(E * E * sq(pa.a * p.sigma - p.zeta) + p.eta * p.eta).epsilon(1e-13));

  // a -> 0: total angular momentum eta^2 + zeta^2 / sin^2
  Params p0 = pa;
  p0.a = 1e-7;
  p.theta = 1.1;
  CHECK(carter(p0, p) ==
        Catch::Approx(p.eta * p.eta + sq(p.zeta / std::sin(p.theta))).margin(1e-5));

  // spherical vs pole chart near the axis
  KdSPoint q;
  q.r = 3.1;
  q.sigma = -0.3;
  q.zeta = 0.12;
  q.theta = std::asin(0.15);
  q.phi = 0.8;
  q.eta = -0.6;
  auto qp = kds_to_pole(q);
  CHECK(qp.pole);
  CHECK(carter(pa, qp) == Catch::Approx(carter(pa, q)).epsilon(1e-12));
  auto f = KdSFlow::ef(hd, 2);
  q.xi = 0.3;
  auto qp2 = kds_to_pole(q);
  CHECK(kds_dual_metric(f, qp2) == Catch::Approx(kds_dual_metric(f, q)).epsilon(1e-12));
  auto back = kds_from_pole(qp2);
  CHECK(back.theta == Catch::Approx(q.theta).epsilon(1e-12));
  CHECK(back.phi == Catch::Approx(q.phi).epsilon(1e-12));
  CHECK(back.eta == Catch::Approx(q.eta).epsilon(1e-11));
  CHECK(back.zeta == Catch::Approx(q.zeta).epsilon(1e-11));

  // southern hemisphere keeps its identity through the round trip
  KdSPoint s = q;
  s.theta = pi_v - q.theta;
  auto sp = kds_to_pole(s);
  CHECK(sp.hemi == -1.0);
  CHECK(kds_from_pole(sp).theta == Catch::Approx(s.theta).epsilon(1e-12));

  CHECK_THROWS_AS(kds_to_pole(p), FlowError);  // equatorial point is not near a pole
  KdSPoint degen;
  degen.pole = true;
  CHECK_THROWS_AS(kds_from_pole(degen), FlowError);
}

TEST_CASE("kds_rhs is the canonical vector field of K in both angular charts") {
  auto hd = kds_data();
  auto f = KdSFlow::ef(hd, 2);
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  auto scale_of = [&](const KdSPoint& p) {
    return std::abs(kds_dual_metric(f, p)) + p.xi * p.xi + p.sigma * p.sigma + 1.0;
  };
  auto fd_exact = [&](auto setter, const KdSPoint& p) {
    double h = 1e-3;
    KdSPoint a = p, b = p;
    setter(a, +h);
    setter(b, -h);
    return (kds_dual_metric(f, a) - kds_dual_metric(f, b)) / (2.0 * h);
  };
  auto fd_rich = [&](auto setter, const KdSPoint& p, double h) {
    return fd_deriv(
        [&](double hh) {
          KdSPoint z = p;
          setter(z, hh);
          return kds_dual_metric(f, z);
        },
        h);
  };

  for (int i = 0; i < 150; ++i) {
    KdSPoint p;
    p.tau0 = 1.3;
    p.r = 2.0 + 6.0 * std::abs(u(rng));
    p.sigma = u(rng);
    p.xi = u(rng);
    p.zeta = u(rng);
    p.theta = 0.4 + 2.3 * std::abs(u(rng)) * 0.5;
    p.phi = 2.0 * u(rng);
    p.eta = u(rng);
    auto d = kds_rhs(f, p);
    double sc = scale_of(p);
    // K is polynomial in (r, xi, sigma, zeta, eta): these differences are sharp
    CHECK(std::abs(fd_exact([](KdSPoint& z, double h) { z.xi += h; }, p) - d[1]) < 1e-9 * sc);
    CHECK(std::abs(fd_rich([](KdSPoint& z, double h) { z.r += h; }, p, 1e-3) + d[2]) < 1e-8 * sc);
    CHECK(std::abs(fd_exact([](KdSPoint& z, double h) { z.eta += h; }, p) - d[3]) < 1e-9 * sc);
    CHECK(std::abs(fd_exact([](KdSPoint& z, double h) { z.zeta += h; }, p) - d[4]) < 1e-9 * sc);
    CHECK(std::abs(fd_rich([](KdSPoint& z, double h) { z.theta += h; }, p, 1e-4) + d[5]) <
          2e-6 * sc);
    CHECK(std::abs(p.tau0 * fd_exact([](KdSPoint& z, double h) { z.sigma += h; }, p) - d[0]) <
          1e-9 * sc);
  }

  for (int i = 0; i < 150; ++i) {
    KdSPoint p;
    p.pole = true;
    p.tau0 = 0.9;
    p.r = 2.0 + 6.0 * std::abs(u(rng));
    p.sigma = u(rng);
    p.xi = u(rng);
    double S = 1e-4 + 0.03 * std::abs(u(rng));
    double ang = pi_v * u(rng);
    p.y = std::sqrt(S) * std::cos(ang);
    p.z = std::sqrt(S) * std::sin(ang);
    p.lam = u(rng);
    p.nu = u(rng);
    p.hemi = u(rng) > 0 ? 1.0 : -1.0;
    auto d = kds_rhs(f, p);
    double sc = scale_of(p) + p.lam * p.lam + p.nu * p.nu;
    CHECK(std::abs(fd_exact([](KdSPoint& z, double h) { z.lam += h; }, p) - d[3]) < 1e-9 * sc);
    CHECK(std::abs(fd_exact([](KdSPoint& z, double h) { z.nu += h; }, p) - d[4]) < 1e-9 * sc);
    CHECK(std::abs(fd_rich([](KdSPoint& z, double h) { z.y += h; }, p, 1e-5) + d[5]) < 1e-6 * sc);
    CHECK(std::abs(fd_rich([](KdSPoint& z, double h) { z.z += h; }, p, 1e-5) + d[6]) < 1e-6 * sc);
    CHECK(std::abs(fd_rich([](KdSPoint& z, double h) { z.r += h; }, p, 1e-3) + d[2]) < 1e-8 * sc);
    CHECK(std::abs(fd_exact([](KdSPoint& z, double h) { z.xi += h; }, p) - d[1]) < 1e-9 * sc);
    CHECK(std::abs(p.tau0 * fd_exact([](KdSPoint& z, double h) { z.sigma += h; }, p) - d[0]) <
          1e-9 * sc);
  }
}

TEST_CASE("equatorial photon orbits: stationary, null, and conserved under flow") {
  auto hd = kds_data();
  Params pa = hd.params;
  auto f = KdSFlow::ef(hd, 2);
  auto pro = kds_photon_orbit(f, 0.05, +1);
  auto ret = kds_photon_orbit(f, 0.05, -1);
  CHECK(pro.r > 2.5);
  CHECK(ret.r < 3.5);
  CHECK(ret.r - pro.r > 0.1);
  for (auto& orb : {pro, ret}) {
    CHECK(std::abs(kds_dual_metric(f, orb)) < 1e-10);
    auto d = kds_rhs(f, orb);
    CHECK(std::abs(d[1]) < 1e-8);  // dr/ds
    CHECK(std::abs(d[2]) < 1e-8);  // dxi/ds
  }
  // a -> 0 the orbit collapses to r = 3M
  Params p0 = pa;
  p0.a = 1e-6;
  auto hd0 = find_horizons(p0);
  auto f0 = KdSFlow::ef(hd0, 2);
  CHECK(kds_photon_orbit(f0, 0.05, +1).r == Catch::Approx(3.0).margin(1e-4));

  // perturbed orbit: conserved quantities hold while the instability carries the
  // ray off the photon shell and out through the cosmological side
  KdSPoint p = pro;
  p.r += 0.01;
  p.xi = kds_onshell_xi(f, p, +1);
  CHECK(std::abs(kds_dual_metric(f, p)) < 1e-12);
  auto tr = kds_integrate(f, p, 100.0, 1e-12);
  REQUIRE(tr.endpoint == Endpoint::ExitedDomain);
  CHECK(tr.kdrift < 1e-8);
  CHECK(tr.pcdrift < 1e-8);
  CHECK(tr.zdrift < 1e-8);
  double locus = 0.0;
  for (auto& s : tr.samples) {
    locus = std::max(locus, std::abs(s.p.r - pro.r));
    if (s.s <= 20.0) REQUIRE(std::abs(s.p.r - pro.r) < 0.05);  // hover phase
  }
  CHECK(tr.samples.back().s > 20.0);
  CHECK(locus > 1.0);
  CHECK(tr.samples.back().p.r > 10.0);
}

TEST_CASE("polar photon orbit threads both poles through the regularized chart") {
  auto hd = kds_data();
  Params pa = hd.params;
  auto f = KdSFlow::ef(hd, 2);
  double E = 1.0 + pa.gam(), sj = f.sj, sg = 0.05;
  // circular polar orbit: xi' = 0 and r' = 0 with zeta = 0
  auto g = [&](double r) { return dmu(pa, r) * (r * r + pa.a * pa.a) - 4.0 * r * mu(pa, r); };
  double rs = bisect(g, 2.5, 3.5);
  KdSPoint p;
  p.r = rs;
  p.sigma = sg;
  p.zeta = 0.0;
  p.theta = 0.5 * pi_v;
  p.phi = 0.3;
  p.xi = -4.0 * E * sj * rs * sg / dmu(pa, rs);
  double pc = -mu(pa, rs) * p.xi * p.xi -
              2.0 * E * sj * p.xi * (rs * rs + pa.a * pa.a) * sg;  // K = 0 with zeta = 0
  double eta2 = pc - E * E * pa.a * pa.a * sg * sg;
  REQUIRE(eta2 > 0.0);
  p.eta = -std::sqrt(eta2);  // theta' = -2 kappa eta > 0: start toward the south pole
  CHECK(std::abs(kds_dual_metric(f, p)) < 1e-12);

  auto tr = kds_integrate(f, p, 60.0, 1e-12);
  REQUIRE(tr.endpoint == Endpoint::SpanEnded);
  CHECK(tr.pole_switches >= 4);
  CHECK(tr.kdrift < 1e-8);
  CHECK(tr.pcdrift < 1e-8);
  CHECK(tr.zdrift < 1e-8);
  bool north = false, south = false;
  double rmax = 0.0;
  for (auto& s : tr.samples) {
    rmax = std::max(rmax, std::abs(s.p.r - rs));
    if (s.p.pole && s.p.hemi > 0) north = true;
    if (s.p.pole && s.p.hemi < 0) south = true;
  }
  CHECK(north);
  CHECK(south);
  CHECK(rmax < 0.01);
}

TEST_CASE("flow construction guards") {
  const Chart& ch = rnds_chart();
  auto fc = FlowChart::wave(ch);
  CHECK_THROWS_AS(radial_null_point(fc, ch.root_of(2), 1.0, +1), FlowError);
  CHECK_THROWS_AS(onshell_eta(fc, 5.0, 0.0, 1.0), FlowError);
  auto sds = make_chart(0.02, 1.0, 0.0);
  CHECK_THROWS_AS(FlowChart::ef(sds, 0), DomainError);
  CHECK_THROWS_AS(FlowChart::ef(ch, 7), DomainError);
  // coefficients freeze outside the chart instead of throwing
  auto bhi = fc.block(ch.rhi + 5.0);
  CHECK(bhi.mu == fc.block(ch.rhi).mu);

  auto hd = kds_data();
  CHECK_THROWS_AS(KdSFlow::ef(ch.hd, 2), FlowError);
  auto f = KdSFlow::ef(hd, 2);
  KdSPoint p;
  p.r = 3.0;
  p.sigma = 0.05;
  p.zeta = 0.0;
  p.theta = 0.5 * pi_v;
  p.eta = 5.0;
  CHECK_THROWS_AS(kds_onshell_xi(f, p, +1), FlowError);
}
