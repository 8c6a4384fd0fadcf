#pragma once
// Inward extension of mu past the Cauchy horizon: mu*(r) = mu(r) for r >= m,
// and mu*(r) = r^2 w(s) for r < m, with w a degree-6 polynomial in the scaled
// coordinate s = (r-r0)/(m-r0), C^4-matched to r^{-2}mu at m = r_1 - 2 delta.
// w has a simple zero at r0 (an artificial horizon) with tunable slope, chosen
// so that mu* < 0 below r0, mu* > 0 on (r0, r_1), and r^{-2}mu* has exactly one
// critical point in (r0, r_1).
#include <Eigen/Dense>
#include <array>

#include "spacetime.hpp"

namespace horizonlab {

struct ExtendedProfile {
  Params params;
  double r1 = 0.0;     // Cauchy horizon radius
  double r0 = 0.0;     // artificial horizon radius
  double delta = 0.0;  // band half-width used downstream
  double m = 0.0;      // match point r_1 - 2 delta
  double L = 0.0;      // scale m - r0
  double slope = 0.0;  // w'(0) in s-units
  double rlo = 0.0;    // lower edge of validity
  double rPstar = 0.0; // critical point of r^{-2} mu* in (r0, r_1)
  std::array<double, 7> a{};  // w(s) = sum a_k s^k

  double w(double s) const {
    double v = 0.0;
    for (int k = 6; k >= 0; --k) v = v * s + a[k];
    return v;
  }
  double wp(double s) const {
    double v = 0.0;
    for (int k = 6; k >= 1; --k) v = v * s + k * a[k];
    return v;
  }
  double wpp(double s) const {
    double v = 0.0;
    for (int k = 6; k >= 2; --k) v = v * s + k * (k - 1) * a[k];
    return v;
  }

  bool in_extension(double r) const { return r < m; }

  double mu_star(double r) const {
    if (r >= m) return mu(params, r);
    check(r);
    return r * r * w((r - r0) / L);
  }
  double dmu_star(double r) const {
    if (r >= m) return dmu(params, r);
    check(r);
    double s = (r - r0) / L;
    return 2.0 * r * w(s) + r * r * wp(s) / L;
  }
  double d2mu_star(double r) const {
    if (r >= m) return d2mu(params, r);
    check(r);
    double s = (r - r0) / L;
    return 2.0 * w(s) + 4.0 * r * wp(s) / L + r * r * wpp(s) / (L * L);
  }
  // d/dr of r^{-2} mu*
  double r2mu_star_d(double r) const {
    if (r >= m) {
      double r5 = r * r * r * r * r;
      return -2.0 * (r * r - 3.0 * params.M * r + 2.0 * params.Q * params.Q) / r5;
    }
    check(r);
    return wp((r - r0) / L) / L;
  }

 private:
  void check(double r) const {
    if (r < rlo) throw DomainError("mu_star: r below extension validity edge");
  }
};

namespace detail {

// r^{-2} mu and its first four r-derivatives (Lambda enters only the value).
inline std::array<double, 5> r2mu_derivs(const Params& p, double r) {
  double M = p.M, Q2 = p.Q * p.Q;
  double ir = 1.0 / r;
  double i2 = ir * ir, i3 = i2 * ir, i4 = i3 * ir, i5 = i4 * ir, i6 = i5 * ir, i7 = i6 * ir, i8 = i7 * ir;
  return {i2 - 2.0 * M * i3 + Q2 * i4 - p.lam(),
          -2.0 * i3 + 6.0 * M * i4 - 4.0 * Q2 * i5,
          6.0 * i4 - 24.0 * M * i5 + 20.0 * Q2 * i6,
          -24.0 * i5 + 120.0 * M * i6 - 120.0 * Q2 * i7,
          120.0 * i6 - 720.0 * M * i7 + 840.0 * Q2 * i8};
}

}  // namespace detail

inline ExtendedProfile extend_mu(const HorizonData& hd, double r0 = -1.0, double delta = -1.0) {
  const Params& p = hd.params;
  if (p.family != Family::RNdS && p.family != Family::RN)
    throw ExtensionError("extend_mu: extension requires a Cauchy horizon (rnds/rn with Q > 0)");
  if (!hd.has(1)) throw ExtensionError("extend_mu: no Cauchy horizon present");
  double r1 = hd.at(1).r;
  if (delta <= 0.0) {
    double gap = r1;
    for (size_t i = 1; i < hd.horizons.size(); ++i)
      gap = std::min(gap, hd.horizons[i].r - hd.horizons[i - 1].r);
    delta = 0.05 * gap;
  }
  if (r0 <= 0.0) r0 = 0.5 * r1;
  if (!(r0 > 0.0) || !(r0 < r1 - 3.0 * delta))
    throw ExtensionError("extend_mu: need 0 < r0 < r_1 - 3 delta");

  ExtendedProfile ep;
  ep.params = p;
  ep.r1 = r1;
  ep.r0 = r0;
  ep.delta = delta;
  ep.m = r1 - 2.0 * delta;
  ep.L = ep.m - r0;
  ep.rlo = r0 - 2.5 * delta;
  if (ep.rlo <= 0.0) throw ExtensionError("extend_mu: r0 - 2.5 delta must stay positive");

  // match data g_j = L^j d^j(r^{-2}mu)/dr^j at m
  auto d = detail::r2mu_derivs(p, ep.m);
  double g[5], Lk = 1.0;
  for (int j = 0; j < 5; ++j) {
    g[j] = d[j] * Lk;
    Lk *= ep.L;
  }

  // with a0 = 0, a1 = S: solve for a2..a6 from the five conditions at s = 1
  Eigen::Matrix<double, 5, 5> Mx;
  for (int j = 0; j < 5; ++j)
    for (int k = 2; k <= 6; ++k) {
      double c = 1.0;
      for (int t = 0; t < j; ++t) c *= (k - t);
      Mx(j, k - 2) = (k - j >= 0) ? c : 0.0;
    }
  auto lu = Mx.partialPivLu();

  double slo = (ep.rlo - r0) / ep.L;  // negative
  double best_score = -1.0, best_S = 0.0;
  std::array<double, 7> best_a{};
  double Sref = std::abs(g[1]) + std::abs(g[0]);
  for (int is = 0; is <= 240; ++is) {
    double S = Sref * std::pow(10.0, -3.0 + 6.0 * is / 240.0);
    Eigen::Matrix<double, 5, 1> rhs;
    for (int j = 0; j < 5; ++j) rhs(j) = g[j] - (j <= 1 ? S : 0.0);
    Eigen::Matrix<double, 5, 1> sol = lu.solve(rhs);
    std::array<double, 7> a{0.0, S, sol(0), sol(1), sol(2), sol(3), sol(4)};
    ExtendedProfile trial = ep;
    trial.a = a;
    trial.slope = S;
    // admissibility on dense samples
    bool ok = true;
    double wmid = 1e300, wmax = 0.0;
    int signflips = 0;
    double prev_wp = trial.wp(1e-4);
    if (!(prev_wp > 0.0)) ok = false;
    for (int i = 1; i <= 2000 && ok; ++i) {
      double s = 1e-4 + (1.0 - 2e-4) * i / 2000.0;
      double wv = trial.w(s);
      if (!(wv > 0.0)) ok = false;
      if (s >= 0.1) wmid = std::min(wmid, wv);
      wmax = std::max(wmax, wv);
      double wpv = trial.wp(s);
      if (wpv * prev_wp < 0.0) ++signflips;
      if (wpv != 0.0) prev_wp = wpv;
    }
    if (signflips != 1) ok = false;
    for (int i = 1; i <= 400 && ok; ++i) {
      double s = slo * i / 400.0;
      if (!(trial.w(s) < 0.0)) ok = false;
    }
    if (!ok) continue;
    // flatness away from the pinned zero at s = 0: avoids both a spike
    // (huge slope) and a degenerate artificial horizon (vanishing slope)
    double score = wmid / wmax;
    if (score > best_score) {
      best_score = score;
      best_S = S;
      best_a = a;
    }
  }
  if (best_score <= 0.0) throw ExtensionError("extend_mu: no admissible slope found");
  ep.a = best_a;
  ep.slope = best_S;

  // critical point of r^{-2} mu* in (r0, r_1): single sign change of w' in (0,1)
  auto wpf = [&](double s) { return ep.wp(s); };
  auto br = bracket_scan(wpf, 1e-6, 1.0 - 1e-12, 2000);
  if (br.size() != 1) throw ExtensionError("extend_mu: critical point of r^-2 mu* not unique");
  double scrit = bisect(wpf, br[0].first, br[0].second);
  ep.rPstar = r0 + ep.L * scrit;
  return ep;
}

}  // namespace horizonlab
