#pragma once
// Horizon structure of the RNdS / KdS / RN / dS metric functions: root finding,
// surface gravities, inverse surface gravities, photon-sphere data.
#include <algorithm>
#include <optional>

#include "core.hpp"
#include "roots.hpp"

namespace horizonlab {

// mu(r) = 1 - 2M/r + Q^2/r^2 - lam r^2   (RNdS; RN: lam=0; dS: M=Q=0).
// For KdS the analogous object is mut(r) = (r^2+a^2)(1 - lam r^2) - 2Mr.
inline double mu(const Params& p, double r) {
  if (!(r > 0.0)) throw DomainError("mu: r must be > 0");
  if (p.family == Family::KdS) return (r * r + p.a * p.a) * (1.0 - p.lam() * r * r) - 2.0 * p.M * r;
  return 1.0 - 2.0 * p.M / r + p.Q * p.Q / (r * r) - p.lam() * r * r;
}

inline double dmu(const Params& p, double r) {
  if (!(r > 0.0)) throw DomainError("mu: r must be > 0");
  if (p.family == Family::KdS)
    return 2.0 * r * (1.0 - p.lam() * r * r) - 2.0 * p.lam() * r * (r * r + p.a * p.a) - 2.0 * p.M;
  return 2.0 * p.M / (r * r) - 2.0 * p.Q * p.Q / cube(r) - 2.0 * p.lam() * r;
}

inline double d2mu(const Params& p, double r) {
  if (!(r > 0.0)) throw DomainError("mu: r must be > 0");
  if (p.family == Family::KdS) return 2.0 - p.lam() * (12.0 * r * r + 2.0 * p.a * p.a);
  return -4.0 * p.M / cube(r) + 6.0 * p.Q * p.Q / sq(sq(r)) - 2.0 * p.lam();
}

// Horizon polynomial h(r): r^2 mu (RNdS family) or mut (KdS).  Quartic in r with
// no cubic term, so the four roots sum to zero.
inline double horizon_poly(const Params& p, double r) {
  if (p.family == Family::KdS) return mu(p, r);
  double lam = p.lam();
  return -lam * sq(sq(r)) + r * r - 2.0 * p.M * r + p.Q * p.Q;
}
inline double horizon_poly_d(const Params& p, double r) {
  if (p.family == Family::KdS) return dmu(p, r);
  return -4.0 * p.lam() * cube(r) + 2.0 * r - 2.0 * p.M;
}

struct NondegReport {
  bool ok = false;
  int roots_found = 0;
  int roots_expected = 0;
  std::string reason;
};

struct Horizon {
  int j = 0;        // index: 0 artificial, 1 Cauchy, 2 event, 3 cosmological
  double r = 0.0;
  double kappa = 0.0;  // surface gravity
  double beta = 0.0;   // inverse surface gravity
  double sign = 0.0;   // s_j = -sgn mu'(r_j)
};

struct Trapping {
  double rP = 0.0;      // photon-sphere radius
  double nu_min = 0.0;  // minimal normal expansion rate (sigma-normalized)
  double gamma0 = 0.0;  // = mu(rP) nu_min / 4
};

struct HorizonData {
  Params params;
  std::vector<Horizon> horizons;  // ascending in r; indices per family
  double r_neg = 0.0;             // the negative quartic root (Lambda > 0)
  std::optional<Trapping> trapping;

  bool has(int j) const {
    for (auto& h : horizons)
      if (h.j == j) return true;
    return false;
  }
  const Horizon& at(int j) const {
    for (auto& h : horizons)
      if (h.j == j) return h;
    throw DomainError("horizon index not present for this family");
  }
};

namespace detail {

inline int expected_roots(const Params& p) {
  switch (p.family) {
    case Family::dS: return 1;
    case Family::RN: return 2;
    case Family::KdS: return 3;
    case Family::RNdS: return p.Q > 0.0 ? 3 : 2;
  }
  return 0;
}

inline std::vector<std::pair<double, double>> horizon_brackets(const Params& p, int n) {
  double lam = p.lam();
  double rmax = lam > 0.0 ? 2.0 / std::sqrt(lam) : 4.0 * p.M;
  double rmin = 1e-9 * std::max(p.M, rmax * 1e-3);
  // at small spin or charge the inner horizon sits near a^2/2M (resp. Q^2/2M);
  // start the log scan safely inside it
  if (p.M > 0.0 && p.family == Family::KdS && p.a > 0.0)
    rmin = std::min(rmin, p.a * p.a / (8.0 * p.M));
  if (p.M > 0.0 && p.Q > 0.0) rmin = std::min(rmin, p.Q * p.Q / (8.0 * p.M));
  auto h = [&](double r) { return horizon_poly(p, r); };
  auto br = bracket_scan(h, rmin, rmax, n, /*log_spaced=*/true);
  auto br2 = bracket_scan(h, rmin, rmax, n, /*log_spaced=*/false);
  // merge: keep log-scan brackets, add linear ones that bracket a distinct root
  for (auto& b : br2) {
    bool dup = false;
    for (auto& c : br)
      if (!(b.second < c.first || b.first > c.second)) dup = true;
    if (!dup) br.push_back(b);
  }
  std::sort(br.begin(), br.end());
  return br;
}

}  // namespace detail

// Nondegeneracy: all horizons of the family present as simple roots.  For Q = 0
// (Schwarzschild-dS) this is exactly the classical predicate 9 Lambda M^2 < 1.
inline NondegReport check_nondegenerate(const Params& p, int samples = 4096) {
  p.validate();
  NondegReport rep;
  rep.roots_expected = detail::expected_roots(p);
  if (p.family == Family::dS) {
    rep.ok = true;
    rep.roots_found = 1;
    rep.reason = "de Sitter horizon always present";
    return rep;
  }
  if (p.family == Family::RN) {
    rep.ok = p.Q < p.M;
    rep.roots_found = rep.ok ? 2 : 0;
    rep.reason = rep.ok ? "0 < Q < M" : "Q >= M";
    return rep;
  }
  if (p.family == Family::RNdS && p.Q == 0.0) {
    double pred = 9.0 * p.Lambda * p.M * p.M;
    rep.ok = pred < 1.0;
    rep.roots_found = rep.ok ? 2 : 0;
    rep.reason = "9 Lambda M^2 = " + std::to_string(pred) + (rep.ok ? " < 1" : " >= 1");
    return rep;
  }
  auto br = detail::horizon_brackets(p, samples);
  rep.roots_found = (int)br.size();
  if (rep.roots_found != rep.roots_expected) {
    rep.ok = false;
    rep.reason = "found " + std::to_string(rep.roots_found) + " positive roots, expected " +
                 std::to_string(rep.roots_expected);
    return rep;
  }
  for (auto& b : br) {
    double r = bisect([&](double x) { return horizon_poly(p, x); }, b.first, b.second);
    if (std::abs(dmu(p, r)) < 1e-8) {
      rep.ok = false;
      rep.reason = "near-degenerate root at r = " + std::to_string(r);
      return rep;
    }
  }
  rep.ok = true;
  rep.reason = "all roots simple";
  return rep;
}

// Locate the horizons, attach surface gravities / inverse surface gravities and
// (where defined) photon-sphere data.
inline Trapping photon_sphere(const Params& p);

inline HorizonData find_horizons(const Params& p, int samples = 4096, double root_tol = 1e-12) {
  p.validate();
  HorizonData hd;
  hd.params = p;
  std::vector<double> roots;

  if (p.family == Family::dS) {
    roots = {1.0 / std::sqrt(p.lam())};
  } else if (p.family == Family::RN) {
    double d = std::sqrt(p.M * p.M - p.Q * p.Q);
    roots = {p.M - d, p.M + d};
  } else {
    auto br = detail::horizon_brackets(p, samples);
    int expect = detail::expected_roots(p);
    if ((int)br.size() < expect)
      throw NoBracket("find_horizons: found " + std::to_string(br.size()) + " brackets, expected " +
                      std::to_string(expect));
    for (auto& b : br) {
      double r = bisect([&](double x) { return horizon_poly(p, x); }, b.first, b.second);
      r = newton_polish([&](double x) { return horizon_poly(p, x); },
                        [&](double x) { return horizon_poly_d(p, x); }, r, b.first, b.second);
      roots.push_back(r);
    }
  }
  std::sort(roots.begin(), roots.end());

  // residual and simplicity checks
  double sup = 0.0;
  for (int i = 1; i <= 64; ++i) sup = std::max(sup, std::abs(mu(p, roots.back() * i / 64.0)));
  for (double r : roots) {
    if (std::abs(mu(p, r)) > root_tol * std::max(1.0, sup))
      throw DegenerateRoots("find_horizons: residual too large at r = " + std::to_string(r));
    if (std::abs(dmu(p, r)) < 1e-8)
      throw DegenerateRoots("find_horizons: |mu'| < 1e-8 at r = " + std::to_string(r));
  }
  for (size_t i = 1; i < roots.size(); ++i)
    if (roots[i] - roots[i - 1] < 1e-6 * std::max(1.0, roots[i]))
      throw DegenerateRoots("find_horizons: roots nearly coincide");

  // index assignment per family
  std::vector<int> idx;
  switch (p.family) {
    case Family::dS: idx = {3}; break;
    case Family::RN: idx = {1, 2}; break;
    case Family::KdS: idx = {1, 2, 3}; break;
    case Family::RNdS: idx = p.Q > 0.0 ? std::vector<int>{1, 2, 3} : std::vector<int>{2, 3}; break;
  }
  double gam1 = 1.0 + p.gam();
  for (size_t i = 0; i < roots.size(); ++i) {
    Horizon h;
    h.j = idx[i];
    h.r = roots[i];
    double dm = dmu(p, roots[i]);
    h.sign = -sgn(dm);
    if (p.family == Family::KdS) {
      h.beta = 2.0 * gam1 * (roots[i] * roots[i] + p.a * p.a) / std::abs(dm);
      h.kappa = 1.0 / h.beta;
    } else {
      h.kappa = 0.5 * std::abs(dm);
      h.beta = 1.0 / h.kappa;
    }
    hd.horizons.push_back(h);
  }

  if (p.lam() > 0.0) {
    double s = 0.0;
    for (double r : roots) s += r;
    hd.r_neg = -s;  // quartic has no cubic term; for Q=0 the fourth root r=0 drops out
  }

  if (p.family != Family::KdS && p.family != Family::dS && 9.0 * p.M * p.M >= 8.0 * p.Q * p.Q) {
    Trapping t = photon_sphere(p);
    if (mu(p, t.rP) > 0.0) hd.trapping = t;
  }
  return hd;
}

// Photon sphere (closed form) and the associated normal-hyperbolicity rate.
inline Trapping photon_sphere(const Params& p) {
  p.validate();
  if (p.family == Family::KdS) throw NoPhotonSphere("photon_sphere: not defined for kds here");
  if (p.family == Family::dS) throw NoPhotonSphere("photon_sphere: no photon sphere for ds");
  double disc = 9.0 * p.M * p.M - 8.0 * p.Q * p.Q;
  if (disc < 0.0) throw NoPhotonSphere("photon_sphere: 9 M^2 < 8 Q^2");
  Trapping t;
  t.rP = 0.5 * (3.0 * p.M + std::sqrt(disc));
  double muP = mu(p, t.rP);
  if (!(muP > 0.0)) throw NoPhotonSphere("photon_sphere: mu(rP) <= 0");
  t.nu_min = (2.0 / t.rP) * std::sqrt((2.0 - 3.0 * p.M / t.rP) / muP);
  t.gamma0 = 0.25 * muP * t.nu_min;
  return t;
}

// Convenience: kappa/beta table accessor ("thresholds" of the horizon set).
struct ThresholdRow {
  int j;
  double r, kappa, beta;
};
inline std::vector<ThresholdRow> thresholds(const HorizonData& hd) {
  std::vector<ThresholdRow> out;
  for (auto& h : hd.horizons) out.push_back({h.j, h.r, h.kappa, h.beta});
  return out;
}

}  // namespace horizonlab
