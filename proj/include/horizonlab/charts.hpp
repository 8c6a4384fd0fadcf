#pragma once
// Global coordinate chart with everywhere-regular metric components.
// Near each root r_j of mu* the time function is Eddington-Finkelstein-like,
// t* = t - F(r) with F' = s(1/mu* + c);  c(r) < 0 at horizons keeps dt* timelike
// there, c = -1/|mu*| in the flanking bands, and quintic Hermite blends join the
// bands across each horizon (value + two derivatives).  Between the Cauchy and
// event horizons c interpolates (1-4b)/mu* so that a single smooth family of
// components covers the whole range; the time-orientation tag s flips only at
// radii where both (c,s) representations give identical metric components.
//
// Dual-metric block convention used throughout (p_t = -sigma):
//   G = A sigma^2 - 2 B sigma xi + C xi^2 - r^{-2} |eta|^2,
//   A = -(2c + mu c^2) = G^{t*t*},  B = s(1 + mu c) = G^{t*r},  C = -mu = G^{rr},
// with the exact algebraic identity A C - B^2 = -1 (unit block determinant).
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <optional>

#include "extend.hpp"

namespace horizonlab {

struct ChartCoeffs {
  double mu = 0.0, dmu = 0.0;
  double c = 0.0, cp = 0.0, s = 0.0;
  double A = 0.0, B = 0.0, C = 0.0;
  double Ap = 0.0, Bp = 0.0, Cp = 0.0;
};

struct Segment {
  enum Kind { PlusInv, MinusInv, Hermite, Interp } kind = PlusInv;
  double lo = 0.0, hi = 0.0;
  double s = 1.0;
  std::array<double, 6> h{};  // Hermite polynomial coefficients in x = (r-lo)/(hi-lo)
};

struct Chart {
  Params params;
  HorizonData hd;
  std::optional<ExtendedProfile> ext;
  double delta = 0.0;
  double rlo = 0.0, rhi = 0.0;
  std::vector<Segment> segs;
  std::vector<double> region_bounds;  // rlo, horizon radii (incl. r0), rhi

  double mu_star(double r) const { return ext ? ext->mu_star(r) : mu(params, r); }
  double dmu_star(double r) const { return ext ? ext->dmu_star(r) : dmu(params, r); }
  double d2mu_star(double r) const { return ext ? ext->d2mu_star(r) : d2mu(params, r); }

  double sign_of(int j) const {
    if (j == 0) return -1.0;  // artificial horizon: mu*' > 0 there
    return hd.at(j).sign;
  }
  double root_of(int j) const {
    if (j == 0) {
      if (!ext) throw DomainError("chart: no artificial horizon without extension");
      return ext->r0;
    }
    return hd.at(j).r;
  }

  const Segment& segment_at(double r) const {
    if (r < rlo - 1e-12 || r > rhi + 1e-12) throw DomainError("chart: r outside chart range");
    for (auto& sg : segs)
      if (r <= sg.hi || &sg == &segs.back()) return sg;
    return segs.back();
  }

  ChartCoeffs eval(double r) const { return eval_seg(segment_at(r), r); }

  // Evaluate one segment's formulas at r (also just outside [lo,hi]: each
  // segment's c extends analytically, which is what join checks need).
  ChartCoeffs eval_seg(const Segment& sg, double r) const {
    ChartCoeffs cc;
    cc.mu = mu_star(r);
    cc.dmu = dmu_star(r);
    cc.s = sg.s;
    switch (sg.kind) {
      case Segment::PlusInv:
        cc.c = 1.0 / cc.mu;
        cc.cp = -cc.dmu / sq(cc.mu);
        break;
      case Segment::MinusInv:
        cc.c = -1.0 / cc.mu;
        cc.cp = cc.dmu / sq(cc.mu);
        break;
      case Segment::Hermite: {
        double W = sg.hi - sg.lo, x = (r - sg.lo) / W;
        double v = 0.0, vp = 0.0;
        for (int k = 5; k >= 0; --k) v = v * x + sg.h[k];
        for (int k = 5; k >= 1; --k) vp = vp * x + k * sg.h[k];
        cc.c = v;
        cc.cp = vp / W;
        break;
      }
      case Segment::Interp: {
        double W = sg.hi - sg.lo, x = (r - sg.lo) / W;
        double b = smooth01(x), bp = smooth01_d(x) / W;
        cc.c = (1.0 - 4.0 * b) / cc.mu;
        cc.cp = -4.0 * bp / cc.mu - (1.0 - 4.0 * b) * cc.dmu / sq(cc.mu);
        break;
      }
    }
    double mc = cc.mu * cc.c;
    cc.A = -cc.c * (2.0 + mc);
    cc.B = cc.s * (1.0 + mc);
    cc.C = -cc.mu;
    double mcp = cc.dmu * cc.c + cc.mu * cc.cp;
    cc.Ap = -cc.cp * (2.0 + mc) - cc.c * mcp;
    cc.Bp = cc.s * mcp;
    cc.Cp = -cc.dmu;
    return cc;
  }

  // t* = t - F(r); F is resolved per region between horizons, anchored at the
  // region midpoint.  Exact log terms carry the horizon poles of 1/mu*.
  double F(double r) const {
    int reg = -1;
    for (size_t i = 0; i + 1 < region_bounds.size(); ++i)
      if (r >= region_bounds[i] && r <= region_bounds[i + 1]) {
        reg = (int)i;
        break;
      }
    if (reg < 0) throw DomainError("chart F: r outside chart range");
    double bl = region_bounds[reg], bh = region_bounds[reg + 1];
    double anchor = 0.5 * (bl + bh);
    if (r == anchor) return 0.0;

    // horizon poles bounding this region
    struct Pole {
      double r, c;
    };
    std::vector<Pole> poles;
    auto is_horizon = [&](double b) {
      if (ext && std::abs(b - ext->r0) < 1e-14) return true;
      for (auto& h : hd.horizons)
        if (std::abs(b - h.r) < 1e-14) return true;
      return false;
    };
    if (is_horizon(bl)) poles.push_back({bl, 1.0 / dmu_star(bl)});
    if (is_horizon(bh)) poles.push_back({bh, 1.0 / dmu_star(bh)});
    auto polesum = [&](double x) {
      double v = 0.0;
      for (auto& q : poles) v += q.c / (x - q.r);
      return v;
    };
    auto polelog = [&](double x) {
      double v = 0.0;
      for (auto& q : poles) v += q.c * std::log(std::abs(x - q.r));
      return v;
    };

    double a = std::min(anchor, r), b = std::max(anchor, r);
    double orient = r >= anchor ? 1.0 : -1.0;
    double total = 0.0;
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    for (auto& sg : segs) {
      double lo = std::max(a, sg.lo), hi = std::min(b, sg.hi);
      if (!(lo < hi)) continue;
      double piece = 0.0;
      switch (sg.kind) {
        case Segment::MinusInv:
          piece = 0.0;  // F' = s(1/mu - 1/mu) = 0 exactly
          break;
        case Segment::PlusInv:
          piece = 2.0 * sg.s *
                  (GK::integrate([&](double x) { return 1.0 / mu_star(x) - polesum(x); }, lo, hi, 12, 1e-12) +
                   polelog(hi) - polelog(lo));
          break;
        case Segment::Hermite: {
          const Segment* sp = &sg;
          auto cfun = [&](double x) {
            double W = sp->hi - sp->lo, t = (x - sp->lo) / W;
            double v = 0.0;
            for (int k = 5; k >= 0; --k) v = v * t + sp->h[k];
            return v;
          };
          piece = sg.s * (GK::integrate([&](double x) { return 1.0 / mu_star(x) - polesum(x); }, lo, hi, 12, 1e-12) +
                          polelog(hi) - polelog(lo) + GK::integrate(cfun, lo, hi, 12, 1e-12));
          break;
        }
        case Segment::Interp: {
          const Segment* sp = &sg;
          piece = sg.s * GK::integrate(
                             [&](double x) {
                               double W = sp->hi - sp->lo, t = (x - sp->lo) / W;
                               return (2.0 - 4.0 * smooth01(t)) / mu_star(x);
                             },
                             lo, hi, 12, 1e-12);
          break;
        }
      }
      total += piece;
    }
    return orient * total;
  }

  // Validation sweep; throws ChartError on any failed invariant.
  void validate(int nsamples = 2000) const {
    double eps = 1e-9 * (rhi - rlo);
    for (int i = 0; i <= nsamples; ++i) {
      double r = rlo + (rhi - rlo) * i / nsamples;
      r = std::min(std::max(r, rlo + eps), rhi - eps);
      if (params.family == Family::dS) r = std::max(r, eps);
      ChartCoeffs cc = eval(r);
      double det = cc.A * cc.C - cc.B * cc.B;
      if (std::abs(det + 1.0) > 1e-12)
        throw ChartError("chart: block determinant != -1 at r = " + std::to_string(r));
      bool want_timelike = true;
      if (hd.has(1) && hd.has(2)) {
        double q1 = hd.at(1).r + 2.0 * delta, q2 = hd.at(2).r - 2.0 * delta;
        if (r > q1 + eps && r < q2 - eps) want_timelike = false;  // interp corridor
      }
      if (want_timelike && !(cc.A > 0.0))
        throw ChartError("chart: dt* not timelike at r = " + std::to_string(r));
    }
    for (auto& h : hd.horizons) {
      if (h.r < rlo || h.r > rhi) continue;
      if (!(eval(h.r).c < 0.0)) throw ChartError("chart: c(r_j) >= 0 at horizon");
      if (!(std::abs(eval(h.r).C) < 1e-10)) throw ChartError("chart: G^rr != 0 at horizon");
    }
    if (ext && !(eval(ext->r0).c < 0.0)) throw ChartError("chart: c(r_0) >= 0");
  }
};

namespace detail {

// c, c', c'' of the band formula sign/mu* at radius r.
inline std::array<double, 3> band_c(const Chart& ch, double sgn, double r) {
  double m = ch.mu_star(r), d1 = ch.dmu_star(r), d2 = ch.d2mu_star(r);
  return {sgn / m, -sgn * d1 / sq(m), sgn * (2.0 * sq(d1) / cube(m) - d2 / sq(m))};
}

// Quintic Hermite segment on [lo,hi] matching value/1st/2nd derivatives of the
// band formulas (sL/mu* on the left, sR/mu* on the right).
inline Segment make_hermite(const Chart& ch, double lo, double hi, double sgnL, double sgnR, double s) {
  auto L = band_c(ch, sgnL, lo), R = band_c(ch, sgnR, hi);
  double W = hi - lo;
  Eigen::Matrix<double, 6, 6> M = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 6, 1> rhs;
  // rows: p(0), p'(0), p''(0), p(1), p'(1), p''(1) in x-units
  M(0, 0) = 1.0;
  M(1, 1) = 1.0;
  M(2, 2) = 2.0;
  for (int k = 0; k < 6; ++k) {
    M(3, k) = 1.0;
    M(4, k) = k;
    M(5, k) = k * (k - 1);
  }
  rhs << L[0], L[1] * W, L[2] * W * W, R[0], R[1] * W, R[2] * W * W;
  Eigen::Matrix<double, 6, 1> sol = M.partialPivLu().solve(rhs);
  Segment sg;
  sg.kind = Segment::Hermite;
  sg.lo = lo;
  sg.hi = hi;
  sg.s = s;
  for (int k = 0; k < 6; ++k) sg.h[k] = sol(k);
  return sg;
}

}  // namespace detail

inline Chart build_charts(const HorizonData& hd, std::optional<ExtendedProfile> ext = {}, double delta = -1.0) {
  const Params& p = hd.params;
  Chart ch;
  ch.params = p;
  ch.hd = hd;
  ch.ext = std::move(ext);

  if (delta <= 0.0) {
    if (ch.ext) {
      delta = ch.ext->delta;
    } else {
      double gap = hd.horizons.front().r;
      for (size_t i = 1; i < hd.horizons.size(); ++i)
        gap = std::min(gap, hd.horizons[i].r - hd.horizons[i - 1].r);
      delta = 0.05 * gap;
    }
  }
  if (ch.ext && delta > ch.ext->delta + 1e-15)
    throw ChartError("build_charts: delta inconsistent with the extension bands");
  ch.delta = delta;
  double d = delta;

  auto seg = [&](Segment::Kind k, double lo, double hi, double s) {
    Segment sg;
    sg.kind = k;
    sg.lo = lo;
    sg.hi = hi;
    sg.s = s;
    ch.segs.push_back(sg);
  };
  auto hermite = [&](double rj, double sgnL, double sgnR, double s) {
    ch.segs.push_back(detail::make_hermite(ch, rj - d, rj + d, sgnL, sgnR, s));
  };

  switch (p.family) {
    case Family::dS: {
      double r3 = hd.at(3).r;
      ch.rlo = 0.0;
      ch.rhi = r3 + 2.5 * d;
      ch.region_bounds = {0.0, r3, ch.rhi};
      seg(Segment::MinusInv, 0.0, r3 - d, +1.0);
      hermite(r3, -1.0, +1.0, +1.0);
      seg(Segment::PlusInv, r3 + d, ch.rhi, +1.0);
      break;
    }
    case Family::RNdS:
      if (p.Q == 0.0) {
        double r2 = hd.at(2).r, r3 = hd.at(3).r, mid23 = 0.5 * (r2 + r3);
        ch.rlo = r2 - 2.5 * d;
        ch.rhi = r3 + 2.5 * d;
        ch.region_bounds = {ch.rlo, r2, r3, ch.rhi};
        seg(Segment::PlusInv, ch.rlo, r2 - d, -1.0);
        hermite(r2, +1.0, -1.0, -1.0);
        seg(Segment::MinusInv, r2 + d, mid23, -1.0);
        seg(Segment::MinusInv, mid23, r3 - d, +1.0);
        hermite(r3, -1.0, +1.0, +1.0);
        seg(Segment::PlusInv, r3 + d, ch.rhi, +1.0);
        break;
      }
      [[fallthrough]];
    case Family::RN: {
      if (!ch.ext) throw ChartError("build_charts: family needs the extended profile");
      double r0 = ch.ext->r0, r1 = hd.at(1).r, r2 = hd.at(2).r;
      double mid01 = 0.5 * (r0 + r1);
      ch.rlo = r0 - 2.0 * d;
      seg(Segment::PlusInv, ch.rlo, r0 - d, -1.0);
      hermite(r0, +1.0, -1.0, -1.0);
      seg(Segment::MinusInv, r0 + d, mid01, -1.0);
      seg(Segment::MinusInv, mid01, r1 - d, +1.0);
      hermite(r1, -1.0, +1.0, +1.0);
      seg(Segment::PlusInv, r1 + d, r1 + 2.0 * d, +1.0);
      seg(Segment::Interp, r1 + 2.0 * d, r2 - 2.0 * d, +1.0);
      seg(Segment::PlusInv, r2 - 2.0 * d, r2 - d, -1.0);
      hermite(r2, +1.0, -1.0, -1.0);
      if (p.family == Family::RNdS) {
        double r3 = hd.at(3).r, mid23 = 0.5 * (r2 + r3);
        ch.rhi = r3 + 2.5 * d;
        ch.region_bounds = {ch.rlo, r0, r1, r2, r3, ch.rhi};
        seg(Segment::MinusInv, r2 + d, mid23, -1.0);
        seg(Segment::MinusInv, mid23, r3 - d, +1.0);
        hermite(r3, -1.0, +1.0, +1.0);
        seg(Segment::PlusInv, r3 + d, ch.rhi, +1.0);
      } else {
        ch.rhi = r2 + std::max(2.5 * d, 2.0 * p.M);
        ch.region_bounds = {ch.rlo, r0, r1, r2, ch.rhi};
        seg(Segment::MinusInv, r2 + d, ch.rhi, -1.0);
      }
      break;
    }
    case Family::KdS:
      throw ChartError("build_charts: kds charts are not constructed here");
  }
  for (auto& sg : ch.segs)
    if (!(sg.hi > sg.lo)) throw ChartError("build_charts: bands overlap (delta too large)");
  ch.validate();
  return ch;
}

}  // namespace horizonlab
