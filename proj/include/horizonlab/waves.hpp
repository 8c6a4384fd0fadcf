#pragma once
// Spherical-harmonic mode evolution of the scalar wave / Klein-Gordon equation:
// an exterior engine on the horizon-penetrating foliation (ringdown, decay to
// constants, event-horizon tails) and an interior double-null engine carrying
// characteristic data from the event horizon to the Cauchy horizon.
//
// Exterior: first-order reduction (u, pi = d_t u, chi = d_r u) of
//   r^-2 d_t(r^2 (A pi + B chi)) + r^-2 d_r(r^2 (B pi + C chi))
//     + (l(l+1)/r^2 + m^2) u = S,
// central differences inside, one-sided at the excision ends (pure outflow:
// every characteristic (B±1)/A exits there), Kreiss-Oliger dissipation, RK4.
//
// Interior: psi = r u on the null rectangle u,v >= 0 with r* = (u+v)/2 + const,
// v the Eddington-Finkelstein advanced time, so r falls from r(0,0) toward r_1
// along both coordinates and CH+ sits at v = infinity.  In these coordinates
// 4 d_u d_v psi = V psi with V = mu (l(l+1)/r^2 + mu'/r + m^2), giving the
// diamond update psi_N = psi_W + psi_E - psi_S + (du dv/8) V_c (psi_W + psi_E)
// with V_c on the cell-center diagonal (second order; constants stay exact).
// The compactified coordinate V = -e^{-kappa_1 v}/kappa_1 underflows long
// before the fits run out of range, so transversal output is kept in log form:
// log|d_V u| = log|d_v u| + kappa_1 v.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "charts.hpp"

namespace horizonlab {

// ------------------------------------------------------------- mode reduction

// 1+1 operator acting on a single spherical-harmonic mode.
struct ModeOperator {
  const Chart* ch = nullptr;
  int ell = 0;
  double mass2 = 0.0;

  double potential(double r) const { return ell * (ell + 1) / (r * r) + mass2; }

  // PDE residual on a full 2-jet (u, u_t, u_r, u_tt, u_tr, u_rr) at radius r.
  double apply(double r, double u, double ut, double ur, double utt, double utr,
               double urr) const {
    auto cc = ch->eval(r);
    return cc.A * utt + 2.0 * cc.B * utr + cc.C * urr + (cc.Bp + 2.0 * cc.B / r) * ut +
           (cc.Cp + 2.0 * cc.C / r) * ur + potential(r) * u;
  }
};

inline ModeOperator mode_reduce(const Chart& ch, int ell, double mass2) {
  if (ell < 0) throw DomainError("mode_reduce: ell must be >= 0");
  if (mass2 < 0.0) throw DomainError("mode_reduce: mass2 must be >= 0");
  return ModeOperator{&ch, ell, mass2};
}

// ------------------------------------------------------------ exterior engine

struct PulseSpec {
  double center = -1.0;  // < 0: 45% across the domain
  double width = -1.0;   // < 0: 6% of the domain
  double amp = 1.0;
};

struct ExteriorConfig {
  int ell = 0;
  double mass2 = 0.0;
  int n = 2000;
  double cfl = 0.5;
  double t_end = 100.0;
  double dexc = -1.0;  // excision depth below r_2 (default 1.5 delta); ignored for dS
  double dout = -1.0;  // excision depth beyond r_3 (default 1.5 delta)
  double ko_eps = 0.05;
  double dt_override = 0.0;  // > 0: fixed step (domain-of-dependence comparisons)
  PulseSpec pulse{};
  std::vector<double> probe_r;  // near-horizon probe r_2 - dexc/2 is appended (non-dS)
  int snap_stride = 0;          // snapshots every k steps (0: first and last only)
  std::function<double(double, double)> source;  // S(t, r), manufactured solutions
  std::function<double(double)> init_u, init_pi;  // override the pulse when set
};

struct ExtSnapshot {
  double t = 0.0;
  std::vector<double> u, pi, chi;
};

struct ExteriorField {
  std::vector<double> r;
  int ell = 0;
  double mass2 = 0.0;
  double dt = 0.0;
  long steps = 0;
  bool ds_center = false;
  std::vector<double> probe_r;
  std::vector<TimeSeries> probe_u, probe_dt, probe_dr;
  std::vector<ExtSnapshot> snaps;
};

namespace detail {

// 4-point (cubic) or 2-point (linear) Lagrange interpolation on a uniform grid.
inline double interp_uniform(const std::vector<double>& f, double x0, double h, double x,
                             int order) {
  int n = (int)f.size();
  double s = (x - x0) / h;
  if (order <= 2) {
    int i = std::clamp((int)std::floor(s), 0, n - 2);
    double w = s - i;
    return (1.0 - w) * f[i] + w * f[i + 1];
  }
  int i = std::clamp((int)std::floor(s) - 1, 0, n - 4);
  double w = s - i;
  double c0 = -(w - 1.0) * (w - 2.0) * (w - 3.0) / 6.0;
  double c1 = w * (w - 2.0) * (w - 3.0) / 2.0;
  double c2 = -w * (w - 1.0) * (w - 3.0) / 2.0;
  double c3 = w * (w - 1.0) * (w - 2.0) / 6.0;
  return c0 * f[i] + c1 * f[i + 1] + c2 * f[i + 2] + c3 * f[i + 3];
}

struct ExtWork {
  std::vector<double> A, B, C, bb, cc, pot, r;
  std::vector<double> wgt;  // (r_i/rref)^(2l+2), radial measure (center grids)
  double h = 0.0, rlo = 0.0;
  int n = 0, ell = 0;
  bool center = false;  // staggered dS grid with parity ghosts at r = 0
  double ko = 0.0, vmax = 0.0;

  double ghost(const std::vector<double>& f, int i, int par) const {
    return i >= 0 ? f[i] : par * f[-1 - i];
  }
  // first derivative: central inside, parity ghosts at a dS center, one-sided
  // second-order at outflow ends
  double d1(const std::vector<double>& f, int i, int par) const {
    if (i >= 1 && i <= n - 2) return (f[i + 1] - f[i - 1]) / (2.0 * h);
    if (i == 0 && center) return (f[1] - par * f[0]) / (2.0 * h);
    if (i == 0) return (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    return (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
  }
  // Radial pair of the regularized center-grid system, written as the wide flux
  //   rad_i = (G_{i+1} - G_{i-1}) / (2h w_i),  G = w C chi,  w = (r/rref)^(2l+2),
  // consistent with w^-1 d_r(w C chi) = C d_r chi + (Cp + 2(l+1)C/r) chi.  G is
  // odd across r = 0, so against the chi_t = D pi rows the central difference
  // telescopes exactly in the w-inner product: the radial block is skew and the
  // O(1/h) energy leak of the pointwise form at the first cells (unstable for
  // l >= 1, and worse with l) is structurally gone.
  double radG(const std::vector<double>& f, int i) const {
    auto G = [&](int j) -> double {
      if (j >= 0) return wgt[j] * C[j] * f[j];
      return -wgt[-1 - j] * C[-1 - j] * f[-1 - j];
    };
    return (G(i + 1) - G(i - 1)) / (2.0 * h * wgt[i]);
  }
  // Kreiss-Oliger only where the full 5-point stencil fits (parity ghosts close
  // it at the center); the outer two cells get none -- low-order end rows act as
  // an O(1) boundary forcing that wrecks design order, and the semi-discrete
  // spectrum is already in the closed left half plane without them.
  double dissip(const std::vector<double>& f, int i, int par) const {
    if ((i <= 1 && !center) || i >= n - 2) return 0.0;
    double sc = ko * vmax / h;
    double fm2 = ghost(f, i - 2, par), fm1 = ghost(f, i - 1, par);
    return -(sc / 16.0) * (fm2 - 4.0 * fm1 + 6.0 * f[i] - 4.0 * f[i + 1] + f[i + 2]);
  }
};

}  // namespace detail

inline ExteriorField exterior_evolve(const Chart& ch, const ExteriorConfig& cfg) {
  if (cfg.n < 16) throw EvolveError("exterior_evolve: grid too small");
  if (!(cfg.cfl > 0.0 && cfg.cfl <= 1.0)) throw EvolveError("exterior_evolve: cfl out of (0,1]");
  const HorizonData& hd = ch.hd;
  if (!hd.has(3)) throw DomainError("exterior_evolve: needs a cosmological horizon");
  bool ds = hd.params.family == Family::dS;
  double dexc = cfg.dexc > 0.0 ? cfg.dexc : 1.5 * ch.delta;
  double dout = cfg.dout > 0.0 ? cfg.dout : 1.5 * ch.delta;

  detail::ExtWork w;
  w.n = cfg.n;
  w.ell = cfg.ell;
  w.center = ds;
  w.ko = cfg.ko_eps;
  double rhi = hd.at(3).r + dout;
  if (ds) {
    w.h = rhi / cfg.n;
    w.rlo = 0.5 * w.h;  // staggered: r_i = (i + 1/2) h, parity ghosts across r = 0
  } else {
    if (!hd.has(2)) throw DomainError("exterior_evolve: needs an event horizon");
    w.rlo = hd.at(2).r - dexc;
    w.h = (rhi - w.rlo) / (cfg.n - 1);
  }

  // On a center grid the evolved variable is the regularized ut = u / r^l
  // (ut, pi even and chi odd for every l), which shifts the lower-order
  // coefficients and cancels the l(l+1)/r^2 singularity out of the potential.
  ModeOperator op = mode_reduce(ch, cfg.ell, cfg.mass2);
  double ell = cfg.ell, rref = 0.5 * rhi;
  double om_max = 0.0;
  for (int i = 0; i < w.n; ++i) {
    double r = w.rlo + i * w.h;
    auto cc = ch.eval(r);
    if (!(cc.A > 0.0))
      throw EvolveError("exterior_evolve: foliation not spacelike at r = " + std::to_string(r));
    double bb0 = cc.Bp + 2.0 * cc.B / r, cc0 = cc.Cp + 2.0 * cc.C / r;
    w.r.push_back(r);
    w.A.push_back(cc.A);
    w.B.push_back(cc.B);
    w.C.push_back(cc.C);
    w.bb.push_back(ds ? bb0 + 2.0 * cc.B * ell / r : bb0);
    w.cc.push_back(ds ? cc0 + 2.0 * cc.C * ell / r : cc0);
    w.pot.push_back(ds ? op.potential(r) + cc.C * ell * (ell - 1.0) / sq(r) + cc0 * ell / r
                       : op.potential(r));
    if (ds) w.wgt.push_back(std::pow(r / rref, 2.0 * ell + 2.0));
    w.vmax = std::max({w.vmax, std::abs((cc.B + 1.0) / cc.A), std::abs((cc.B - 1.0) / cc.A)});
    om_max = std::max(om_max, std::sqrt(std::max(0.0, w.pot.back() / cc.A)));
  }
  // pure outflow at the excision ends: both characteristic speeds leave
  if (!ds && !(w.B.front() <= -1.0 + 1e-12))
    throw EvolveError("exterior_evolve: inner end is not outflow (move it below r_2)");
  if (!(w.B.back() >= 1.0 - 1e-12))
    throw EvolveError("exterior_evolve: outer end is not outflow (move it beyond r_3)");

  double dt = cfg.cfl * w.h / w.vmax;
  if (om_max > 0.0) dt = std::min(dt, 2.0 / om_max);  // centrifugal wall at a dS center
  if (cfg.dt_override > 0.0) dt = cfg.dt_override;
  long steps = (long)std::ceil(cfg.t_end / dt - 1e-9);
  dt = cfg.t_end / steps;

  // initial data
  std::vector<double> u(w.n), pi(w.n), chi(w.n);
  double pc = cfg.pulse.center, pw = cfg.pulse.width;
  if (pc < 0.0) pc = w.rlo + 0.45 * (rhi - w.rlo);
  if (pw <= 0.0) pw = 0.06 * (rhi - w.rlo);
  auto pulse = [&](double r) {
    double g = cfg.pulse.amp * std::exp(-sq((r - pc) / pw));
    for (int k = 0; k < cfg.ell && ds; ++k) g *= r / pc;  // parity-consistent at r = 0
    return g;
  };
  std::vector<double> rho(w.n, 1.0);  // u_phys = rho * u_evolved on center grids
  if (ds && cfg.ell > 0)
    for (int i = 0; i < w.n; ++i) rho[i] = std::pow(w.r[i], (double)cfg.ell);
  for (int i = 0; i < w.n; ++i) {
    u[i] = (cfg.init_u ? cfg.init_u(w.r[i]) : pulse(w.r[i])) / rho[i];
    pi[i] = (cfg.init_pi ? cfg.init_pi(w.r[i]) : 0.0) / rho[i];
  }
  int pu = 1;  // regularized fields are even across r = 0; chi flips it
  for (int i = 0; i < w.n; ++i) chi[i] = w.d1(u, i, pu);

  ExteriorField F;
  F.r = w.r;
  F.ell = cfg.ell;
  F.mass2 = cfg.mass2;
  F.dt = dt;
  F.steps = steps;
  F.ds_center = ds;
  F.probe_r = cfg.probe_r;
  if (!ds) F.probe_r.push_back(hd.at(2).r - 0.5 * dexc);  // feeds the interior block
  for (double rp : F.probe_r)
    if (rp < w.r.front() || rp > w.r.back())
      throw DomainError("exterior_evolve: probe outside the grid");
  F.probe_u.resize(F.probe_r.size());
  F.probe_dt.resize(F.probe_r.size());
  F.probe_dr.resize(F.probe_r.size());

  auto record = [&](double t) {
    for (size_t q = 0; q < F.probe_r.size(); ++q) {
      double rp = F.probe_r[q];
      double uv = detail::interp_uniform(u, w.rlo, w.h, rp, 4);
      double pv = detail::interp_uniform(pi, w.rlo, w.h, rp, 4);
      double xv = detail::interp_uniform(chi, w.rlo, w.h, rp, 4);
      if (ds && cfg.ell > 0) {
        double rh = std::pow(rp, (double)cfg.ell);
        xv = rh * xv + cfg.ell * rh / rp * uv;
        uv *= rh;
        pv *= rh;
      }
      F.probe_u[q].push(t, uv);
      F.probe_dt[q].push(t, pv);
      F.probe_dr[q].push(t, xv);
    }
  };
  auto snap = [&](double t) {
    ExtSnapshot s{t, u, pi, chi};
    if (ds && cfg.ell > 0)
      for (int i = 0; i < w.n; ++i) {
        s.chi[i] = rho[i] * chi[i] + cfg.ell * rho[i] / w.r[i] * u[i];
        s.u[i] = rho[i] * u[i];
        s.pi[i] = rho[i] * pi[i];
      }
    F.snaps.push_back(std::move(s));
  };

  std::vector<double> du(w.n), dpi(w.n), dchi(w.n);
  auto rhs = [&](double t, const std::vector<double>& uu, const std::vector<double>& pp,
                 const std::vector<double>& xx) {
    for (int i = 0; i < w.n; ++i) {
      double Dp = w.d1(pp, i, pu);
      double s = cfg.source ? cfg.source(t, w.r[i]) / rho[i] : 0.0;
      du[i] = pp[i] + w.dissip(uu, i, pu);
      dchi[i] = Dp + w.dissip(xx, i, -pu);
      double rad = w.center && i < w.n - 1
                       ? w.radG(xx, i)
                       : w.C[i] * w.d1(xx, i, -pu) + w.cc[i] * xx[i];
      dpi[i] = (s - (2.0 * w.B[i] * Dp + w.bb[i] * pp[i] + rad + w.pot[i] * uu[i])) / w.A[i] +
               w.dissip(pp, i, pu);
    }
  };

  std::vector<double> u1(w.n), p1(w.n), x1(w.n), au(w.n), ap(w.n), ax(w.n);
  double scale0 = 1e-12;
  for (int i = 0; i < w.n; ++i)
    scale0 = std::max(scale0, std::abs(u[i]) + std::abs(pi[i]) + std::abs(chi[i]));
  double blow = 1e12 * scale0;
  bool scan = std::getenv("HL_SCAN") != nullptr;
  double scan_last = scale0;
  record(0.0);
  snap(0.0);
  for (long k = 0; k < steps; ++k) {
    double t = k * dt;
    // classic RK4
    rhs(t, u, pi, chi);
    for (int i = 0; i < w.n; ++i) {
      au[i] = du[i];
      ap[i] = dpi[i];
      ax[i] = dchi[i];
      u1[i] = u[i] + 0.5 * dt * du[i];
      p1[i] = pi[i] + 0.5 * dt * dpi[i];
      x1[i] = chi[i] + 0.5 * dt * dchi[i];
    }
    rhs(t + 0.5 * dt, u1, p1, x1);
    for (int i = 0; i < w.n; ++i) {
      au[i] += 2.0 * du[i];
      ap[i] += 2.0 * dpi[i];
      ax[i] += 2.0 * dchi[i];
      u1[i] = u[i] + 0.5 * dt * du[i];
      p1[i] = pi[i] + 0.5 * dt * dpi[i];
      x1[i] = chi[i] + 0.5 * dt * dchi[i];
    }
    rhs(t + 0.5 * dt, u1, p1, x1);
    for (int i = 0; i < w.n; ++i) {
      au[i] += 2.0 * du[i];
      ap[i] += 2.0 * dpi[i];
      ax[i] += 2.0 * dchi[i];
      u1[i] = u[i] + dt * du[i];
      p1[i] = pi[i] + dt * dpi[i];
      x1[i] = chi[i] + dt * dchi[i];
    }
    rhs(t + dt, u1, p1, x1);
    for (int i = 0; i < w.n; ++i) {
      u[i] += dt / 6.0 * (au[i] + du[i]);
      pi[i] += dt / 6.0 * (ap[i] + dpi[i]);
      chi[i] += dt / 6.0 * (ax[i] + dchi[i]);
    }
    double tn = (k + 1) * dt;
    record(tn);
    if (cfg.snap_stride > 0 && (k + 1) % cfg.snap_stride == 0 && k + 1 < steps) snap(tn);
    double mx = 0.0;
    int mi = 0;
    for (int i = 0; i < w.n; ++i) {
      double a = std::abs(pi[i]) + std::abs(chi[i]);
      if (a > mx || !(a == a)) { mx = a; mi = i; }
      if (!(a == a)) break;
    }
    if (!(mx < blow))
      throw EvolveError("exterior_evolve: field blew up at t = " + std::to_string(tn) +
                        " near r = " + std::to_string(w.r[mi]));
    if (scan && mx > 10.0 * scan_last) {
      std::fprintf(stderr, "[scan] t=%.6f max|pi|+|chi|=%.3e at i=%d r=%.6f\n", tn, mx, mi,
                   w.r[mi]);
      scan_last = mx;
    }
  }
  for (double x : u)
    if (!std::isfinite(x)) throw EvolveError("exterior_evolve: non-finite field at t_end");
  snap(cfg.t_end);
  return F;
}

// Interpolated point value on a snapshot; deriv: 0 = u, 1 = d_t u, 2 = d_r u;
// order: 2 (linear) or 4 (cubic).
inline double probe_exterior(const ExteriorField& F, const ExtSnapshot& s, double rp,
                             int deriv = 0, int order = 4) {
  if (rp < F.r.front() || rp > F.r.back()) throw DomainError("probe_exterior: out of domain");
  const std::vector<double>& f = deriv == 0 ? s.u : (deriv == 1 ? s.pi : s.chi);
  return detail::interp_uniform(f, F.r.front(), F.r[1] - F.r[0], rp, order);
}

// ------------------------------------------------------------ interior engine

// Closed-form tortoise coordinate: 1/mu = r^2/P(r) in partial fractions over
// the roots of the horizon quartic P (the negative root included), with
// residues r_i^2 / P'(r_i) = 1/mu'(r_i), plus r itself when the quartic
// degenerates to a quadratic (Lambda = 0).
struct Tortoise {
  Params p;
  std::vector<double> roots;  // all real roots of P (simple)
  std::vector<double> coef;   // r_i^2 / P'(r_i)
  double operator()(double r) const {
    double x = p.lam() > 0.0 ? 0.0 : r;
    for (size_t i = 0; i < roots.size(); ++i) x += coef[i] * std::log(std::abs(r - roots[i]));
    return x;
  }
};

inline Tortoise make_tortoise(const HorizonData& hd) {
  if (hd.params.family == Family::KdS) throw DomainError("make_tortoise: kds not supported");
  Tortoise ts;
  ts.p = hd.params;
  for (auto& h : hd.horizons) ts.roots.push_back(h.r);
  if (hd.params.lam() > 0.0) {
    if (!(hd.r_neg < 0.0)) throw DomainError("make_tortoise: missing negative root");
    ts.roots.push_back(hd.r_neg);
  }
  for (double ri : ts.roots) ts.coef.push_back(ri * ri / horizon_poly_d(ts.p, ri));
  return ts;
}

// Model event-horizon tail u(v) = u0 + A e^{-kappa v}.
inline std::function<double(double)> model_tail(double u0, double amp, double kappa) {
  return [=](double v) { return u0 + amp * std::exp(-kappa * v); };
}

// Monotone (Fritsch-Carlson) cubic through a sampled series; clamps outside the
// sample range.  Used to resample an exterior probe series onto the interior
// v-grid (an additive shift between t_* and v only rephases the tail).
inline std::function<double(double)> tail_from_series(const TimeSeries& s) {
  size_t n = s.size();
  if (n < 4) throw DomainError("tail_from_series: need at least 4 samples");
  auto t = s.t;
  auto y = s.y;
  std::vector<double> d(n - 1), m(n);
  for (size_t i = 0; i + 1 < n; ++i) {
    if (!(t[i + 1] > t[i])) throw DomainError("tail_from_series: t must increase");
    d[i] = (y[i + 1] - y[i]) / (t[i + 1] - t[i]);
  }
  m[0] = d[0];
  m[n - 1] = d[n - 2];
  for (size_t i = 1; i + 1 < n; ++i)
    m[i] = d[i - 1] * d[i] <= 0.0 ? 0.0 : 0.5 * (d[i - 1] + d[i]);
  for (size_t i = 0; i + 1 < n; ++i) {
    if (d[i] == 0.0) {
      m[i] = m[i + 1] = 0.0;
      continue;
    }
    double a = m[i] / d[i], b = m[i + 1] / d[i], s2 = a * a + b * b;
    if (s2 > 9.0) {
      double f = 3.0 / std::sqrt(s2);
      m[i] *= f;
      m[i + 1] *= f;
    }
  }
  return [t, y, m](double x) {
    if (x <= t.front()) return y.front();
    if (x >= t.back()) return y.back();
    size_t i = std::upper_bound(t.begin(), t.end(), x) - t.begin() - 1;
    double h = t[i + 1] - t[i], w = (x - t[i]) / h;
    double h00 = (1 + 2 * w) * sq(1 - w), h10 = w * sq(1 - w);
    double h01 = w * w * (3 - 2 * w), h11 = w * w * (w - 1);
    return h00 * y[i] + h * h10 * m[i] + h01 * y[i + 1] + h * h11 * m[i + 1];
  };
}

struct InteriorConfig {
  int ell = 0;
  double mass2 = 0.0;
  double U = 100.0, V = 60.0;
  double h = 0.01;      // du = dv
  double eps0 = 0.01;   // (r_2 - r(0,0)) / (r_2 - r_1), corner offset inside H+
  double tail_u0 = 0.0, tail_amp = 1.0;   // default model data on the u = 0 segment
  std::function<double(double)> data_v;   // w(v) on u = 0, overrides the model tail
  std::function<double(double)> data_u;   // w(u) on v = 0; default: constant corner value
  std::vector<double> ray_u;              // const-u output rays; default {U}
  int stride = 0;                         // stored-field stride (0: auto, <= ~1024/axis)
  std::function<double(double, double, double)> source;  // S(u, v, r), MMS
};

struct NullRay {
  double u = 0.0;
  TimeSeries w;        // field value vs v
  TimeSeries dv_w;     // tangential derivative d_v w
  TimeSeries logdV_w;  // log|d_V w| = log|d_v w| + kappa_1 v
};

struct InteriorField {
  double U = 0.0, V = 0.0, h = 0.0;
  int ell = 0;
  double mass2 = 0.0;
  double kappa1 = 0.0, kappa2 = 0.0;
  double r00 = 0.0;
  double sup_w = 0.0;
  bool overflowed = false;
  std::vector<double> su, sv;          // stored grid lines
  std::vector<std::vector<double>> w;  // w[iu][jv] on (su, sv)
  std::vector<double> diag_r;          // r on the diagonal d = (i + j): r*(r) = x0 + d h/2
  std::vector<NullRay> rays;
};

inline InteriorField interior_evolve(const HorizonData& hd, const InteriorConfig& cfg) {
  if (!hd.has(1) || !hd.has(2)) throw DomainError("interior_evolve: needs horizons r_1 < r_2");
  if (!(cfg.h > 0.0) || !(cfg.U > cfg.h) || !(cfg.V > cfg.h))
    throw EvolveError("interior_evolve: empty block");
  double r1 = hd.at(1).r, r2 = hd.at(2).r;
  double r00 = r2 - cfg.eps0 * (r2 - r1);
  if (!(r00 > r1 && r00 < r2)) throw EvolveError("interior_evolve: corner outside the block");

  Tortoise ts = make_tortoise(hd);
  const Params& pa = hd.params;
  double x0 = ts(r00);
  long N = std::lround(cfg.U / cfg.h), M = std::lround(cfg.V / cfg.h);
  double h = cfg.h;

  InteriorField F;
  F.U = N * h;
  F.V = M * h;
  F.h = h;
  F.ell = cfg.ell;
  F.mass2 = cfg.mass2;
  F.kappa1 = hd.at(1).kappa;
  F.kappa2 = hd.at(2).kappa;
  F.r00 = r00;

  // r and the potential per diagonal; r saturates at r_1 once the tortoise
  // target exceeds the representable range (the Cauchy-horizon limit)
  double rlo = std::nextafter(r1, r2);
  F.diag_r.resize(N + M + 1);
  std::vector<double> Vd(N + M + 1);
  for (long d = 0; d <= N + M; ++d) {
    double target = x0 + 0.5 * d * h;
    double r = ts(rlo) <= target ? rlo
                                 : bisect([&](double r) { return ts(r) - target; }, rlo, r00);
    F.diag_r[d] = r;
    double m = mu(pa, r);
    Vd[d] = m * (cfg.ell * (cfg.ell + 1) / (r * r) + dmu(pa, r) / r + cfg.mass2);
  }

  auto dv = cfg.data_v ? cfg.data_v : model_tail(cfg.tail_u0, cfg.tail_amp, F.kappa2);
  double corner = dv(0.0);
  auto du = cfg.data_u ? cfg.data_u : [corner](double) { return corner; };

  std::vector<double> ray_u = cfg.ray_u.empty() ? std::vector<double>{F.U} : cfg.ray_u;
  std::vector<long> ray_i;
  for (double uu : ray_u) {
    long i = std::lround(uu / h);
    if (i < 0 || i > N) throw DomainError("interior_evolve: ray outside the block");
    ray_i.push_back(i);
    F.rays.push_back({i * h, {}, {}, {}});
  }
  long stride = cfg.stride > 0 ? cfg.stride : std::max<long>(1, std::max(N, M) / 1024);
  for (long i = 0; i <= N; i += stride) F.su.push_back(i * h);
  for (long j = 0; j <= M; j += stride) F.sv.push_back(j * h);
  F.w.assign(F.su.size(), std::vector<double>(F.sv.size(), 0.0));

  std::vector<double> prev(N + 1), cur(N + 1);
  double f8 = h * h / 8.0, f4 = h * h / 4.0;
  long Meff = M;
  for (long i = 0; i <= N; ++i) prev[i] = F.diag_r[i] * du(i * h);
  auto store = [&](long j, const std::vector<double>& col) {
    for (long q = 0; q < (long)F.rays.size(); ++q) {
      double r = F.diag_r[ray_i[q] + j];
      F.rays[q].w.push(j * h, col[ray_i[q]] / r);
    }
    if (j % stride == 0)
      for (size_t si = 0; si < F.su.size(); ++si) {
        long i = si * stride;
        F.w[si][j / stride] = col[i] / F.diag_r[i + j];
      }
    for (long i = 0; i <= N; i += std::max<long>(1, N / 64)) {
      double ww = std::abs(col[i] / F.diag_r[i + j]);
      if (ww > F.sup_w) F.sup_w = ww;
    }
  };
  store(0, prev);
  for (long j = 1; j <= M; ++j) {
    cur[0] = F.diag_r[j] * dv(j * h);
    if (cfg.source) {
      for (long i = 1; i <= N; ++i) {
        double vc = Vd[i + j - 1];
        double sc = cfg.source((i - 0.5) * h, (j - 0.5) * h, F.diag_r[i + j - 1]);
        cur[i] = cur[i - 1] + prev[i] - prev[i - 1] + f8 * vc * (cur[i - 1] + prev[i]) + f4 * sc;
      }
    } else {
      for (long i = 1; i <= N; ++i)
        cur[i] = cur[i - 1] + prev[i] - prev[i - 1] + f8 * Vd[i + j - 1] * (cur[i - 1] + prev[i]);
    }
    double peak = 0.0;
    for (long i = 0; i <= N; i += std::max<long>(1, N / 32)) peak = std::max(peak, std::abs(cur[i]));
    if (!std::isfinite(peak) || peak > 1e150) {  // flag and keep the run for diagnostics
      F.overflowed = true;
      Meff = j - 1;
      break;
    }
    store(j, cur);
    prev.swap(cur);
  }
  F.V = Meff * h;
  if ((long)F.sv.size() > Meff / stride + 1) F.sv.resize(Meff / stride + 1);
  for (auto& row : F.w)
    if ((long)row.size() > (long)F.sv.size()) row.resize(F.sv.size());

  // tangential derivative and log-compactified transversal derivative per ray
  for (auto& ray : F.rays) {
    size_t n = ray.w.size();
    for (size_t j = 1; j + 1 < n; ++j) {
      double d1 = (ray.w.y[j + 1] - ray.w.y[j - 1]) / (2.0 * h);
      ray.dv_w.push(ray.w.t[j], d1);
      ray.logdV_w.push(ray.w.t[j],
                       std::log(std::max(std::abs(d1), 1e-300)) + F.kappa1 * ray.w.t[j]);
    }
  }
  return F;
}

// Interpolated point value on the stored block; deriv: 0 = w, 1 = d_u w,
// 2 = d_v w, 3 = d_V w (compactified; use only where it does not overflow).
inline double probe_interior(const InteriorField& F, double up, double vp, int deriv = 0) {
  if (F.su.size() < 3 || F.sv.size() < 3) throw DomainError("probe_interior: block too small");
  double hu = F.su[1] - F.su[0], hv = F.sv[1] - F.sv[0];
  if (up < F.su.front() || up > F.su.back() || vp < F.sv.front() || vp > F.sv.back())
    throw DomainError("probe_interior: out of domain");
  long i = std::clamp<long>((long)std::floor((up - F.su.front()) / hu), 1, (long)F.su.size() - 3);
  long j = std::clamp<long>((long)std::floor((vp - F.sv.front()) / hv), 1, (long)F.sv.size() - 3);
  auto val = [&](long ii, long jj) { return F.w[ii][jj]; };
  // bilinear in (u, v), derivatives by centered differences of the stored grid
  double wu = (up - F.su[i]) / hu, wv = (vp - F.sv[j]) / hv;
  auto at = [&](long ii) { return (1.0 - wv) * val(ii, j) + wv * val(ii, j + 1); };
  auto dv_at = [&](long ii) {
    double a = (val(ii, j + 1) - val(ii, j - 1)) / (2.0 * hv);
    double b = (val(ii, std::min<long>(j + 2, F.sv.size() - 1)) - val(ii, j)) / (2.0 * hv);
    return (1.0 - wv) * a + wv * b;
  };
  if (deriv == 0) return (1.0 - wu) * at(i) + wu * at(i + 1);
  if (deriv == 1) {
    double a = (at(i + 1) - at(i - 1)) / (2.0 * hu);
    double b = (at(std::min<long>(i + 2, F.su.size() - 1)) - at(i)) / (2.0 * hu);
    return (1.0 - wu) * a + wu * b;
  }
  double d = (1.0 - wu) * dv_at(i) + wu * dv_at(i + 1);
  if (deriv == 2) return d;
  if (d == 0.0) return 0.0;
  return d * std::exp(F.kappa1 * vp);  // d_V = e^{kappa_1 v} d_v
}

}  // namespace horizonlab
