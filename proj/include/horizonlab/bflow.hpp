#pragma once
// Hamilton flow of the dual metric function on the b-cotangent bundle:
// canonical and fiber-rescaled vector fields, radial-set and trapping
// linearizations, component classification, and the Kerr-de Sitter flow with
// its Carter constant.
//
// Conventions: a b-covector is written sigma dtau0/tau0 + xi dr (+ angular
// terms), i.e. p_t = -sigma, and the (t,r) dual block of a chart is
// [[A, B], [B, C]], so that
//   G = A sigma^2 - 2 B sigma xi + C xi^2 - r^-2 |eta|^2.
// The affine parameter is that of H_G (no extra normalization); rescaling the
// covector by lam reparameterizes the same null geodesic by s -> s/lam.

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <boost/numeric/odeint.hpp>

#include "charts.hpp"

namespace horizonlab {

// ------------------------------------------------------------------ charts

enum class FlowChartKind { Wave, EF };

struct FlowBlock {
  double A = 0, B = 0, C = 0, Ap = 0, Bp = 0, Cp = 0, mu = 0, dmu = 0;
};

// Coefficient provider for the (t,r) block. Wave: the global t_* chart from
// build_charts. EF: the per-horizon chart t_j with F_j' = s_j/mu_*, in which
// A = 0, B = s_j, C = -mu_* for all r (the coefficients are globally smooth;
// only the time function itself is singular at the other horizons).
// Coefficients are frozen outside [lo, hi]: integrations stop there, and the
// clamp only affects the discarded tail of the final partial step.
struct FlowChart {
  const Chart* ch = nullptr;
  FlowChartKind kind = FlowChartKind::Wave;
  int j = -1;  // EF horizon index (0 = artificial horizon)
  double lo = 0.0, hi = 0.0;

  static FlowChart wave(const Chart& c) { return {&c, FlowChartKind::Wave, -1, c.rlo, c.rhi}; }
  static FlowChart ef(const Chart& c, int jj) {
    c.root_of(jj);  // validate the index against the chart
    return {&c, FlowChartKind::EF, jj, c.rlo, c.rhi};
  }

  double sj() const { return ch->sign_of(j); }

  FlowBlock block(double r) const {
    double rc = std::clamp(r, lo, hi);
    if (kind == FlowChartKind::Wave) {
      auto cc = ch->eval(rc);
      return {cc.A, cc.B, cc.C, cc.Ap, cc.Bp, cc.Cp, cc.mu, cc.dmu};
    }
    double m = ch->mu_star(rc), dm = ch->dmu_star(rc), s = sj();
    return {0.0, s, -m, 0.0, 0.0, -dm, m, dm};
  }
};

// ------------------------------------------------------------------ points

struct BPhasePoint {
  double tau0 = 1.0, r = 0.0;
  double sigma = 0.0, xi = 0.0;
  double eta = 0.0;  // |eta| >= 0 (spherical symmetry: only the norm matters)
};

struct CompactifiedPoint {
  double tau0 = 1.0, r = 0.0;
  double rho_hat = 0.0;    // 1/|xi|; 0 = fiber infinity
  double sigma_hat = 0.0;  // sigma/|xi|
  double eta_hat = 0.0;    // |eta|/|xi|
  double eps = 1.0;        // sign of xi
};

inline double fiber_scale(const BPhasePoint& p) {
  return std::max({std::abs(p.sigma), std::abs(p.xi), std::abs(p.eta)});
}

inline CompactifiedPoint compactify(const BPhasePoint& p) {
  if (p.xi == 0.0) throw FlowError("compactify: xi = 0 is not in the rescaled chart");
  double ax = std::abs(p.xi);
  return {p.tau0, p.r, 1.0 / ax, p.sigma / ax, p.eta / ax, p.xi > 0.0 ? 1.0 : -1.0};
}

inline BPhasePoint decompactify(const CompactifiedPoint& q) {
  if (!(q.rho_hat > 0.0)) throw FlowError("decompactify: rho_hat must be > 0");
  double ax = 1.0 / q.rho_hat;
  return {q.tau0, q.r, q.sigma_hat * ax, q.eps * ax, q.eta_hat * ax};
}

// --------------------------------------------------------- dual metric, flow

inline double dual_metric(const FlowChart& fc, const BPhasePoint& p) {
  auto b = fc.block(p.r);
  return b.A * p.sigma * p.sigma - 2.0 * b.B * p.sigma * p.xi + b.C * p.xi * p.xi -
         p.eta * p.eta / (p.r * p.r);
}

// G/xi^2 on the rescaled fiber; conserved on the characteristic set
// (off-shell, d/ds~ Ghat = 2 eps W Ghat with W as in rescaled_rhs).
inline double dual_metric_hat(const FlowChart& fc, const CompactifiedPoint& q) {
  auto b = fc.block(q.r);
  return b.A * q.sigma_hat * q.sigma_hat - 2.0 * b.B * q.eps * q.sigma_hat + b.C -
         q.eta_hat * q.eta_hat / (q.r * q.r);
}

// d/ds (tau0, r, sigma, xi, eta) under H_G; sigma and |eta| are conserved.
inline std::array<double, 5> hamiltonian_rhs(const FlowChart& fc, const BPhasePoint& p) {
  auto b = fc.block(p.r);
  double r3 = p.r * p.r * p.r;
  return {p.tau0 * (2.0 * b.A * p.sigma - 2.0 * b.B * p.xi),
          -2.0 * b.B * p.sigma + 2.0 * b.C * p.xi, 0.0,
          -b.Ap * p.sigma * p.sigma + 2.0 * b.Bp * p.sigma * p.xi - b.Cp * p.xi * p.xi -
              2.0 * p.eta * p.eta / r3,
          0.0};
}

inline double hamilton_r(const FlowChart& fc, const BPhasePoint& p) {
  auto b = fc.block(p.r);
  return -2.0 * b.B * p.sigma + 2.0 * b.C * p.xi;
}

// H_G^2 r by the chain rule (sigma, eta constant along the flow).
inline double hamilton2_r(const FlowChart& fc, const BPhasePoint& p) {
  auto b = fc.block(p.r);
  auto d = hamiltonian_rhs(fc, p);
  return (-2.0 * b.Bp * p.sigma + 2.0 * b.Cp * p.xi) * d[1] + 2.0 * b.C * d[3];
}

// d/ds~ (tau0, r, rho_hat, sigma_hat, eta_hat) under Hhat = rho_hat H_G,
// smooth up to fiber infinity rho_hat = 0. At the radial set (r = r_j,
// sigma_hat = eta_hat = 0): tau0' = -2 s_j eps tau0, rho_hat' = -eps mu'
// rho_hat, and the (sigma_hat, eta_hat, r) linearization has eigenvalues
// {-eps mu', -eps mu', -2 eps mu'}.
inline std::array<double, 5> rescaled_rhs(const FlowChart& fc, const CompactifiedPoint& q) {
  auto b = fc.block(q.r);
  double r3 = q.r * q.r * q.r;
  double W = b.Ap * q.sigma_hat * q.sigma_hat - 2.0 * b.Bp * q.eps * q.sigma_hat + b.Cp +
             2.0 * q.eta_hat * q.eta_hat / r3;
  return {q.tau0 * (2.0 * b.A * q.sigma_hat - 2.0 * b.B * q.eps),
          -2.0 * b.B * q.sigma_hat + 2.0 * b.C * q.eps, q.eps * q.rho_hat * W,
          q.eps * q.sigma_hat * W, q.eps * q.eta_hat * W};
}

// -------------------------------------------------------------- seed points

// Radial null covector: eta = 0, xi = sigma (B + branch)/C (uses AC-B^2 = -1,
// so G = 0 identically and H_G r = 2 branch sigma exactly).
inline BPhasePoint radial_null_point(const FlowChart& fc, double r, double sigma, int branch) {
  auto b = fc.block(r);
  if (std::abs(b.C) < 1e-12) throw FlowError("radial_null_point: at a horizon (C = 0)");
  return {1.0, r, sigma, sigma * (b.B + branch) / b.C, 0.0};
}

// |eta| making (sigma, xi) null at r.
inline double onshell_eta(const FlowChart& fc, double r, double sigma, double xi) {
  auto b = fc.block(r);
  double q = b.A * sigma * sigma - 2.0 * b.B * sigma * xi + b.C * xi * xi;
  if (q < 0.0) throw FlowError("onshell_eta: (sigma, xi) admits no null covector here");
  return r * std::sqrt(q);
}

// Trapped-set datum: r = r_P, xi = 0, |eta| on-shell.
inline BPhasePoint trapped_point(const Chart& ch, double sigma) {
  if (!ch.hd.trapping) throw NoPhotonSphere("trapped_point: family has no trapped set");
  double rP = ch.hd.trapping->rP;
  auto cc = ch.eval(rP);
  return {1.0, rP, sigma, 0.0, rP * std::abs(sigma) * std::sqrt(cc.A)};
}

// --------------------------------------------------------------- conversion

// Fiber components of the same covector in another chart: sigma and eta are
// invariant, xi shifts by sigma (F'_from - F'_to). The shift between the wave
// chart and EF_j is s(r)(1/mu_* + c) - s_j/mu_*, regular at r_j (= s_j c).
namespace detail {
inline double ef_shift(const Chart& ch, int j, double r) {
  auto cc = ch.eval(r);
  double sj = ch.sign_of(j);
  if (cc.s == sj) return sj * cc.c;
  return cc.s * (1.0 / cc.mu + cc.c) - sj / cc.mu;
}
}  // namespace detail

inline BPhasePoint to_ef(const Chart& ch, int j, const BPhasePoint& p_wave) {
  BPhasePoint q = p_wave;
  q.xi = p_wave.xi + p_wave.sigma * detail::ef_shift(ch, j, p_wave.r);
  return q;
}
inline BPhasePoint to_wave(const Chart& ch, int j, const BPhasePoint& p_ef) {
  BPhasePoint q = p_ef;
  q.xi = p_ef.xi - p_ef.sigma * detail::ef_shift(ch, j, p_ef.r);
  return q;
}

// ----------------------------------------------------------- classification

// varpi in wave-chart components (sigma_w, xi_w): the partition-of-unity
// gluing of -dt_* <-> (+1, 0) on r <= r_1 + 2 delta, -dr <-> (0, -1) on the
// middle band, +dt_* <-> (-1, 0) on r >= r_2 - 2 delta, with smoothstep
// blends of width delta just inside the corridor (where -dr is timelike and
// the mixed terms stay positive, so varpi is future timelike throughout).
inline std::array<double, 2> varpi(const Chart& ch, double r) {
  if (!(ch.hd.has(1) && ch.hd.has(2))) return {-1.0, 0.0};  // SdS/dS: +dt_* throughout
  double d = ch.delta;
  double q1 = ch.root_of(1) + 2.0 * d, q2 = ch.root_of(2) - 2.0 * d;
  if (r <= q1) return {1.0, 0.0};
  if (r >= q2) return {-1.0, 0.0};
  if (r < q1 + d) {
    double b = smooth01((r - q1) / d);
    return {1.0 - b, -b};
  }
  if (r > q2 - d) {
    double b = smooth01((r - (q2 - d)) / d);
    return {-b, -(1.0 - b)};
  }
  return {0.0, -1.0};
}

// Sigma_+- membership of a characteristic covector: Sigma_+ = {-<zeta,
// varpi>_G > 0} -> +1, Sigma_- -> -1. Throws when the pairing is degenerate
// (zero covector, or a point of the radial set where both components meet).
inline int classify_component(const FlowChart& fc, const BPhasePoint& p) {
  auto cc = fc.ch->eval(p.r);
  double xw = p.xi;
  if (fc.kind == FlowChartKind::EF) xw -= p.sigma * detail::ef_shift(*fc.ch, fc.j, p.r);
  auto w = varpi(*fc.ch, p.r);
  double pair = cc.A * p.sigma * w[0] - cc.B * (p.sigma * w[1] + xw * w[0]) + cc.C * xw * w[1];
  double scale = (std::abs(cc.A) + std::abs(cc.B) + std::abs(cc.C) + 1.0) *
                 (std::abs(p.sigma) + std::abs(xw));
  if (!(std::abs(pair) > 1e-12 * scale))
    throw FlowError("classify_component: degenerate pairing with varpi");
  return pair < 0.0 ? +1 : -1;
}

// ------------------------------------------------------------- integration

enum class Endpoint { SpanEnded, RadialLimit, ExitedDomain, StepUnderflow };

struct TrajSample {
  double s = 0.0;
  BPhasePoint p;        // in the current fiber normalization
  double loglam = 0.0;  // cumulative log of renormalization factors
  double G = 0.0;
};

struct Trajectory {
  std::vector<TrajSample> samples;
  Endpoint endpoint = Endpoint::SpanEnded;
  int limit_j = -1;     // radial-set index when endpoint == RadialLimit
  double gdrift = 0.0;  // max |G - G0| / fiber^2, renormalization-adjusted
  double sdrift = 0.0;  // max |sigma - sigma0| / fiber
};

namespace detail {

enum class LoopEnd { Span, Event, Underflow };

// Drive a controlled RK45 stepper from s to s1. after_step may mutate the
// state (renormalization, sampling); returning true stops the loop. Cash-Karp
// keeps no FSAL cache, so mutating the state between steps is sound.
template <class Sys, class State, class Cb>
inline LoopEnd flow_loop(Sys&& sys, State& x, double& s, double s1, double atol, double rtol,
                         Cb&& after_step, long max_steps = 4000000) {
  namespace ode = boost::numeric::odeint;
  auto st = ode::make_controlled(atol, rtol, ode::runge_kutta_cash_karp54<State>());
  double dt = std::max((s1 - s) * 1e-6, 1e-12);
  for (long n = 0; n < max_steps && s < s1; ++n) {
    dt = std::min(dt, s1 - s);
    if (st.try_step(sys, x, s, dt) == ode::fail) {
      if (dt < 1e-14 * (std::abs(s) + 1.0)) return LoopEnd::Underflow;
      continue;
    }
    if (after_step(s, x)) return LoopEnd::Event;
  }
  return s >= s1 ? LoopEnd::Span : LoopEnd::Underflow;
}

}  // namespace detail

// Integrate H_G from p0 over [0, span]. No on-shell projection is applied;
// gdrift/sdrift report conservation quality. The fiber is renormalized by
// its own scale whenever that scale leaves [1e-6, 1e6] (degree-1 homogeneity
// of H_G; the affine parameter continues in the refreshed normalization).
// Endpoint: RadialLimit when rho0 = (sigma^2+eta^2)/xi^2 < 1e-8 with
// |r - r_j| < 1e-6 sustained over consecutive steps; ExitedDomain when r
// leaves [lo, hi]; StepUnderflow reports a partial trajectory.
inline Trajectory integrate(const FlowChart& fc, const BPhasePoint& p0, double span,
                            double tol = 1e-10) {
  using State = std::array<double, 5>;
  State x{p0.tau0, p0.r, p0.sigma, p0.xi, p0.eta};
  Trajectory tr;
  double loglam = 0.0;
  double g0 = dual_metric(fc, p0), sg0 = p0.sigma;

  std::vector<std::pair<int, double>> roots;
  for (int j = 0; j <= 3; ++j) {
    bool have = (j == 0) ? bool(fc.ch->ext) : fc.ch->hd.has(j);
    if (!have) continue;
    double rj = fc.ch->root_of(j);
    if (rj >= fc.lo && rj <= fc.hi) roots.emplace_back(j, rj);
  }

  auto mk = [&](double s, const State& y) {
    BPhasePoint q{y[0], y[1], y[2], y[3], y[4]};
    TrajSample smp{s, q, loglam, dual_metric(fc, q)};
    double fib = std::max(fiber_scale(q), 1e-300);
    tr.gdrift = std::max(tr.gdrift, std::abs(smp.G - g0 * std::exp(-2.0 * loglam)) / (fib * fib));
    tr.sdrift = std::max(tr.sdrift, std::abs(q.sigma - sg0 * std::exp(-loglam)) / fib);
    return smp;
  };
  tr.samples.push_back(mk(0.0, x));

  auto sys = [&](const State& y, State& dy, double) {
    dy = hamiltonian_rhs(fc, BPhasePoint{y[0], y[1], y[2], y[3], y[4]});
  };

  int run = 0, run_j = -1;
  auto lcheck = [&](const State& y) {
    if (y[3] == 0.0) return -1;
    double rho0 = (y[2] * y[2] + y[4] * y[4]) / (y[3] * y[3]);
    if (!(rho0 < 1e-8)) return -1;
    for (auto& [j, rj] : roots)
      if (std::abs(y[1] - rj) < 1e-6) return j;
    return -1;
  };
  auto after = [&](double s, State& y) {
    double lam = std::max({std::abs(y[2]), std::abs(y[3]), std::abs(y[4])});
    if (lam > 0.0 && (lam > 1e6 || lam < 1e-6)) {
      y[2] /= lam;
      y[3] /= lam;
      y[4] /= lam;
      loglam += std::log(lam);
    }
    tr.samples.push_back(mk(s, y));
    int jh = lcheck(y);
    if (jh >= 0 && jh == run_j) {
      ++run;
    } else {
      run = jh >= 0 ? 1 : 0;
      run_j = jh;
    }
    if (run >= 5) {
      tr.endpoint = Endpoint::RadialLimit;
      tr.limit_j = run_j;
      return true;
    }
    if (y[1] < fc.lo || y[1] > fc.hi) {
      tr.endpoint = Endpoint::ExitedDomain;
      return true;
    }
    return false;
  };

  double s = 0.0;
  auto end = detail::flow_loop(sys, x, s, span, tol, tol, after);
  if (end == detail::LoopEnd::Underflow) {
    int jh = lcheck(x);
    if (jh >= 0) {
      tr.endpoint = Endpoint::RadialLimit;
      tr.limit_j = jh;
    } else {
      tr.endpoint = Endpoint::StepUnderflow;
    }
  }
  return tr;
}

struct RescaledSample {
  double s = 0.0;
  CompactifiedPoint q;
  double ghat = 0.0;
};

struct RescaledTrajectory {
  std::vector<RescaledSample> samples;
  Endpoint endpoint = Endpoint::SpanEnded;
};

// Integrate the rescaled field Hhat = rho_hat H_G over [0, span] (its own
// parameter s~); covers fiber infinity, so radial-set approaches take
// infinite s~ instead of blowing up xi. Error control is relative-only: the
// fiber components decay through hundreds of e-foldings near a radial set,
// and an absolute floor would leave them parasitically unstable once the
// step size is set by the growing tau0.
inline RescaledTrajectory integrate_rescaled(const FlowChart& fc, const CompactifiedPoint& q0,
                                             double span, double tol = 1e-10) {
  using State = std::array<double, 5>;
  State x{q0.tau0, q0.r, q0.rho_hat, q0.sigma_hat, q0.eta_hat};
  RescaledTrajectory tr;
  auto mk = [&](double s, const State& y) {
    CompactifiedPoint q{y[0], y[1], y[2], y[3], y[4], q0.eps};
    return RescaledSample{s, q, dual_metric_hat(fc, q)};
  };
  tr.samples.push_back(mk(0.0, x));
  auto sys = [&](const State& y, State& dy, double) {
    dy = rescaled_rhs(fc, CompactifiedPoint{y[0], y[1], y[2], y[3], y[4], q0.eps});
  };
  auto after = [&](double s, State& y) {
    tr.samples.push_back(mk(s, y));
    if (y[1] < fc.lo || y[1] > fc.hi) {
      tr.endpoint = Endpoint::ExitedDomain;
      return true;
    }
    return false;
  };
  double s = 0.0;
  if (detail::flow_loop(sys, x, s, span, 1e-300, tol, after) == detail::LoopEnd::Underflow)
    tr.endpoint = Endpoint::StepUnderflow;
  return tr;
}

// ------------------------------------------------------------ linearization

// Eigenvalues of the FD Jacobian of the rescaled field restricted to
// (sigma_hat, eta_hat, r) at the radial-set boundary over r_j, on the xi
// branch eps; sorted by absolute value: {-eps mu', -eps mu', -2 eps mu'}.
inline std::array<double, 3> linearize_radial(const Chart& ch, int j, double eps) {
  FlowChart fc = FlowChart::ef(ch, j);
  double rj = ch.root_of(j);
  auto f = [&](const Eigen::Vector3d& v) {
    auto d = rescaled_rhs(fc, CompactifiedPoint{0.0, v[2], 0.0, v[0], v[1], eps});
    return Eigen::Vector3d(d[3], d[4], d[1]);
  };
  Eigen::Matrix3d J;
  Eigen::Vector3d x0(0.0, 0.0, rj);
  for (int k = 0; k < 3; ++k) {
    double h = 1e-5 * (k == 2 ? 1.0 + std::abs(rj) : 1.0);
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e[k] = h;
    J.col(k) = (f(x0 + e) - f(x0 - e)) / (2.0 * h);
  }
  Eigen::EigenSolver<Eigen::Matrix3d> es(J);
  std::array<double, 3> ev{};
  for (int k = 0; k < 3; ++k) {
    auto lam = es.eigenvalues()[k];
    if (std::abs(lam.imag()) > 1e-7 * (1.0 + std::abs(lam.real())))
      throw FlowError("linearize_radial: complex eigenvalues");
    ev[k] = lam.real();
  }
  std::sort(ev.begin(), ev.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  return ev;
}

// Measured asymptotic e-folding rates along a rescaled trajectory contracting
// into the radial set over r_j: log tau0 grows at +2 and log rho_hat decays
// at -|mu'|, so beta = -rate(tau0)/rate(rho_hat); rho0 decays at 2|mu'|.
struct RadialRates {
  double rate_tau0 = 0.0, rate_rho = 0.0, rate_rho0 = 0.0, beta = 0.0;
};

inline RadialRates measure_radial_rates(const Chart& ch, int j, double span = 0.0) {
  double rj = ch.root_of(j), dm = ch.dmu_star(rj);
  double eps = dm > 0.0 ? 1.0 : -1.0;  // contracting branch: -eps mu' < 0
  if (span <= 0.0) span = std::min(10.0, 500.0 / std::abs(dm));
  double off = std::min(1e-4, 0.2 * ch.delta);
  CompactifiedPoint q0{1.0, rj + off, 1e-3, 1e-3, 1e-3, eps};
  auto rt = integrate_rescaled(FlowChart::ef(ch, j), q0, span, 1e-10);
  // linear fits of the logs over a mid-trajectory window (transients dead,
  // values still far from underflow)
  auto fit = [&](auto&& val) {
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto& smp : rt.samples) {
      if (smp.s < 0.3 * span || smp.s > 0.6 * span) continue;
      double y = std::log(val(smp.q));
      sw += 1;
      sx += smp.s;
      sy += y;
      sxx += smp.s * smp.s;
      sxy += smp.s * y;
    }
    if (sw < 8) throw FlowError("measure_radial_rates: too few samples in fit window");
    return (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
  };
  RadialRates out;
  out.rate_tau0 = fit([](const CompactifiedPoint& q) { return q.tau0; });
  out.rate_rho = fit([](const CompactifiedPoint& q) { return q.rho_hat; });
  // rho0 = sigma_hat^2 + eta_hat^2 would underflow squared; fit the norm
  out.rate_rho0 =
      2.0 * fit([](const CompactifiedPoint& q) { return std::hypot(q.sigma_hat, q.eta_hat); });
  out.beta = -out.rate_tau0 / out.rate_rho;
  return out;
}

// Measured normal expansion rate of the trapped set: positive eigenvalue of
// the FD Jacobian of the (r, xi) block at (r_P, xi = 0, sigma = 1, |eta|
// on-shell); equals nu_min.
inline double linearize_trapping(const Chart& ch) {
  if (!ch.hd.trapping) throw NoPhotonSphere("linearize_trapping: family has no trapped set");
  double rP = ch.hd.trapping->rP;
  FlowChart fc = FlowChart::wave(ch);
  double eta = rP * std::sqrt(ch.eval(rP).A);
  auto f = [&](double r, double xi) {
    auto d = hamiltonian_rhs(fc, BPhasePoint{1.0, r, 1.0, xi, eta});
    return Eigen::Vector2d(d[1], d[3]);
  };
  double hr = 1e-6 * rP, hx = 1e-6;
  Eigen::Matrix2d J;
  J.col(0) = (f(rP + hr, 0.0) - f(rP - hr, 0.0)) / (2.0 * hr);
  J.col(1) = (f(rP, hx) - f(rP, -hx)) / (2.0 * hx);
  Eigen::EigenSolver<Eigen::Matrix2d> es(J);
  return std::max(es.eigenvalues()[0].real(), es.eigenvalues()[1].real());
}

// -------------------------------------------------------------------- KdS

// Kerr-de Sitter flow of K = rho^2 G in a per-horizon EF chart; the
// b-covector is sigma dtau0/tau0 + xi dr + eta dtheta + zeta dphi. Near the
// poles (sin^2 theta < 0.01) the angular pair switches to the regularized
// chart (y, z) = (sin th cos ph, sin th sin ph) with conjugate momenta
// (lam, nu); zeta = y nu - z lam there.
struct KdSFlow {
  const HorizonData* hd = nullptr;
  int j = 2;
  double sj = 0.0;
  double lo = 0.0, hi = 0.0;

  static KdSFlow ef(const HorizonData& h, int jj) {
    if (h.params.family != Family::KdS) throw FlowError("KdSFlow: Kerr-de Sitter only");
    return {&h, jj, h.at(jj).sign, 0.2 * h.at(1).r, 1.5 * h.at(3).r};
  }
};

struct KdSPoint {
  double tau0 = 1.0, r = 0.0;
  double sigma = 0.0, xi = 0.0, zeta = 0.0;
  bool pole = false;
  double theta = 0.5 * pi_v, phi = 0.0, eta = 0.0;  // spherical angular chart
  double y = 0.0, z = 0.0, lam = 0.0, nu = 0.0;     // pole chart
  double hemi = 1.0;                                // sign of cos(theta) near the pole
};

inline double kds_zeta(const KdSPoint& p) { return p.pole ? p.y * p.nu - p.z * p.lam : p.zeta; }

// Carter constant p_C = -(angular part of rho^2 G); both charts, the pole
// form is regular through sin theta = 0.
inline double carter(const Params& pa, const KdSPoint& p) {
  double a = pa.a, g = pa.gam(), E = 1.0 + g;
  if (!p.pole) {
    double S = sq(std::sin(p.theta)), kap = 1.0 + g * (1.0 - S);
    double D = a * S * p.sigma - p.zeta;
    return E * E * D * D / (kap * S) + kap * p.eta * p.eta;
  }
  double S = p.y * p.y + p.z * p.z, kap = 1.0 + g * (1.0 - S);
  double W = p.lam * p.y + p.nu * p.z, zet = p.y * p.nu - p.z * p.lam;
  double X = a * a * S * p.sigma * p.sigma - 2.0 * a * p.sigma * zet + p.lam * p.lam +
             p.nu * p.nu - W * W;
  double T = 2.0 + 2.0 * g - g * S;
  return (E * E * X - g * T * (1.0 - S) * W * W) / kap;
}

// K = rho^2 G = -mut xi^2 + 2 E s_j xi (a zeta - (r^2+a^2) sigma) - p_C.
inline double kds_dual_metric(const KdSFlow& f, const KdSPoint& p) {
  const Params& pa = f.hd->params;
  double a = pa.a, E = 1.0 + pa.gam();
  double zet = kds_zeta(p);
  return -mu(pa, p.r) * p.xi * p.xi +
         2.0 * E * f.sj * p.xi * (a * zet - (p.r * p.r + a * a) * p.sigma) -
         carter(pa, p);
}

// d/ds of (tau0, r, xi, q1, q2, p1, p2): spherical (q1,q2,p1,p2) =
// (theta, phi, eta, -); pole (y, z, lam, nu). sigma and zeta are conserved.
inline std::array<double, 7> kds_rhs(const KdSFlow& f, const KdSPoint& p) {
  const Params& pa = f.hd->params;
  double a = pa.a, g = pa.gam(), E = 1.0 + g, sj = f.sj;
  double mut = mu(pa, p.r), dmut = dmu(pa, p.r);
  double r2a2 = p.r * p.r + a * a;
  std::array<double, 7> d{};
  if (!p.pole) {
    double sth = std::sin(p.theta), cth = std::cos(p.theta);
    double S = sth * sth, kap = 1.0 + g * (1.0 - S);
    double D = a * S * p.sigma - p.zeta;
    d[1] = -2.0 * mut * p.xi + 2.0 * E * sj * (a * p.zeta - r2a2 * p.sigma);
    d[2] = dmut * p.xi * p.xi + 4.0 * E * sj * p.r * p.xi * p.sigma;
    d[3] = -2.0 * kap * p.eta;
    d[4] = 2.0 * a * E * sj * p.xi + 2.0 * E * E * D / (kap * S);
    // eta' = dp_C/dtheta
    double dpC_dS =
        E * E * (2.0 * a * p.sigma * D * kap * S - D * D * (1.0 + g - 2.0 * g * S)) /
            (kap * kap * S * S) -
        g * p.eta * p.eta;
    d[5] = 2.0 * sth * cth * dpC_dS;
    d[0] = p.tau0 * (-2.0 * E * sj * r2a2 * p.xi - 2.0 * a * E * E * D / kap);
    return d;
  }
  double S = p.y * p.y + p.z * p.z, kap = 1.0 + g * (1.0 - S);
  double W = p.lam * p.y + p.nu * p.z, zet = p.y * p.nu - p.z * p.lam;
  double T = 2.0 + 2.0 * g - g * S;
  double X = a * a * S * p.sigma * p.sigma - 2.0 * a * p.sigma * zet + p.lam * p.lam +
             p.nu * p.nu - W * W;
  // K = K_r(zeta) + P with P = -p_C = (-E^2 X + g T (1-S) W^2)/kap
  double dK_dzeta = 2.0 * a * E * sj * p.xi + 2.0 * a * p.sigma * E * E / kap;
  double dP_dW = 2.0 * W * (g * T * (1.0 - S) + E * E) / kap;
  double dP_dS = (-E * E * a * a * p.sigma * p.sigma - g * W * W * (g * (1.0 - S) + T)) / kap +
                 (-E * E * X + g * T * (1.0 - S) * W * W) * g / (kap * kap);
  double dP_dpp = -E * E / kap;  // w.r.t. lam^2 + nu^2
  d[1] = -2.0 * mut * p.xi + 2.0 * E * sj * (a * zet - r2a2 * p.sigma);
  d[2] = dmut * p.xi * p.xi + 4.0 * E * sj * p.r * p.xi * p.sigma;
  d[3] = dK_dzeta * (-p.z) + dP_dW * p.y + dP_dpp * 2.0 * p.lam;   // y' = dK/dlam
  d[4] = dK_dzeta * (p.y) + dP_dW * p.z + dP_dpp * 2.0 * p.nu;     // z' = dK/dnu
  d[5] = -(dK_dzeta * p.nu + dP_dS * 2.0 * p.y + dP_dW * p.lam);   // lam' = -dK/dy
  d[6] = -(dK_dzeta * (-p.lam) + dP_dS * 2.0 * p.z + dP_dW * p.nu);  // nu' = -dK/dz
  d[0] = p.tau0 * (-2.0 * E * sj * r2a2 * p.xi - 2.0 * a * E * E * (a * S * p.sigma - zet) / kap);
  return d;
}

inline KdSPoint kds_to_pole(const KdSPoint& p) {
  if (p.pole) return p;
  double sth = std::sin(p.theta), cth = std::cos(p.theta);
  if (!(std::abs(cth) > 0.5) || !(sth > 0.0))
    throw FlowError("kds_to_pole: point is not near a pole");
  KdSPoint q = p;
  q.pole = true;
  double cph = std::cos(p.phi), sph = std::sin(p.phi);
  q.y = sth * cph;
  q.z = sth * sph;
  q.lam = (p.eta / cth) * cph - (p.zeta / sth) * sph;
  q.nu = (p.eta / cth) * sph + (p.zeta / sth) * cph;
  q.hemi = cth > 0.0 ? 1.0 : -1.0;
  return q;
}

inline KdSPoint kds_from_pole(const KdSPoint& p) {
  if (!p.pole) return p;
  double S = p.y * p.y + p.z * p.z;
  if (!(S > 1e-12) || !(S < 1.0)) throw FlowError("kds_from_pole: degenerate angular position");
  double sth = std::sqrt(S), cth = p.hemi * std::sqrt(1.0 - S);
  KdSPoint q = p;
  q.pole = false;
  q.theta = std::atan2(sth, cth);
  q.phi = std::atan2(p.z, p.y);
  q.eta = cth * (p.lam * p.y + p.nu * p.z) / sth;
  q.zeta = p.y * p.nu - p.z * p.lam;
  return q;
}

// xi making the point null (K = 0) given its other components; branch picks
// the quadratic root.
inline double kds_onshell_xi(const KdSFlow& f, const KdSPoint& p, int branch) {
  const Params& pa = f.hd->params;
  double a = pa.a, E = 1.0 + pa.gam();
  double mut = mu(pa, p.r);
  double b = 2.0 * E * f.sj * (a * kds_zeta(p) - (p.r * p.r + a * a) * p.sigma);
  double pC = carter(pa, p);
  double disc = b * b - 4.0 * mut * pC;  // K = -mut xi^2 + b xi - pC
  if (disc < 0.0) throw FlowError("kds_onshell_xi: no null covector with these components");
  double rt = std::sqrt(disc);
  return (b + (branch >= 0 ? rt : -rt)) / (2.0 * mut);
}

struct KdSSample {
  double s = 0.0;
  KdSPoint p;
  double K = 0.0, pC = 0.0;
};

struct KdSTrajectory {
  std::vector<KdSSample> samples;
  Endpoint endpoint = Endpoint::SpanEnded;
  double kdrift = 0.0, pcdrift = 0.0, zdrift = 0.0;  // fiber-normalized
  int pole_switches = 0;
};

namespace detail {

inline std::array<double, 7> kds_pack(const KdSPoint& p) {
  if (!p.pole) return {p.tau0, p.r, p.xi, p.theta, p.phi, p.eta, 0.0};
  return {p.tau0, p.r, p.xi, p.y, p.z, p.lam, p.nu};
}

inline KdSPoint kds_unpack(const std::array<double, 7>& x, const KdSPoint& proto) {
  KdSPoint q = proto;
  q.tau0 = x[0];
  q.r = x[1];
  q.xi = x[2];
  if (!proto.pole) {
    q.theta = x[3];
    q.phi = x[4];
    q.eta = x[5];
  } else {
    q.y = x[3];
    q.z = x[4];
    q.lam = x[5];
    q.nu = x[6];
  }
  return q;
}

inline double kds_sin2(const KdSPoint& p) {
  return p.pole ? p.y * p.y + p.z * p.z : sq(std::sin(p.theta));
}

}  // namespace detail

// Integrate the KdS flow with automatic pole-chart switching (enter at
// sin^2 theta < 0.01, leave at > 0.04).
inline KdSTrajectory kds_integrate(const KdSFlow& f, const KdSPoint& p0, double span,
                                   double tol = 1e-10) {
  using State = std::array<double, 7>;
  KdSTrajectory tr;
  const Params& pa = f.hd->params;
  double k0 = kds_dual_metric(f, p0), pc0 = carter(pa, p0), z0 = kds_zeta(p0);
  auto push = [&](double s, const KdSPoint& q) {
    double K = kds_dual_metric(f, q), pc = carter(pa, q);
    tr.samples.push_back({s, q, K, pc});
    double fib = std::max({std::abs(q.sigma), std::abs(q.xi), std::abs(kds_zeta(q)),
                           q.pole ? std::hypot(q.lam, q.nu) : std::abs(q.eta), 1e-300});
    tr.kdrift = std::max(tr.kdrift, std::abs(K - k0) / (fib * fib));
    tr.pcdrift = std::max(tr.pcdrift, std::abs(pc - pc0) / (fib * fib));
    tr.zdrift = std::max(tr.zdrift, std::abs(kds_zeta(q) - z0) / fib);
  };

  KdSPoint cur = p0;
  double s = 0.0;
  push(s, cur);
  while (s < span) {
    State x = detail::kds_pack(cur);
    const KdSPoint proto = cur;
    bool want_switch = false;
    auto sys = [&](const State& y, State& dy, double) {
      dy = kds_rhs(f, detail::kds_unpack(y, proto));
    };
    auto after = [&](double sv, State& y) {
      KdSPoint q = detail::kds_unpack(y, proto);
      push(sv, q);
      if (q.r < f.lo || q.r > f.hi) {
        tr.endpoint = Endpoint::ExitedDomain;
        return true;
      }
      double S = detail::kds_sin2(q);
      if ((!proto.pole && S < 0.01) || (proto.pole && S > 0.04)) {
        want_switch = true;
        return true;
      }
      return false;
    };
    auto end = detail::flow_loop(sys, x, s, span, tol, tol, after);
    cur = detail::kds_unpack(x, proto);
    if (end == detail::LoopEnd::Underflow) {
      tr.endpoint = Endpoint::StepUnderflow;
      return tr;
    }
    if (end == detail::LoopEnd::Span) break;
    if (tr.endpoint == Endpoint::ExitedDomain) return tr;
    if (want_switch) {
      cur = cur.pole ? kds_from_pole(cur) : kds_to_pole(cur);
      ++tr.pole_switches;
    }
  }
  return tr;
}

// Equatorial circular photon orbit: solves xi' = 0 (xi != 0 branch),
// r' = 0, K = 0 for (r, xi, zeta) at the given sigma. Two roots (pro- and
// retrograde) bracket r = 3M for small a; branch picks the lower (+1) or
// upper (-1) one.
inline KdSPoint kds_photon_orbit(const KdSFlow& f, double sigma, int branch = +1) {
  const Params& pa = f.hd->params;
  double a = pa.a, E = 1.0 + pa.gam(), sj = f.sj;
  if (!(a > 0.0)) throw FlowError("kds_photon_orbit: requires a > 0");
  auto xi_of = [&](double r) { return -4.0 * E * sj * r * sigma / dmu(pa, r); };
  auto zeta_of = [&](double r) {
    return (mu(pa, r) * xi_of(r) / (E * sj) + (r * r + a * a) * sigma) / a;
  };
  // on the constrained family K = (E sigma r / mut')^2 (16 mut - g^2/a^2) with
  // g = r mut' - 4 mut, so the orbits solve g = -+ 4 a sqrt(mut).  g falls through
  // zero near r = 3M; the branch = +1 orbit sits inside it.  Bisecting the
  // sign-separated equation stays well conditioned down to a -> 0.
  double sg = branch >= 0 ? 1.0 : -1.0;
  auto g = [&](double r) {
    return r * dmu(pa, r) - 4.0 * mu(pa, r) - sg * 4.0 * a * std::sqrt(mu(pa, r));
  };
  double rs = bisect(g, 2.2 * pa.M, 4.5 * pa.M);
  KdSPoint p;
  p.r = rs;
  p.sigma = sigma;
  p.xi = xi_of(rs);
  p.zeta = zeta_of(rs);
  p.theta = 0.5 * pi_v;
  p.eta = 0.0;
  return p;
}

}  // namespace horizonlab
