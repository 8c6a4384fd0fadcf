#pragma once
// Tail analysis: exponential-decay and power-law fits on probe series, plus
// the threshold-exponent bookkeeping that turns horizon data and a measured
// spectral gap into regularity statements at the inner horizon.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"
#include "spacetime.hpp"

namespace horizonlab {

enum class FitMethod { automatic, loglinear, prony };

// Shared record for decay fits (u0, alpha, omega) and power-law fits (exponent).
struct FitResult {
  double u0 = 0.0;            // fitted constant term
  double alpha = 0.0;         // decay rate of the slowest significant mode
  double omega = 0.0;         // its oscillation frequency (0 for pure decay)
  double exponent = 0.0;      // power-law index (fit_power only)
  double rate_err = 0.0;      // 1-sigma regression estimate on alpha / exponent
  double residual = 0.0;      // rms misfit in the native variable over the window
  double residual_log = 0.0;  // rms regression misfit in log space
  double w_lo = 0.0;          // window actually used (t for decay, |V| for power)
  double w_hi = 0.0;
  int n_used = 0;  // samples entering the regression
  int modes = 0;   // model order (1 = single exponential)
  std::string method;
};

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  size_t n = v.size(), m = n / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  double hi = v[m];
  if (n % 2) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + m);
  return 0.5 * (lo + hi);
}

struct LinReg {
  double a = 0.0, b = 0.0;  // y ~ a + b x
  double rms = 0.0, se_b = 0.0;
};

inline LinReg linreg(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double xm = 0.0, ym = 0.0;
  for (size_t i = 0; i < n; ++i) {
    xm += x[i];
    ym += y[i];
  }
  xm /= n;
  ym /= n;
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxx += sq(x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) throw IllConditioned("linreg: degenerate abscissa");
  LinReg r;
  r.b = sxy / sxx;
  r.a = ym - r.b * xm;
  double ssr = 0.0;
  for (size_t i = 0; i < n; ++i) ssr += sq(y[i] - r.a - r.b * x[i]);
  r.rms = std::sqrt(ssr / n);
  r.se_b = n > 2 ? std::sqrt(ssr / double(n - 2) / sxx) : 0.0;
  return r;
}

inline double cexp(double arg) { return std::exp(std::min(arg, 300.0)); }

// u(t) = u0 + sg*A*e^{b t} fitted by regression of log|u-u0| on t, with the
// constant refit jointly: each pass re-estimates u0 from the model residual
// mean, lightly damped.  The regression keeps only the contiguous run of
// samples around the signal maximum that clear a noise-aware cut; isolated
// late noise excursions otherwise re-enter with enormous slope leverage and
// trap the refit in a two-cycle.
struct LogLinSubset {
  std::vector<double> ts, ls;
  int sg = 1;
};

// noise floor from the settled tail: 1.4826 * MAD of the final tenth
inline double tail_noise(const std::vector<double>& y, double u0) {
  const int n = (int)y.size();
  std::vector<double> dev;
  for (int i = n - std::max(3, n / 10); i < n; ++i) dev.push_back(std::abs(y[i] - u0));
  return 1.4826 * median_inplace(dev);
}

inline LogLinSubset loglin_subset(const std::vector<double>& t, const std::vector<double>& y,
                                  double u0) {
  const int n = (int)y.size();
  double rng = 0.0;
  for (int i = 0; i < n; ++i) rng = std::max(rng, std::abs(y[i] - u0));
  double cut = std::max(0.02 * rng, 5.0 * tail_noise(y, u0));
  LogLinSubset s;
  int pos = 0, neg = 0;
  for (int i = 0; i < n; ++i) {
    double r = y[i] - u0;
    if (r > cut)
      ++pos;
    else if (r < -cut)
      ++neg;
  }
  s.sg = pos >= neg ? 1 : -1;
  int imax = 0;
  double rmax = -1.0;
  for (int i = 0; i < n; ++i)
    if (s.sg * (y[i] - u0) > rmax) {
      rmax = s.sg * (y[i] - u0);
      imax = i;
    }
  int ilo = imax, ihi = imax;
  while (ilo > 0 && s.sg * (y[ilo - 1] - u0) > cut) --ilo;
  while (ihi + 1 < n && s.sg * (y[ihi + 1] - u0) > cut) ++ihi;
  for (int i = ilo; i <= ihi; ++i) {
    s.ts.push_back(t[i]);
    s.ls.push_back(std::log(s.sg * (y[i] - u0)));
  }
  if ((int)s.ts.size() < 6)
    throw IllConditioned("fit_decay: too few samples above the noise floor");
  return s;
}

inline FitResult fit_loglinear(const std::vector<double>& t, const std::vector<double>& y,
                               double u0) {
  const int n = (int)y.size();
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(y[i]));
  for (int pass = 0; pass < 32; ++pass) {
    LogLinSubset s = loglin_subset(t, y, u0);
    LinReg lr = linreg(s.ts, s.ls);
    double A = cexp(lr.a);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += y[i] - s.sg * A * cexp(lr.b * t[i]);
    double step = acc / n - u0;
    u0 += 0.7 * step;
    if (std::abs(step) < 1e-13 * std::max(std::abs(u0), scale)) break;
  }
  // one consistent recompute at the converged constant
  LogLinSubset s = loglin_subset(t, y, u0);
  LinReg lr = linreg(s.ts, s.ls);
  double A = cexp(lr.a);
  int sg = s.sg;
  FitResult f;
  f.u0 = u0;
  f.alpha = -lr.b;
  f.rate_err = lr.se_b;
  f.residual_log = lr.rms;
  double ssr = 0.0;
  for (int i = 0; i < n; ++i) ssr += sq(y[i] - u0 - sg * A * cexp(lr.b * t[i]));
  f.residual = std::sqrt(ssr / n);
  f.n_used = (int)s.ts.size();
  f.modes = 1;
  f.method = "loglinear";
  return f;
}

// Prony on the first-differenced series (differencing annihilates the
// constant); model order by residual knee, capped at 4 -- probe-scale series
// cannot resolve more.  Amplitudes and the constant come from one final
// complex Vandermonde least-squares solve against the raw samples.
inline FitResult fit_prony(const std::vector<double>& t0, const std::vector<double>& y0) {
  const int n = (int)t0.size();
  const double dt = (t0.back() - t0.front()) / (n - 1);
  if (!(dt > 0.0)) throw IllConditioned("fit_decay: zero-length window");
  std::vector<double> y(y0);
  bool uniform = true;
  for (int i = 0; i + 1 < n; ++i)
    if (std::abs(t0[i + 1] - t0[i] - dt) > 1e-6 * dt) {
      uniform = false;
      break;
    }
  if (!uniform) {  // linear resample onto n uniform nodes
    int k = 0;
    for (int i = 0; i < n; ++i) {
      double tt = t0.front() + i * dt;
      while (k + 2 < n && t0[k + 1] < tt) ++k;
      double w = std::clamp((tt - t0[k]) / (t0[k + 1] - t0[k]), 0.0, 1.0);
      y[i] = (1.0 - w) * y0[k] + w * y0[k + 1];
    }
  }
  double dyn = *std::max_element(y.begin(), y.end()) - *std::min_element(y.begin(), y.end());
  if (!(dyn > 0.0)) throw IllConditioned("fit_decay: flat series");
  std::vector<double> d(n - 1);
  for (int i = 0; i + 1 < n; ++i) d[i] = y[i + 1] - y[i];

  const int pmax = std::min(4, (n - 1) / 8);
  if (pmax < 1) throw IllConditioned("fit_decay: window too short for Prony");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> res(pmax + 1, inf);
  std::vector<std::vector<std::complex<double>>> zs(pmax + 1);
  std::vector<Eigen::VectorXcd> cs(pmax + 1);
  for (int p = 1; p <= pmax; ++p) {
    const int m = (int)d.size() - p;
    Eigen::MatrixXd D(m, p);
    Eigen::VectorXd rhs(m);
    for (int k = 0; k < m; ++k) {
      rhs(k) = d[k + p];
      for (int j = 0; j < p; ++j) D(k, j) = d[k + p - 1 - j];
    }
    Eigen::VectorXd a = D.colPivHouseholderQr().solve(rhs);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(p, p);
    for (int j = 0; j < p; ++j) C(0, j) = a(j);
    for (int j = 1; j < p; ++j) C(j, j - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(C);
    if (es.info() != Eigen::Success) continue;
    Eigen::VectorXcd ev = es.eigenvalues();
    std::vector<std::complex<double>> z;
    for (int j = 0; j < p; ++j) {
      double az = std::abs(ev(j));
      if (!(az > 0.0) || !std::isfinite(az)) continue;
      // growth so steep it overflows the window is linear-prediction junk
      if ((n - 1) * std::log(std::max(az, 1.0)) > 27.0) continue;
      z.push_back(ev(j));
    }
    if (z.empty()) continue;
    const int nr = (int)z.size();
    Eigen::MatrixXcd V(n, nr + 1);
    Eigen::VectorXcd b(n);
    for (int i = 0; i < n; ++i) {
      V(i, 0) = 1.0;
      b(i) = y[i];
    }
    for (int j = 0; j < nr; ++j) {
      std::complex<double> acc = 1.0;
      for (int i = 0; i < n; ++i) {
        V(i, j + 1) = acc;
        acc *= z[j];
      }
    }
    Eigen::VectorXcd c = V.colPivHouseholderQr().solve(b);
    double ssr = 0.0;
    for (int i = 0; i < n; ++i) {
      std::complex<double> f = c(0);
      for (int j = 0; j < nr; ++j) f += c(j + 1) * V(i, j + 1);
      ssr += sq(y[i] - f.real());
    }
    res[p] = std::sqrt(ssr / n);
    zs[p] = std::move(z);
    cs[p] = std::move(c);
  }
  double rbest = inf;
  for (int p = 1; p <= pmax; ++p) rbest = std::min(rbest, res[p]);
  if (!std::isfinite(rbest)) throw IllConditioned("fit_decay: no stable Prony order");
  int psel = 1;
  const double knee = std::max(3.0 * rbest, 1e-10 * dyn);
  for (int p = 1; p <= pmax; ++p)
    if (res[p] <= knee) {
      psel = p;
      break;
    }
  const auto& z = zs[psel];
  const auto& c = cs[psel];
  double amax = 0.0;
  for (size_t j = 0; j < z.size(); ++j) amax = std::max(amax, std::abs(c(j + 1)));
  // report the slowest-decaying mode that carries real amplitude
  double alpha = inf, omega = 0.0;
  for (size_t j = 0; j < z.size(); ++j) {
    if (std::abs(c(j + 1)) < 1e-3 * amax) continue;
    std::complex<double> sj = std::log(z[j]) / dt;
    if (-sj.real() < alpha) {
      alpha = -sj.real();
      omega = std::abs(sj.imag());
    }
  }
  FitResult f;
  f.u0 = c(0).real();
  f.alpha = alpha;
  f.omega = omega;
  f.residual = res[psel];
  f.rate_err = res[psel] / (std::max(amax, 1e-300) * (t0.back() - t0.front()));
  f.n_used = n;
  f.modes = psel;
  f.method = "prony";
  return f;
}

}  // namespace detail

// Fit u(t) = u0 + A e^{-alpha t} (optionally multi-mode Prony) on the samples
// inside [t_lo, t_hi].  The constant is seeded by the median of the final
// tenth of the window, then refit jointly with the rate.
inline FitResult fit_decay(const TimeSeries& s,
                           double t_lo = -std::numeric_limits<double>::infinity(),
                           double t_hi = std::numeric_limits<double>::infinity(),
                           FitMethod method = FitMethod::automatic) {
  std::vector<double> t, y;
  for (size_t i = 0; i < s.size(); ++i)
    if (s.t[i] >= t_lo && s.t[i] <= t_hi) {
      t.push_back(s.t[i]);
      y.push_back(s.y[i]);
    }
  const int n = (int)t.size();
  if (n < 10) throw IllConditioned("fit_decay: fewer than 10 samples in window");

  double scale = 0.0;
  for (double v : y) scale = std::max(scale, std::abs(v));
  std::vector<double> tail(y.end() - std::max(3, n / 10), y.end());
  double u0 = detail::median_inplace(tail);
  double rng = 0.0;
  for (double v : y) rng = std::max(rng, std::abs(v - u0));
  if (!(rng > 1e3 * std::numeric_limits<double>::epsilon() * std::max(scale, 1e-300)))
    throw IllConditioned("fit_decay: flat series after constant subtraction");

  // oscillation diagnostic: sign changes clear of both the dynamic range floor
  // and the tail noise level (late-window noise must not masquerade as ringing)
  const double thr = std::max(0.05 * rng, 5.0 * detail::tail_noise(y, u0));
  int flips = 0, last = 0;
  for (int i = 0; i < n; ++i) {
    double r = y[i] - u0;
    if (std::abs(r) < thr) continue;
    int sg = r > 0 ? 1 : -1;
    if (last != 0 && sg != last) ++flips;
    last = sg;
  }
  const bool oscillatory = flips >= 4;
  FitMethod m = method == FitMethod::automatic
                    ? (oscillatory ? FitMethod::prony : FitMethod::loglinear)
                    : method;
  if (m == FitMethod::loglinear && oscillatory)
    throw IllConditioned("fit_decay: oscillation-dominated tail; use the Prony variant");
  FitResult f = m == FitMethod::prony ? detail::fit_prony(t, y) : detail::fit_loglinear(t, y, u0);
  f.w_lo = t.front();
  f.w_hi = t.back();
  return f;
}

// Fit |f| ~ C|V|^p by regression of log|f| on log|V| for samples with |V| in
// [v_lo, v_hi].  The series abscissa is V (advanced null coordinate through
// the inner horizon, V=0 there); it must approach 0 monotonically.
inline FitResult fit_power(const TimeSeries& s, double v_lo, double v_hi) {
  const int N = (int)s.size();
  if (N < 2) throw IllConditioned("fit_power: series too short");
  const bool dec = std::abs(s.t[N - 1]) < std::abs(s.t[0]);
  for (int i = 0; i + 1 < N; ++i) {
    double a = std::abs(s.t[i]), b = std::abs(s.t[i + 1]);
    if (dec ? !(b < a) : !(b > a)) throw IllConditioned("fit_power: V grid is not monotone");
  }
  std::vector<double> x, ly, av, af;
  for (int i = 0; i < N; ++i) {
    double v = std::abs(s.t[i]);
    if (v < v_lo || v > v_hi || v == 0.0) continue;
    double f = std::abs(s.y[i]);
    if (f == 0.0) continue;
    x.push_back(std::log(v));
    ly.push_back(std::log(f));
    av.push_back(v);
    af.push_back(f);
  }
  const int n = (int)x.size();
  if (n < 10) throw IllConditioned("fit_power: fewer than 10 usable samples in window");
  auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
  if (!(*xmax - *xmin > 1e-6)) throw IllConditioned("fit_power: degenerate window");
  detail::LinReg lr = detail::linreg(x, ly);
  FitResult f;
  f.exponent = lr.b;
  f.rate_err = lr.se_b;
  f.residual_log = lr.rms;
  double ssr = 0.0;
  for (int i = 0; i < n; ++i) ssr += sq(af[i] - detail::cexp(lr.a + lr.b * x[i]));
  f.residual = std::sqrt(ssr / n);
  f.w_lo = *std::min_element(av.begin(), av.end());
  f.w_hi = *std::max_element(av.begin(), av.end());
  f.n_used = n;
  f.modes = 1;
  f.method = "power";
  return f;
}

// Threshold-exponent report: what a spectral gap alpha buys at the inner
// horizon.  s is the base b-Sobolev order 1/2 + alpha*beta_1; tensorial
// (k-form) components shift it down by the form degree.  The H^1 criterion
// and the blow-up index depend on surface gravities alone.
struct RegularityReport {
  double alpha = 0.0;
  int k = 0;
  double s = 0.0;           // 1/2 + alpha beta_1
  double k_shift = 0.0;     // s - k
  double blowup = 0.0;      // kappa_2/kappa_1 - 1, generic |du| power in r - r_1
  bool h1 = false;          // 2 kappa_2 > kappa_1: finite local energy at CH
  double conj_order = 0.0;  // 1/2 + min(kappa_2, kappa_3)/kappa_1
  bool conjecture = true;   // conj_order is the expected ceiling, not proved
  double kappa1 = 0.0, kappa2 = 0.0, kappa3 = 0.0, beta1 = 0.0;
};

inline RegularityReport regularity_predictors(const HorizonData& hd, double alpha, int k = 0) {
  RegularityReport r;
  r.alpha = alpha;
  r.k = k;
  r.kappa1 = hd.at(1).kappa;
  r.kappa2 = hd.at(2).kappa;
  r.kappa3 = hd.has(3) ? hd.at(3).kappa : 0.0;
  r.beta1 = hd.at(1).beta;
  r.s = 0.5 + alpha * r.beta1;
  r.k_shift = r.s - k;
  r.h1 = 2.0 * r.kappa2 > r.kappa1;
  r.blowup = r.kappa2 / r.kappa1 - 1.0;
  // without a cosmological horizon the min degenerates to kappa_2
  double kmin = hd.has(3) ? std::min(r.kappa2, r.kappa3) : r.kappa2;
  r.conj_order = 0.5 + kmin / r.kappa1;
  return r;
}

// Near-extremal design: the critical charge gap epsilon (Q = M(1-epsilon))
// below which 1/2 + gamma0*beta_1 > target_s at Lambda = 0.  The product
// diverges like 1/(16 sqrt(eps)) as eps -> 0, so the threshold always exists;
// bisection starts from the asymptotic seed.  lam_max is the Lambda window on
// which the chosen (M, Q) still instantiates a nondegenerate three-horizon
// spacetime, so the design survives turning on a small cosmological constant.
struct ExtremalDesign {
  double epsilon = 0.0;  // largest admissible charge gap (inequality holds at it)
  double Q = 0.0;
  double seed = 0.0;      // asymptotic starting guess for the bisection
  double s_max = 0.0;     // 1/2 + gamma0 beta_1 achieved at the returned epsilon
  double target_s = 0.0;
  double lam_max = 0.0;   // Lambda in (0, lam_max): three nondegenerate horizons
};

inline ExtremalDesign near_extremal_design(double target_s, double M, double tol = 1e-8) {
  if (!(target_s > 0.5)) throw DomainError("near_extremal_design: target_s must exceed 1/2");
  if (!(M > 0.0)) throw DomainError("near_extremal_design: M must be positive");
  auto product = [&](double eps) {
    Params p;
    p.family = Family::RN;
    p.Lambda = 0.0;
    p.M = M;
    p.Q = M * (1.0 - eps);
    HorizonData hd = find_horizons(p);
    return photon_sphere(p).gamma0 * hd.at(1).beta;
  };
  auto ok = [&](double eps) {
    if (!(eps > 0.0) || !(eps < 1.0)) return false;
    try {
      return 0.5 + product(eps) > target_s;
    } catch (const Error&) {
      return false;
    }
  };
  ExtremalDesign d;
  d.target_s = target_s;
  d.seed = std::min(sq(1.0 / (16.0 * (target_s - 0.5))), 0.25);
  double lo = d.seed, hi = d.seed;
  if (ok(lo)) {
    while (ok(hi) && hi < 0.999999) {
      lo = hi;
      hi = std::min(2.0 * hi, 0.999999);
    }
  } else {
    while (!ok(lo)) {
      hi = lo;
      lo *= 0.25;
      if (lo < 1e-28) throw IllConditioned("near_extremal_design: bracketing failed");
    }
  }
  if (ok(hi)) {
    lo = hi;  // whole admissible range satisfies the inequality
  } else {
    for (int it = 0; it < 200 && hi - lo > tol * lo; ++it) {
      double mid = 0.5 * (lo + hi);
      (ok(mid) ? lo : hi) = mid;
    }
  }
  d.epsilon = lo;
  d.Q = M * (1.0 - lo);
  d.s_max = 0.5 + product(lo);

  auto rnds_ok = [&](double L) {
    Params p;
    p.family = Family::RNdS;
    p.Lambda = L;
    p.M = M;
    p.Q = d.Q;
    try {
      HorizonData h = find_horizons(p);
      return h.has(1) && h.has(2) && h.has(3);
    } catch (const Error&) {
      return false;
    }
  };
  double llo = 0.0, lhi = 1.0 / (9.0 * M * M);
  while (rnds_ok(lhi) && lhi < 1e6 / (M * M)) {
    llo = lhi;
    lhi *= 2.0;
  }
  for (int it = 0; it < 200 && lhi - llo > 1e-10 * lhi; ++it) {
    double mid = 0.5 * (llo + lhi);
    (rnds_ok(mid) ? llo : lhi) = mid;
  }
  d.lam_max = llo;
  return d;
}

}  // namespace horizonlab
