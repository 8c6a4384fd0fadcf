#pragma once
// 1-d root location: bracket scans, bisection, guarded Newton polish.
#include <functional>
#include <limits>

#include "core.hpp"

namespace horizonlab {

using Fn1 = std::function<double(double)>;

// Bisect a sign change in [a,b] down to relative width tol.
inline double bisect(const Fn1& f, double a, double b, double tol = 1e-15, int maxit = 200) {
  double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (fa * fb > 0.0) throw NoBracket("bisect: no sign change in bracket");
  for (int i = 0; i < maxit; ++i) {
    double m = 0.5 * (a + b);
    double fm = f(m);
    if (fm == 0.0 || (b - a) < tol * (std::abs(m) + 1.0)) return m;
    if (fa * fm < 0.0) {
      b = m;
    } else {
      a = m;
      fa = fm;
    }
  }
  return 0.5 * (a + b);
}

// Newton refinement constrained to [lo,hi]; falls back to the seed on trouble.
inline double newton_polish(const Fn1& f, const Fn1& df, double x0, double lo, double hi, int maxit = 40) {
  double x = x0;
  for (int i = 0; i < maxit; ++i) {
    double fx = f(x), dfx = df(x);
    if (dfx == 0.0) break;
    double xn = x - fx / dfx;
    if (!(xn > lo) || !(xn < hi)) break;
    if (std::abs(xn - x) < 1e-16 * (std::abs(x) + 1.0)) return xn;
    x = xn;
  }
  return x;
}

// Scan [lo,hi] on n panels (geometric when log_spaced), return sign-change brackets.
inline std::vector<std::pair<double, double>> bracket_scan(const Fn1& f, double lo, double hi, int n,
                                                           bool log_spaced = false) {
  std::vector<std::pair<double, double>> out;
  double xp = lo, fp = f(lo);
  double ratio = log_spaced ? std::pow(hi / lo, 1.0 / n) : 0.0;
  for (int i = 1; i <= n; ++i) {
    double x = log_spaced ? lo * std::pow(ratio, i) : lo + (hi - lo) * i / n;
    if (i == n) x = hi;
    double fx = f(x);
    if (fp == 0.0) out.emplace_back(xp, xp);
    else if (fp * fx < 0.0) out.emplace_back(xp, x);
    xp = x;
    fp = fx;
  }
  return out;
}

}  // namespace horizonlab
