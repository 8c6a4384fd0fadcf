#pragma once
// Common types: parameter set, error taxonomy, small helpers.
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace horizonlab {

enum class Family { RNdS, KdS, RN, dS };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::RNdS: return "rnds";
    case Family::KdS: return "kds";
    case Family::RN: return "rn";
    case Family::dS: return "ds";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  if (s == "rnds") return Family::RNdS;
  if (s == "kds") return Family::KdS;
  if (s == "rn") return Family::RN;
  if (s == "ds") return Family::dS;
  throw std::invalid_argument("unknown family: " + s);
}

// Black-hole parameter set.  Lambda is the cosmological constant; lam() = Lambda/3
// is the combination entering the metric function.  Exactly one of charge/spin may
// be nonzero, matching the family.
struct Params {
  Family family = Family::RNdS;
  double Lambda = 0.0;  // cosmological constant
  double M = 1.0;       // mass
  double Q = 0.0;       // charge (RNdS/RN)
  double a = 0.0;       // angular momentum (KdS)

  double lam() const { return Lambda / 3.0; }
  double gam() const { return lam() * a * a; }  // KdS angular deformation

  void validate() const {
    if (!(M >= 0.0)) throw std::invalid_argument("params: M must be >= 0");
    if (!(Lambda >= 0.0)) throw std::invalid_argument("params: Lambda must be >= 0");
    if (!(Q >= 0.0)) throw std::invalid_argument("params: Q must be >= 0");
    if (!(a >= 0.0)) throw std::invalid_argument("params: a must be >= 0");
    switch (family) {
      case Family::RNdS:
        if (a != 0.0) throw std::invalid_argument("params: rnds requires spin = 0");
        if (!(Lambda > 0.0)) throw std::invalid_argument("params: rnds requires Lambda > 0");
        if (!(M > 0.0)) throw std::invalid_argument("params: rnds requires M > 0");
        break;
      case Family::KdS:
        if (Q != 0.0) throw std::invalid_argument("params: kds requires charge = 0");
        if (!(Lambda > 0.0) || !(M > 0.0)) throw std::invalid_argument("params: kds requires Lambda, M > 0");
        break;
      case Family::RN:
        if (Lambda != 0.0) throw std::invalid_argument("params: rn requires Lambda = 0");
        if (a != 0.0) throw std::invalid_argument("params: rn requires spin = 0");
        // Q = M (extremal) admitted: the photon sphere is regular there even
        // though the horizon pair degenerates
        if (!(Q > 0.0) || !(Q <= M)) throw std::invalid_argument("params: rn requires 0 < Q <= M");
        break;
      case Family::dS:
        if (M != 0.0 || Q != 0.0 || a != 0.0) throw std::invalid_argument("params: ds requires M = Q = a = 0");
        if (!(Lambda > 0.0)) throw std::invalid_argument("params: ds requires Lambda > 0");
        break;
    }
  }
};

// Error taxonomy.  Everything derives from Error so callers can map to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error { using Error::Error; };
struct DegenerateRoots : Error { using Error::Error; };
struct NoBracket : Error { using Error::Error; };
struct NoPhotonSphere : Error { using Error::Error; };
struct ExtensionError : Error { using Error::Error; };
struct ChartError : Error { using Error::Error; };
struct FlowError : Error { using Error::Error; };
struct EvolveError : Error { using Error::Error; };
struct IllConditioned : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

constexpr double pi_v = 3.14159265358979323846;

// Sampled scalar series y(t); the lingua franca between the evolution engines
// and the fitting routines.
struct TimeSeries {
  std::vector<double> t, y;
  size_t size() const { return t.size(); }
  void push(double ti, double yi) {
    t.push_back(ti);
    y.push_back(yi);
  }
};

inline double sq(double x) { return x * x; }
inline double cube(double x) { return x * x * x; }
inline double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

// Quintic smoothstep: 0 at s<=0, 1 at s>=1, first two derivatives vanish at ends.
inline double smooth01(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}
inline double smooth01_d(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return 30.0 * s * s * (1.0 + s * (-2.0 + s));
}
inline double smooth01_dd(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return 60.0 * s * (1.0 + s * (-3.0 + 2.0 * s));
}

}  // namespace horizonlab
