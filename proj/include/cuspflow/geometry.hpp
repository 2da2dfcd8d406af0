#pragma once

// Model cusp: the surface of revolution of y = x^r (r > 2) about the x-axis,
// parametrized by (x, tau) -> (x, x^r cos tau, x^r sin tau). The metric is
//
//   ds^2 = E(x) dx^2 + G(x) dtau^2,   E = 1 + r^2 x^(2r-2),   G = x^(2r).
//
// All quantities below are closed forms or one-dimensional quadratures of
// these coefficients.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "cuspflow/errors.hpp"
#include "cuspflow/quadrature.hpp"

namespace cuspflow {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct MetricCoefficients {
  double E;  // radial coefficient, dimensionless, >= 1
  double G;  // angular coefficient, length^2
};

class ProfileSurface {
 public:
  explicit ProfileSurface(double r, double x_max = 1.0, double quadrature_tol = 1e-13)
      : r_(r), x_max_(x_max), quadrature_tol_(quadrature_tol) {
    if (!(r > 2.0)) {
      std::ostringstream os;
      os << "profile exponent must satisfy r > 2 (got r = " << r << ")";
      throw ConfigError(os.str());
    }
    if (!(x_max > 0.0) || !std::isfinite(x_max)) {
      throw ConfigError("chart cutoff must satisfy x_max > 0");
    }
    if (!(quadrature_tol > 0.0 && quadrature_tol <= 1e-6)) {
      throw ConfigError("quadrature_tol must lie in (0, 1e-6]");
    }
    delta_max_ = integrate_sqrt_e(0.0, x_max_);
  }

  double r() const noexcept { return r_; }
  double x_max() const noexcept { return x_max_; }
  double quadrature_tol() const noexcept { return quadrature_tol_; }

  /// cusp_distance(x_max): the largest admissible level.
  double delta_max() const noexcept { return delta_max_; }

  /// Collar centre: half of the chart's depth.
  double delta0() const noexcept { return 0.5 * delta_max_; }
  /// Collar half-width.
  double collar_halfwidth() const noexcept { return 0.1 * delta0(); }
  /// Singular floor below which integration is abandoned.
  double x_floor() const noexcept { return 1e-9 * x_max_; }

  /// sqrt(E(u)) for u >= 0; no domain check (used inside quadratures).
  double sqrt_e(double u) const noexcept {
    const double p = std::pow(u, r_ - 1.0);
    return std::sqrt(1.0 + r_ * r_ * p * p);
  }

  /// Integral of sqrt(E) over [lo, hi], written as (hi - lo) plus the
  /// integral of sqrt(E) - 1 = q^2 / (sqrt(E) + 1), q = r u^(r-1), so the
  /// quadrature never sees the 1 + tiny cancellation near the tip.
  double integrate_sqrt_e(double lo, double hi) const {
    if (hi <= lo) return 0.0;
    auto excess = [this](double u) {
      const double q = r_ * std::pow(u, r_ - 1.0);
      const double q2 = q * q;
      return q2 / (std::sqrt(1.0 + q2) + 1.0);
    };
    const double qh = r_ * std::pow(hi, r_ - 1.0);
    if (qh * qh < 1e-18) {
      // Excess below rounding of the leading term; integrate q^2/2 exactly.
      const double e = 2.0 * r_ - 1.0;
      return (hi - lo) + 0.5 * r_ * r_ * (std::pow(hi, e) - std::pow(lo, e)) / e;
    }
    return (hi - lo) + quad::integrate(excess, lo, hi, quadrature_tol_);
  }

 private:
  double r_;
  double x_max_;
  double quadrature_tol_;
  double delta_max_ = 0.0;
};

/// A point of the unit tangent bundle in chart coordinates. The angle is
/// carried unwrapped; tau() wraps it into [0, 2 pi).
struct PhaseState {
  double x = 0.0;
  double tau_lift = 0.0;
  double x_dot = 0.0;
  double tau_dot = 0.0;

  double tau() const noexcept {
    double t = std::fmod(tau_lift, kTwoPi);
    return t < 0.0 ? t + kTwoPi : t;
  }
};

/// Time derivative of a PhaseState.
struct PhaseDerivative {
  double dx = 0.0;
  double dtau = 0.0;
  double ddx = 0.0;
  double ddtau = 0.0;
};

/// Radial/angular decomposition of a unit vector. `b` is reported with the
/// orientation convention b >= 0; `orientation` records the sign of tau_dot.
struct AngularData {
  double a = 0.0;
  double b = 0.0;
  double clairaut = 0.0;
  int orientation = 1;
};

namespace detail {

inline void require_in_chart(const ProfileSurface& s, double x, const char* what) {
  if (!(x > 0.0) || x > s.x_max()) {
    std::ostringstream os;
    os << what << ": x = " << x << " outside (0, x_max = " << s.x_max() << "]";
    throw DomainError(os.str());
  }
}

}  // namespace detail

inline MetricCoefficients metric_coefficients(const ProfileSurface& s, double x) {
  detail::require_in_chart(s, x, "metric_coefficients");
  const double r = s.r();
  const double p = std::pow(x, r);
  const double q = r * p / x;  // r x^(r-1)
  return {1.0 + q * q, p * p};
}

/// Riemannian distance from the cusp tip to the level x.
inline double cusp_distance(const ProfileSurface& s, double x) {
  if (!(x >= 0.0) || x > s.x_max()) {
    std::ostringstream os;
    os << "cusp_distance: x = " << x << " outside [0, " << s.x_max() << "]";
    throw DomainError(os.str());
  }
  if (x == s.x_max()) return s.delta_max();
  return s.integrate_sqrt_e(0.0, x);
}

/// Inverse of cusp_distance. delta is convex and increasing in x with
/// slope >= 1, so Newton started at x = min(delta, x_max) decreases
/// monotonically onto the root.
inline double inverse_cusp_distance(const ProfileSurface& s, double delta) {
  if (!(delta >= 0.0) || delta > s.delta_max() * (1.0 + 1e-15)) {
    std::ostringstream os;
    os << "inverse_cusp_distance: delta = " << delta << " outside [0, " << s.delta_max() << "]";
    throw DomainError(os.str());
  }
  if (delta == 0.0) return 0.0;
  double x = std::min(delta, s.x_max());
  double fx = cusp_distance(s, x) - delta;
  for (int it = 0; it < 100 && fx > 0.0; ++it) {
    const double step = fx / s.sqrt_e(x);
    const double next = x - step;
    if (!(next > 0.0)) break;
    // Incremental update keeps the residual consistent with the quadrature.
    const double f_next = fx - s.integrate_sqrt_e(next, x);
    x = next;
    fx = f_next;
    if (step <= 1e-16 * x) break;
  }
  return x;
}

/// Closed-form Gaussian curvature -rho''/(rho (1 + rho'^2)^2) with rho = x^r.
inline double gaussian_curvature(const ProfileSurface& s, double x) {
  detail::require_in_chart(s, x, "gaussian_curvature");
  const double r = s.r();
  const double q = r * std::pow(x, r - 1.0);
  const double w = 1.0 + q * q;
  return -r * (r - 1.0) / (x * x * w * w);
}

/// Length of the level circle at cusp distance B.
inline double level_length(const ProfileSurface& s, double B) {
  if (!(B > 0.0) || B > s.delta_max()) {
    throw DomainError("level_length: B outside (0, delta_max]");
  }
  return kTwoPi * std::pow(inverse_cusp_distance(s, B), s.r());
}

/// Area of the cusp neighbourhood {delta <= B}.
inline double cusp_volume(const ProfileSurface& s, double B) {
  if (!(B >= 0.0) || B > s.delta_max()) {
    throw DomainError("cusp_volume: B outside [0, delta_max]");
  }
  if (B == 0.0) return 0.0;
  const double xb = inverse_cusp_distance(s, B);
  const double r = s.r();
  auto f = [&](double u) { return std::pow(u, r) * s.sqrt_e(u); };
  return kTwoPi * quad::integrate(f, 0.0, xb, s.quadrature_tol());
}

/// Speed |v| of a chart state in the metric.
inline double speed(const ProfileSurface& s, const PhaseState& st) {
  const auto [E, G] = metric_coefficients(s, st.x);
  return std::sqrt(E * st.x_dot * st.x_dot + G * st.tau_dot * st.tau_dot);
}

inline AngularData angular_data(const ProfileSurface& s, const PhaseState& st) {
  const auto [E, G] = metric_coefficients(s, st.x);
  const double a_raw = std::sqrt(E) * st.x_dot;
  const double b_raw = std::sqrt(G) * st.tau_dot;
  const double v = std::hypot(a_raw, b_raw);
  if (std::abs(v - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "angular_data: state speed " << v << " deviates from 1 by more than 1e-6";
    throw DomainError(os.str());
  }
  AngularData out;
  out.a = a_raw / v;
  out.b = std::abs(b_raw) / v;
  out.orientation = st.tau_dot < 0.0 ? -1 : 1;
  out.clairaut = std::sqrt(G) * out.b;
  return out;
}

/// Unit-speed state at level x with prescribed angular components (a, b).
/// b may be signed; its sign sets the sense of rotation.
inline PhaseState make_state(const ProfileSurface& s, double x, double a, double b,
                             double tau_lift = 0.0) {
  const auto [E, G] = metric_coefficients(s, x);
  PhaseState st;
  st.x = x;
  st.tau_lift = tau_lift;
  st.x_dot = a / std::sqrt(E);
  st.tau_dot = b / std::sqrt(G);
  return st;
}

/// Euler-Lagrange equations of E dx^2 + G dtau^2:
///   x''   = -(E'/2E) x'^2 + (G'/2E) tau'^2
///   tau'' = -(G'/G) x' tau'
inline PhaseDerivative geodesic_rhs(const ProfileSurface& s, const PhaseState& st) {
  if (!(st.x > 0.0)) {
    throw DomainError("geodesic_rhs: metric is singular at x <= 0");
  }
  const double r = s.r();
  const double x = st.x;
  const double p = std::pow(x, r);
  const double q = r * p / x;                           // r x^(r-1)
  const double E = 1.0 + q * q;
  const double dE = 2.0 * (r - 1.0) * q * q / x;        // r^2 (2r-2) x^(2r-3)
  const double dG_over_G = 2.0 * r / x;
  const double dG = dG_over_G * p * p;
  PhaseDerivative d;
  d.dx = st.x_dot;
  d.dtau = st.tau_dot;
  d.ddx = (-dE * st.x_dot * st.x_dot + dG * st.tau_dot * st.tau_dot) / (2.0 * E);
  d.ddtau = -dG_over_G * st.x_dot * st.tau_dot;
  return d;
}

}  // namespace cuspflow
