#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string_view>
#include <vector>

#include "cuspflow/dop853.hpp"
#include "cuspflow/errors.hpp"
#include "cuspflow/geometry.hpp"

namespace cuspflow {

/// Packed integrator state: x, tau_lift, x_dot, tau_dot.
using GeodesicVec = Vec<4>;

inline GeodesicVec pack(const PhaseState& s) noexcept {
  return {s.x, s.tau_lift, s.x_dot, s.tau_dot};
}

inline PhaseState unpack(const GeodesicVec& y) noexcept {
  return {y[0], y[1], y[2], y[3]};
}

struct TrajectorySample {
  double t = 0.0;
  PhaseState state;
};

enum class TrajectoryStatus {
  completed,      // reached t_end
  stopped,        // terminated by an event
  floor_reached,  // x fell to the singular floor
  left_chart,     // x exceeded x_max
};

inline std::string_view to_string(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::completed: return "completed";
    case TrajectoryStatus::stopped: return "stopped";
    case TrajectoryStatus::floor_reached: return "floor_reached";
    case TrajectoryStatus::left_chart: return "left_chart";
  }
  return "unknown";
}

struct Trajectory {
  std::vector<TrajectorySample> samples;
  /// Dense output of every accepted step; segments.back() may extend past
  /// the final sample when the run was cut by an event.
  std::vector<DenseSegment<4>> segments;
  double clairaut_drift = 0.0;
  double speed_drift = 0.0;
  double tol = 0.0;
  TrajectoryStatus status = TrajectoryStatus::completed;
  long rhs_evaluations = 0;
  long rejected_steps = 0;

  double t_begin() const { return samples.front().t; }
  double t_end() const { return samples.back().t; }

  /// State at time t by dense output.
  PhaseState at(double t) const {
    if (segments.empty()) return samples.front().state;
    std::size_t lo = 0, hi = segments.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (segments[mid].t0 <= t) lo = mid; else hi = mid;
    }
    return unpack(segments[lo](t));
  }
};

struct IntegrateOptions {
  /// Overrides the surface's singular floor when positive.
  double x_floor = -1.0;
  /// Step cap as a fraction of the current x.
  double step_cap_fraction = 0.1;
  long max_steps = 5'000'000;
};

namespace detail {

/// Raw right-hand side; false when the stage lies outside x > 0.
inline bool geodesic_rhs_raw(double r, const GeodesicVec& y, GeodesicVec& f) noexcept {
  const double x = y[0];
  if (!(x > 0.0)) return false;
  const double p = std::pow(x, r);
  const double q = r * p / x;
  const double E = 1.0 + q * q;
  const double dE = 2.0 * (r - 1.0) * q * q / x;
  const double dG_over_G = 2.0 * r / x;
  const double dG = dG_over_G * p * p;
  f[0] = y[2];
  f[1] = y[3];
  f[2] = (-dE * y[2] * y[2] + dG * y[3] * y[3]) / (2.0 * E);
  f[3] = -dG_over_G * y[2] * y[3];
  return std::isfinite(f[2]) && std::isfinite(f[3]);
}

/// Clairaut quantity x^r b in signed form, i.e. G * tau_dot = x^(2r) tau_dot.
inline double clairaut_signed(double r, const PhaseState& s) noexcept {
  const double p = std::pow(s.x, r);
  return p * p * s.tau_dot;
}

inline double speed_unchecked(double r, const PhaseState& s) noexcept {
  const double p = std::pow(s.x, r);
  const double q = r * p / s.x;
  return std::sqrt((1.0 + q * q) * s.x_dot * s.x_dot + p * p * s.tau_dot * s.tau_dot);
}

inline void validate_start(const ProfileSurface& surface, const PhaseState& start, double tol) {
  if (!(tol >= 1e-13 && tol <= 1e-6)) {
    throw DomainError("integrate_geodesic: tol must lie in [1e-13, 1e-6]");
  }
  detail::require_in_chart(surface, start.x, "integrate_geodesic");
  const double v = speed(surface, start);
  if (std::abs(v - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "integrate_geodesic: start speed " << v << " is not unit";
    throw DomainError(os.str());
  }
}

}  // namespace detail

/// Sign of d(delta)/dt for a state: d(delta)/dt = sqrt(E) x_dot = a.
inline double delta_rate(const ProfileSurface& surface, const PhaseState& s) {
  return s.x_dot * surface.sqrt_e(s.x);
}

/// Integrates the geodesic from `start` until t_end or until `event`
/// reports a stopping time inside the latest step. `event` is called as
/// `std::optional<double> event(const DenseSegment<4>&, const GeodesicVec& y_old,
/// const GeodesicVec& y_new)`.
template <class Event>
Trajectory integrate_geodesic_until(const ProfileSurface& surface, const PhaseState& start,
                                    double t_end, double tol, Event&& event,
                                    IntegrateOptions opts = {}) {
  detail::validate_start(surface, start, tol);
  const double r = surface.r();
  const double x_floor = opts.x_floor > 0.0 ? opts.x_floor : surface.x_floor();

  Dop853Options dopt;
  dopt.rtol = tol;
  dopt.atol = tol * surface.x_floor();
  auto rhs = [r](double, const GeodesicVec& y, GeodesicVec& f) {
    return detail::geodesic_rhs_raw(r, y, f);
  };
  Dop853<4, decltype(rhs)> stepper(rhs, 0.0, pack(start), dopt);

  Trajectory traj;
  traj.tol = tol;
  traj.samples.push_back({0.0, start});
  const double c0 = detail::clairaut_signed(r, start);

  auto record = [&](double t, const PhaseState& s) {
    traj.samples.push_back({t, s});
    const double c = detail::clairaut_signed(r, s);
    const double dc = c0 != 0.0 ? std::abs(c - c0) / std::abs(c0) : std::abs(c);
    traj.clairaut_drift = std::max(traj.clairaut_drift, dc);
    traj.speed_drift = std::max(traj.speed_drift, std::abs(detail::speed_unchecked(r, s) - 1.0));
  };

  long steps = 0;
  while (stepper.t() < t_end) {
    if (++steps > opts.max_steps) {
      throw StepFailure("integrate_geodesic: step budget exhausted");
    }
    const GeodesicVec y_old = stepper.y();
    const double h_cap = opts.step_cap_fraction * y_old[0];
    auto seg = stepper.step(h_cap, t_end);
    if (!seg) {
      std::ostringstream os;
      os << "integrate_geodesic: step controller failed at t = " << stepper.t()
         << ", x = " << stepper.y()[0];
      throw StepFailure(os.str());
    }
    traj.segments.push_back(*seg);
    const GeodesicVec& y_new = stepper.y();
    if (auto t_stop = event(*seg, y_old, y_new)) {
      record(*t_stop, unpack((*seg)(*t_stop)));
      traj.status = TrajectoryStatus::stopped;
      break;
    }
    record(stepper.t(), unpack(y_new));
    if (y_new[0] <= x_floor) {
      traj.status = TrajectoryStatus::floor_reached;
      break;
    }
    if (y_new[0] > surface.x_max()) {
      traj.status = TrajectoryStatus::left_chart;
      break;
    }
  }
  traj.rhs_evaluations = stepper.evaluations();
  traj.rejected_steps = stepper.rejected();
  return traj;
}

inline Trajectory integrate_geodesic(const ProfileSurface& surface, const PhaseState& start,
                                     double t_end, double tol, IntegrateOptions opts = {}) {
  auto no_event = [](const DenseSegment<4>&, const GeodesicVec&,
                     const GeodesicVec&) -> std::optional<double> { return std::nullopt; };
  return integrate_geodesic_until(surface, start, t_end, tol, no_event, opts);
}

/// Largest ratio between the Clairaut quantity x^r b at any two samples,
/// i.e. the smallest M with M^-1 <= c(t)/c(s) <= M for every pair.
inline double clairaut_ratio_bound(const ProfileSurface& surface, const Trajectory& traj) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& smp : traj.samples) {
    const double v = detail::speed_unchecked(surface.r(), smp.state);
    const double c = std::abs(detail::clairaut_signed(surface.r(), smp.state)) / v;
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (!(lo > 0.0)) return hi > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return hi / lo;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV export: t,x,tau_lift,x_dot,tau_dot,a,b,clairaut,delta
inline void write_trajectory_csv(std::ostream& os, const ProfileSurface& surface,
                                 const Trajectory& traj) {
  os << "t,x,tau_lift,x_dot,tau_dot,a,b,clairaut,delta\n";
  for (const auto& [t, s] : traj.samples) {
    const AngularData ad = angular_data(surface, s);
    os << format_double(t) << ',' << format_double(s.x) << ',' << format_double(s.tau_lift) << ','
       << format_double(s.x_dot) << ',' << format_double(s.tau_dot) << ',' << format_double(ad.a)
       << ',' << format_double(ad.b) << ',' << format_double(ad.clairaut) << ','
       << format_double(cusp_distance(surface, std::min(s.x, surface.x_max()))) << '\n';
  }
}

}  // namespace cuspflow
