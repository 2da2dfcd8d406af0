#pragma once

// One cusp excursion: the maximal stretch of a geodesic below the entry
// level delta_entry. Two independent routes compute the same record:
//
//  * simulate_excursion integrates the geodesic equations with DOP853 and
//    locates closest approach and exit on the dense output;
//  * excursion_by_quadrature uses the Clairaut integral x^(2r) tau_dot = L
//    to reduce duration, winding and the 1/delta functional to
//    one-dimensional integrals.
//
// ExcursionTable interpolates the quadrature route in b for bulk use.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string_view>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <nlohmann/json.hpp>

#include "cuspflow/errors.hpp"
#include "cuspflow/geometry.hpp"
#include "cuspflow/quadrature.hpp"
#include "cuspflow/scaling.hpp"
#include "cuspflow/trajectory.hpp"

namespace cuspflow {

struct ExcursionFlags {
  bool singular = false;       // x fell to the singular floor
  bool degenerate = false;     // b_entry = 1: tangent to the entry level
  bool deep_shortcut = false;  // winding from the tail power law
  bool interpolated = false;   // value read from an ExcursionTable
};

struct ExcursionRecord {
  double r = 0.0;
  double b_entry = 0.0;
  double delta_entry = 0.0;
  double delta_min = 0.0;
  double D = 0.0;
  double duration = 0.0;
  double t_min = 0.0;
  double winding = 0.0;        // |delta tau_lift| / 2 pi
  double delta_tau_lift = 0.0; // signed
  double inv_delta_integral = 0.0;
  ExcursionFlags flags;
};

inline void to_json(nlohmann::json& j, const ExcursionRecord& e) {
  j = nlohmann::json{{"r", e.r},
                     {"b_entry", e.b_entry},
                     {"delta_entry", e.delta_entry},
                     {"delta_min", e.delta_min},
                     {"D", e.D},
                     {"duration", e.duration},
                     {"t_min", e.t_min},
                     {"winding", e.winding},
                     {"delta_tau_lift", e.delta_tau_lift},
                     {"inv_delta_integral", e.inv_delta_integral},
                     {"flags",
                      {{"singular", e.flags.singular},
                       {"degenerate", e.flags.degenerate},
                       {"deep_shortcut", e.flags.deep_shortcut},
                       {"interpolated", e.flags.interpolated}}}};
}

namespace detail {

// 8-point Gauss-Legendre on [-1, 1], non-negative half.
inline constexpr std::array<double, 4> kGl8Nodes = {
    0.183434642495649804939476142360184, 0.525532409916328985817739049189254,
    0.796666477413626739591553936475831, 0.960289856497536231683560868569473};
inline constexpr std::array<double, 4> kGl8Weights = {
    0.362683783378361982965150449277196, 0.313706645877887287337962201986601,
    0.222381034453374470544355994426241, 0.101228536290376259152531354309862};

/// Integral of f(state) dt over [t_a, t_b] on the dense output of `traj`.
template <class F>
double integrate_dense(const Trajectory& traj, double t_a, double t_b, F&& f) {
  double sum = 0.0;
  for (const auto& seg : traj.segments) {
    const double lo = std::max(seg.t0, t_a);
    const double hi = std::min(seg.t1(), t_b);
    if (!(hi > lo)) continue;
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      s += kGl8Weights[k] * (f(unpack(seg(c - h * kGl8Nodes[k]))) +
                             f(unpack(seg(c + h * kGl8Nodes[k]))));
    }
    sum += h * s;
  }
  return sum;
}

inline void validate_excursion_input(const ProfileSurface& s, double delta_entry, double b) {
  if (!(delta_entry > 0.0) || delta_entry > s.delta0() * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "excursion: delta_entry = " << delta_entry << " outside (0, delta0 = " << s.delta0()
       << "]";
    throw DomainError(os.str());
  }
  if (!(b > 0.0) || b > 1.0) {
    std::ostringstream os;
    os << "excursion: b_entry = " << b << " outside (0, 1]";
    throw DomainError(os.str());
  }
}

inline ExcursionRecord degenerate_record(const ProfileSurface& s, double delta_entry) {
  ExcursionRecord rec;
  rec.r = s.r();
  rec.b_entry = 1.0;
  rec.delta_entry = delta_entry;
  rec.delta_min = delta_entry;
  rec.D = 1.0 / delta_entry;
  rec.flags.degenerate = true;
  return rec;
}

}  // namespace detail

/// Exact closest approach: x_min = x_entry b^(1/r), returned as a distance.
inline double predict_delta_min(const ProfileSurface& s, double delta_entry, double b_entry) {
  detail::validate_excursion_input(s, delta_entry, b_entry);
  if (b_entry == 1.0) return delta_entry;
  const double xe = inverse_cusp_distance(s, delta_entry);
  return cusp_distance(s, xe * std::pow(b_entry, 1.0 / s.r()));
}

/// Entry angle whose excursion bottoms out at delta_min (inverse of
/// predict_delta_min).
inline double entry_angle_for_depth(const ProfileSurface& s, double delta_entry, double delta_min) {
  if (!(delta_min > 0.0) || delta_min > delta_entry) {
    throw DomainError("entry_angle_for_depth: delta_min outside (0, delta_entry]");
  }
  const double xe = inverse_cusp_distance(s, delta_entry);
  return std::pow(inverse_cusp_distance(s, delta_min) / xe, s.r());
}

struct ExcursionRun {
  ExcursionRecord record;
  Trajectory trajectory;
};

/// Integrates one excursion from the entry level inward with angular
/// component b_entry (orientation -1 flips the sense of rotation).
inline ExcursionRun simulate_excursion_run(const ProfileSurface& s, double delta_entry,
                                           double b_entry, double tol, int orientation = 1) {
  detail::validate_excursion_input(s, delta_entry, b_entry);
  if (b_entry == 1.0) {
    ExcursionRun run{detail::degenerate_record(s, delta_entry), {}};
    const double xe = inverse_cusp_distance(s, delta_entry);
    run.trajectory.samples.push_back({0.0, make_state(s, xe, 0.0, orientation < 0 ? -1.0 : 1.0)});
    run.trajectory.status = TrajectoryStatus::stopped;
    run.trajectory.tol = tol;
    return run;
  }
  const double xe = inverse_cusp_distance(s, delta_entry);
  const double sign = orientation < 0 ? -1.0 : 1.0;
  const PhaseState start = make_state(s, xe, -std::sqrt((1.0 - b_entry) * (1.0 + b_entry)),
                                      sign * b_entry);

  std::optional<double> t_min;
  auto event = [&](const DenseSegment<4>& seg, const GeodesicVec& y_old,
                   const GeodesicVec& y_new) -> std::optional<double> {
    double lo = seg.t0;
    if (!t_min && y_old[2] < 0.0 && y_new[2] >= 0.0) {
      double a = seg.t0, b = seg.t1();
      for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, b); ++it) {
        const double m = 0.5 * (a + b);
        (seg.component(m, 2) < 0.0 ? a : b) = m;
      }
      t_min = 0.5 * (a + b);
      lo = *t_min;
    }
    if (t_min && y_new[0] >= xe) {
      // Bisection on delta(x(t)) - delta_entry; x is increasing here.
      double a = lo, b = seg.t1();
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (a + b);
        const double xm = std::min(seg.component(m, 0), s.x_max());
        const double g = cusp_distance(s, std::max(xm, 0.0)) - delta_entry;
        if (std::abs(g) <= 1e-12 || b - a <= 1e-15 * std::max(1.0, b)) return m;
        (g < 0.0 ? a : b) = m;
      }
      return 0.5 * (a + b);
    }
    return std::nullopt;
  };

  ExcursionRun run;
  run.trajectory = integrate_geodesic_until(s, start, 4.0 * delta_entry, tol, event);
  const Trajectory& tr = run.trajectory;
  ExcursionRecord& rec = run.record;
  rec.r = s.r();
  rec.b_entry = b_entry;
  rec.delta_entry = delta_entry;

  if (tr.status == TrajectoryStatus::floor_reached) {
    rec.flags.singular = true;
    double xm = tr.samples.back().state.x;
    for (const auto& smp : tr.samples) xm = std::min(xm, smp.state.x);
    rec.delta_min = cusp_distance(s, std::max(xm, 0.0));
    rec.D = 1.0 / rec.delta_min;
    rec.duration = std::numeric_limits<double>::quiet_NaN();
    rec.t_min = std::numeric_limits<double>::quiet_NaN();
    rec.winding = std::numeric_limits<double>::quiet_NaN();
    rec.delta_tau_lift = std::numeric_limits<double>::quiet_NaN();
    rec.inv_delta_integral = std::numeric_limits<double>::quiet_NaN();
    return run;
  }
  if (tr.status != TrajectoryStatus::stopped || !t_min) {
    std::ostringstream os;
    os << "simulate_excursion: no return to delta_entry = " << delta_entry << " within "
       << 4.0 * delta_entry << " (b_entry = " << b_entry << ", status " << to_string(tr.status)
       << ")";
    throw NonReturnError(os.str());
  }
  rec.t_min = *t_min;
  rec.delta_min = cusp_distance(s, tr.at(*t_min).x);
  rec.D = 1.0 / rec.delta_min;
  rec.duration = tr.t_end();
  rec.delta_tau_lift = tr.samples.back().state.tau_lift - start.tau_lift;
  rec.winding = std::abs(rec.delta_tau_lift) / kTwoPi;
  rec.inv_delta_integral = detail::integrate_dense(tr, 0.0, rec.duration, [&](const PhaseState& p) {
    return 1.0 / cusp_distance(s, std::clamp(p.x, 0.0, s.x_max()));
  });
  return run;
}

inline ExcursionRecord simulate_excursion(const ProfileSurface& s, double delta_entry,
                                          double b_entry, double tol, int orientation = 1) {
  return simulate_excursion_run(s, delta_entry, b_entry, tol, orientation).record;
}

/// Same record from the Clairaut reduction. With x = x_min cosh(u)^(1/r),
///   dt = sqrt(E) (x_min / r) cosh(u)^(1/r) du,
///   dtau = x_min^(1-r) / r cosh(u)^(1/r - 2) sqrt(E) du,
/// for u in [0, acosh(1/b)], doubled by symmetry about closest approach.
inline ExcursionRecord excursion_by_quadrature(const ProfileSurface& s, double delta_entry,
                                               double b_entry, double rel_tol = 1e-12) {
  detail::validate_excursion_input(s, delta_entry, b_entry);
  if (b_entry == 1.0) return detail::degenerate_record(s, delta_entry);
  const double r = s.r();
  const double xe = inverse_cusp_distance(s, delta_entry);
  const double xm = xe * std::pow(b_entry, 1.0 / r);
  const double u_end = std::acosh(1.0 / b_entry);
  auto x_of = [&](double u) { return std::min(xm * std::pow(std::cosh(u), 1.0 / r), xe); };

  ExcursionRecord rec;
  rec.r = r;
  rec.b_entry = b_entry;
  rec.delta_entry = delta_entry;
  rec.delta_min = cusp_distance(s, xm);
  rec.D = 1.0 / rec.delta_min;
  rec.duration = 2.0 * quad::integrate(
                           [&](double u) {
                             return (xm / r) * std::pow(std::cosh(u), 1.0 / r) * s.sqrt_e(x_of(u));
                           },
                           0.0, u_end, rel_tol);
  rec.t_min = 0.5 * rec.duration;
  rec.delta_tau_lift =
      2.0 * quad::integrate(
                [&](double u) {
                  return std::pow(xm, 1.0 - r) / r * std::pow(std::cosh(u), 1.0 / r - 2.0) *
                         s.sqrt_e(x_of(u));
                },
                0.0, u_end, rel_tol);
  rec.winding = rec.delta_tau_lift / kTwoPi;
  rec.inv_delta_integral =
      2.0 * quad::integrate(
                [&](double u) {
                  const double x = x_of(u);
                  return (xm / r) * std::pow(std::cosh(u), 1.0 / r) * s.sqrt_e(x) /
                         cusp_distance(s, x);
                },
                0.0, u_end, rel_tol);
  return rec;
}

enum class Convexity { strict, violated, not_applicable };

inline std::string_view to_string(Convexity c) {
  switch (c) {
    case Convexity::strict: return "strict";
    case Convexity::violated: return "violated";
    case Convexity::not_applicable: return "not_applicable";
  }
  return "unknown";
}

/// Strict convexity of sampled values v(t): every interior second divided
/// difference must be positive.
inline bool strictly_convex_samples(std::span<const double> t, std::span<const double> v) {
  if (t.size() != v.size()) throw DomainError("strictly_convex_samples: mismatched sizes");
  if (t.size() < 5) throw InsufficientDataError("convexity check needs at least 5 samples");
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    const double left = (v[i] - v[i - 1]) / (t[i] - t[i - 1]);
    const double right = (v[i + 1] - v[i]) / (t[i + 1] - t[i]);
    if (!(right > left)) return false;
  }
  return true;
}

/// Convexity of t -> delta(t) along a trajectory. d(delta)/dt = a, so the
/// second differences are positive exactly when a increases from sample to
/// sample. The increments are formed as
///   a_{i+1} - a_i = +-(b_{i+1}^2 - b_i^2) / (|a_i| + |a_{i+1}|)
/// on each monotone leg, which stays resolved when b is tiny and delta''
/// (of order b^2) is far below the rounding of delta itself.
inline Convexity check_convexity(const ProfileSurface& s, const Trajectory& traj) {
  const auto& sm = traj.samples;
  if (sm.size() < 5) throw InsufficientDataError("check_convexity: need at least 5 samples");
  bool radial = true;
  for (const auto& p : sm) radial = radial && p.state.tau_dot == 0.0;
  if (radial) return Convexity::not_applicable;

  const double r = s.r();
  auto ab = [&](const PhaseState& p) {
    const double v = detail::speed_unchecked(r, p);
    const double b = std::abs(std::pow(p.x, r) * p.tau_dot) / v;
    const double ax = std::sqrt(std::max(0.0, (1.0 - b) * (1.0 + b)));
    return std::pair{p.x_dot < 0.0 ? -ax : ax, b};
  };
  auto [a_prev, b_prev] = ab(sm.front().state);
  for (std::size_t i = 1; i < sm.size(); ++i) {
    const auto [a, b] = ab(sm[i].state);
    double da;
    if (a_prev < 0.0 && a < 0.0) {
      da = (b - b_prev) * (b + b_prev) / (-a - a_prev);
    } else if (a_prev > 0.0 && a > 0.0) {
      da = (b_prev - b) * (b_prev + b) / (a + a_prev);
    } else {
      da = a - a_prev;
    }
    if (!(da > 0.0)) return Convexity::violated;
    a_prev = a;
    b_prev = b;
  }
  return Convexity::strict;
}

struct WindingIdentity {
  double lhs = 0.0;        // delta tau_lift from the integrated state
  double rhs = 0.0;        // integral of b / x^r dt (signed by orientation)
  double rhs_delta = 0.0;  // integral of b / delta^r dt
};

/// Delta tau_lift versus the quadrature of tau_dot = b / x^r over the
/// trajectory's dense output.
inline WindingIdentity winding_identity_check(const ProfileSurface& s, const Trajectory& traj) {
  WindingIdentity w;
  if (traj.samples.empty()) return w;
  const double r = s.r();
  const double t0 = traj.t_begin(), t1 = traj.t_end();
  w.lhs = traj.samples.back().state.tau_lift - traj.samples.front().state.tau_lift;
  auto b_signed = [&](const PhaseState& p) {
    return std::pow(p.x, r) * p.tau_dot / detail::speed_unchecked(r, p);
  };
  w.rhs = detail::integrate_dense(traj, t0, t1, [&](const PhaseState& p) {
    return b_signed(p) / std::pow(p.x, r);
  });
  w.rhs_delta = detail::integrate_dense(traj, t0, t1, [&](const PhaseState& p) {
    return b_signed(p) / std::pow(cusp_distance(s, std::clamp(p.x, 0.0, s.x_max())), r);
  });
  return w;
}

/// Linear fit of inv_delta_integral against log D.
inline ScalingFit inverse_delta_functional(std::span<const ExcursionRecord> records) {
  std::vector<double> u, v;
  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  for (const auto& e : records) {
    if (e.flags.singular || e.flags.degenerate || !std::isfinite(e.inv_delta_integral)) continue;
    u.push_back(std::log(e.D));
    v.push_back(e.inv_delta_integral);
    dmin = std::min(dmin, e.D);
    dmax = std::max(dmax, e.D);
  }
  if (u.size() < 3 || !(dmax >= 100.0 * dmin)) {
    throw InsufficientDataError("inverse_delta_functional: ensemble must span two decades of D");
  }
  return fit_linear(u, v);
}

/// Power-law fit of winding against D.
inline ScalingFit winding_exponent_fit(std::span<const ExcursionRecord> records) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& e : records) {
    if (e.flags.singular || e.flags.degenerate || !(e.winding > 0.0)) continue;
    pts.emplace_back(e.D, e.winding);
  }
  return fit_power_law(pts);
}

inline void write_excursion_csv(std::ostream& os, std::span<const ExcursionRecord> records) {
  os << "r,delta_entry,b_entry,delta_min,D,duration,winding,inv_delta_integral\n";
  for (const auto& e : records) {
    os << format_double(e.r) << ',' << format_double(e.delta_entry) << ','
       << format_double(e.b_entry) << ',' << format_double(e.delta_min) << ','
       << format_double(e.D) << ',' << format_double(e.duration) << ','
       << format_double(e.winding) << ',' << format_double(e.inv_delta_integral) << '\n';
  }
}

struct ExcursionTableOptions {
  double b_deep = 1e-6;     // below this the tail shortcut applies
  double b_split = 0.5;     // log b grid below, arccos b grid above
  int n_deep = 961;
  int n_shallow = 321;
  double phi_min = 1e-4;
  double rel_tol = 1e-12;
};

/// Cubic-spline table of excursion_by_quadrature in b at a fixed entry
/// level. For b < b_split the nodes are uniform in log b and the splines
/// carry log duration, log winding and inv_delta_integral. For b >= b_split
/// they are uniform in phi = arccos b and carry each quantity divided by phi,
/// which stays finite as b -> 1.
class ExcursionTable {
 public:
  ExcursionTable(const ProfileSurface& s, double delta_entry, ExcursionTableOptions opt = {})
      : surface_(s), delta_entry_(delta_entry), opt_(opt) {
    detail::validate_excursion_input(s, delta_entry, 0.5);
    if (!(opt.b_deep > 0.0 && opt.b_deep < opt.b_split && opt.b_split < 1.0) ||
        opt.n_deep < 8 || opt.n_shallow < 8 || !(opt.phi_min > 0.0)) {
      throw ConfigError("ExcursionTable: inconsistent options");
    }
    x_entry_ = inverse_cusp_distance(s, delta_entry);

    // Both grids run kPad nodes past the queried range: the spline's
    // boundary-derivative estimate is poor, and padding keeps it out of use.
    const double hu = (std::log(opt.b_split) - std::log(opt.b_deep)) / (opt.n_deep - 1);
    const double u0 = std::log(opt.b_deep) - kPad * hu;
    const int nd = opt.n_deep + 2 * kPad;
    std::vector<double> ld(nd), lw(nd), iv(nd);
    std::vector<std::pair<double, double>> tail;
    for (int i = 0; i < nd; ++i) {
      const double b = std::exp(u0 + i * hu);
      const auto e = excursion_by_quadrature(s, delta_entry, b, opt.rel_tol);
      ld[i] = std::log(e.duration);
      lw[i] = std::log(e.winding);
      iv[i] = e.inv_delta_integral;
      if (b >= opt.b_deep && b <= 10.0 * opt.b_deep) tail.emplace_back(b, e.winding);
    }
    tail_ = fit_power_law(tail);
    deep_[0] = Spline(ld.begin(), ld.end(), u0, hu);
    deep_[1] = Spline(lw.begin(), lw.end(), u0, hu);
    deep_[2] = Spline(iv.begin(), iv.end(), u0, hu);

    const double p0 = opt.phi_min, p1 = std::acos(opt.b_split);
    const double hp = (p1 - p0) / (opt.n_shallow - 1);
    const int ns = opt.n_shallow + kPad;
    std::vector<double> sd(ns), sw(ns), si(ns);
    for (int i = 0; i < ns; ++i) {
      const double phi = p0 + i * hp;
      const auto e = excursion_by_quadrature(s, delta_entry, std::cos(phi), opt.rel_tol);
      sd[i] = e.duration / phi;
      sw[i] = e.winding / phi;
      si[i] = e.inv_delta_integral / phi;
    }
    shallow_[0] = Spline(sd.begin(), sd.end(), p0, hp);
    shallow_[1] = Spline(sw.begin(), sw.end(), p0, hp);
    shallow_[2] = Spline(si.begin(), si.end(), p0, hp);
  }

  const ProfileSurface& surface() const noexcept { return surface_; }
  double delta_entry() const noexcept { return delta_entry_; }
  const ExcursionTableOptions& options() const noexcept { return opt_; }
  /// Power-law fit of winding against b on the decade above b_deep.
  const ScalingFit& tail_fit() const noexcept { return tail_; }

  /// Record for entry angle b in (0, 1]. Depth is always the exact
  /// Clairaut value.
  ExcursionRecord evaluate(double b) const {
    ExcursionRecord rec = evaluate_dynamics(b);
    if (!rec.flags.degenerate) {
      rec.delta_min = exact_delta_min(b);
      rec.D = 1.0 / rec.delta_min;
    }
    return rec;
  }

  /// Exact Clairaut depth for entry angle b.
  double exact_delta_min(double b) const {
    if (b == 1.0) return delta_entry_;
    return cusp_distance(surface_, x_entry_ * std::pow(b, 1.0 / surface_.r()));
  }

  /// Duration, winding and the 1/delta functional only; delta_min and D are
  /// left at zero. Depth is monotone in b, so bulk callers evaluate it once
  /// for the smallest b they see.
  ExcursionRecord evaluate_dynamics(double b) const {
    if (!(b > 0.0) || b > 1.0) throw DomainError("ExcursionTable::evaluate: b outside (0, 1]");
    if (b == 1.0) return detail::degenerate_record(surface_, delta_entry_);
    ExcursionRecord rec;
    rec.r = surface_.r();
    rec.b_entry = b;
    rec.delta_entry = delta_entry_;
    rec.flags.interpolated = true;
    if (b < opt_.b_deep) {
      // Beyond the table: winding from the tail law, the rest by quadrature.
      const auto q = excursion_by_quadrature(surface_, delta_entry_, b, opt_.rel_tol);
      rec.duration = q.duration;
      rec.inv_delta_integral = q.inv_delta_integral;
      rec.winding = std::exp(tail_.intercept + tail_.slope * std::log(b));
      rec.flags.deep_shortcut = true;
      rec.flags.interpolated = false;
    } else if (b < opt_.b_split) {
      const double u = std::log(b);
      rec.duration = std::exp(deep_[0](u));
      rec.winding = std::exp(deep_[1](u));
      rec.inv_delta_integral = deep_[2](u);
    } else {
      const double phi = std::acos(b);
      const double pc = std::max(phi, opt_.phi_min);
      rec.duration = phi * shallow_[0](pc);
      rec.winding = phi * shallow_[1](pc);
      rec.inv_delta_integral = phi * shallow_[2](pc);
    }
    rec.t_min = 0.5 * rec.duration;
    rec.delta_tau_lift = kTwoPi * rec.winding;
    return rec;
  }

 private:
  using Spline = boost::math::interpolators::cardinal_cubic_b_spline<double>;
  static constexpr int kPad = 8;
  ProfileSurface surface_;
  double delta_entry_;
  ExcursionTableOptions opt_;
  double x_entry_ = 0.0;
  ScalingFit tail_;
  std::array<Spline, 3> deep_;
  std::array<Spline, 3> shallow_;
};

}  // namespace cuspflow
