#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "cuspflow/excursion.hpp"

using namespace cuspflow;

namespace {

std::vector<ExcursionRecord> depth_ensemble(const ProfileSurface& s, double d_lo, double d_hi,
                                            int n, double tol) {
  std::vector<ExcursionRecord> out;
  for (int i = 0; i < n; ++i) {
    const double D = d_lo * std::pow(d_hi / d_lo, static_cast<double>(i) / (n - 1));
    const double b = entry_angle_for_depth(s, s.delta0(), 1.0 / D);
    out.push_back(simulate_excursion(s, s.delta0(), b, tol));
  }
  return out;
}

}  // namespace

TEST(PredictDeltaMin, ExactClairautAlgebra) {
  ProfileSurface s(3.0);
  const double de = cusp_distance(s, 0.5);
  EXPECT_NEAR(predict_delta_min(s, de, 0.064), cusp_distance(s, 0.2), 1e-14);
  EXPECT_NEAR(predict_delta_min(s, de, 1e-6), cusp_distance(s, 0.005), 1e-15);
  EXPECT_EQ(predict_delta_min(s, de, 1.0), de);
  EXPECT_THROW(predict_delta_min(s, de, 0.0), DomainError);
  EXPECT_THROW(predict_delta_min(s, de, 1.5), DomainError);
  EXPECT_THROW(predict_delta_min(s, s.delta0() * 1.1, 0.5), DomainError);
}

TEST(PredictDeltaMin, ProportionalBound) {
  // b <= 1/R gives x_min <= x_entry R^(-1/r); in distance this stays below
  // (3/2) R^(-1/r) delta_entry.
  for (double r : {2.5, 3.0, 4.0}) {
    ProfileSurface s(r);
    for (double R : {2.0, 10.0, 1e3, 1e6}) {
      EXPECT_LE(predict_delta_min(s, s.delta0(), 1.0 / R),
                1.5 * std::pow(R, -1.0 / r) * s.delta0());
    }
  }
}

TEST(SimulateExcursion, ClosestApproachMatchesClairaut) {
  ProfileSurface s(3.0);
  const double de = cusp_distance(s, 0.5);
  const auto run = simulate_excursion_run(s, de, 0.064, 1e-11);
  EXPECT_NEAR(run.trajectory.at(run.record.t_min).x, 0.2, 1e-8);
  EXPECT_NEAR(run.record.delta_min, cusp_distance(s, 0.2), 1e-8);
}

TEST(SimulateExcursion, DepthDurationAndInvariants) {
  for (double r : {2.5, 3.0, 4.0}) {
    ProfileSurface s(r);
    for (double b = 0.5; b >= 1e-6; b /= 10.0) {
      const auto e = simulate_excursion(s, s.delta0(), b, 1e-11);
      const double ratio = e.delta_min / predict_delta_min(s, s.delta0(), b);
      EXPECT_GE(ratio, 0.98);
      EXPECT_LE(ratio, 1.02);
      EXPECT_LE(e.delta_min, e.delta_entry);
      EXPECT_GT(e.t_min, 0.0);
      EXPECT_LT(e.t_min, e.duration);
      EXPECT_LE(e.duration, 2.0 * e.delta_entry * 1.05);
      EXPECT_GE(e.winding, 0.0);
      EXPECT_GE(e.inv_delta_integral, e.duration / e.delta_entry);
      EXPECT_DOUBLE_EQ(e.D, 1.0 / e.delta_min);
      EXPECT_FALSE(e.flags.singular);
    }
  }
}

TEST(SimulateExcursion, IndependentRoutesAgree) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> lb(std::log(1e-7), std::log(0.95));
  for (double r : {2.5, 3.0, 4.0}) {
    ProfileSurface s(r);
    for (int i = 0; i < 15; ++i) {
      const double b = std::exp(lb(gen));
      const double de = s.delta0() * (0.6 + 0.4 * i / 14.0);
      const auto ode = simulate_excursion(s, de, b, 1e-11);
      const auto q = excursion_by_quadrature(s, de, b);
      EXPECT_NEAR(ode.duration / q.duration, 1.0, 1e-8);
      EXPECT_NEAR(ode.winding / q.winding, 1.0, 1e-8);
      EXPECT_NEAR(ode.inv_delta_integral / q.inv_delta_integral, 1.0, 1e-8);
      EXPECT_NEAR(ode.delta_min / q.delta_min, 1.0, 1e-9);
    }
  }
}

TEST(SimulateExcursion, ReversedOrientationIsMirrorImage) {
  ProfileSurface s(3.0);
  const auto fwd = simulate_excursion(s, s.delta0(), 0.02, 1e-11, +1);
  const auto rev = simulate_excursion(s, s.delta0(), 0.02, 1e-11, -1);
  EXPECT_NEAR(rev.delta_tau_lift, -fwd.delta_tau_lift, 1e-12 * std::abs(fwd.delta_tau_lift));
  EXPECT_DOUBLE_EQ(rev.delta_min, fwd.delta_min);
  EXPECT_DOUBLE_EQ(rev.duration, fwd.duration);
  EXPECT_GT(fwd.delta_tau_lift, 0.0);
  EXPECT_DOUBLE_EQ(rev.winding, fwd.winding);
}

TEST(SimulateExcursion, DegenerateAndSingularCases) {
  ProfileSurface s(3.0);
  const auto flat = simulate_excursion(s, s.delta0(), 1.0, 1e-10);
  EXPECT_TRUE(flat.flags.degenerate);
  EXPECT_EQ(flat.delta_min, flat.delta_entry);
  EXPECT_LE(flat.inv_delta_integral, flat.duration / flat.delta_entry);
  // x_entry b^(1/3) falls well below the 1e-9 floor.
  const auto deep = simulate_excursion(s, s.delta0(), 1e-33, 1e-10);
  EXPECT_TRUE(deep.flags.singular);
  EXPECT_THROW(simulate_excursion(s, s.delta0(), 0.0, 1e-10), DomainError);
  EXPECT_THROW(simulate_excursion(s, 2.0 * s.delta0(), 0.5, 1e-10), DomainError);
}

TEST(SimulateExcursion, DoublingDepthQuadruplesWindingAtCubicProfile) {
  ProfileSurface s(3.0);
  for (double D : {100.0, 300.0, 1000.0}) {
    const double b1 = entry_angle_for_depth(s, s.delta0(), 1.0 / D);
    const double b2 = entry_angle_for_depth(s, s.delta0(), 0.5 / D);
    const double w1 = simulate_excursion(s, s.delta0(), b1, 1e-10).winding;
    const double w2 = simulate_excursion(s, s.delta0(), b2, 1e-10).winding;
    EXPECT_NEAR(w2 / w1, 4.0, 0.4);
    EXPECT_NEAR(w2 / w1, std::pow(b1 / b2, 2.0 / 3.0), 0.05 * w2 / w1);
  }
}

TEST(CheckConvexity, HoldsOnExcursions) {
  for (double r : {2.5, 3.0, 4.0}) {
    ProfileSurface s(r);
    for (double b : {0.5, 1e-2, 1e-4, 1e-6, 1e-9}) {
      const auto run = simulate_excursion_run(s, s.delta0(), b, 1e-10);
      EXPECT_EQ(check_convexity(s, run.trajectory), Convexity::strict) << r << " " << b;
    }
  }
}

TEST(CheckConvexity, RadialAndNegativeControls) {
  ProfileSurface s(3.0);
  const auto radial = integrate_geodesic(s, make_state(s, 0.5, -1.0, 0.0), 0.3, 1e-10);
  ASSERT_GE(radial.samples.size(), 5u);
  EXPECT_EQ(check_convexity(s, radial), Convexity::not_applicable);

  std::vector<double> t, v;
  for (int i = 0; i < 10; ++i) {
    t.push_back(i * 0.1);
    v.push_back(-(i * 0.1 - 0.5) * (i * 0.1 - 0.5));
  }
  EXPECT_FALSE(strictly_convex_samples(t, v));
  for (auto& y : v) y = -y;
  EXPECT_TRUE(strictly_convex_samples(t, v));
  EXPECT_THROW(strictly_convex_samples(std::span(t).first(3), std::span(v).first(3)),
               InsufficientDataError);

  // An outward-then-inward arc (delta rises then falls) is concave.
  const auto arc = integrate_geodesic(s, make_state(s, 0.3, 0.3, std::sqrt(0.91)), 0.2, 1e-10);
  Trajectory tr = arc;
  for (auto& smp : tr.samples) {
    smp.state.x_dot = -smp.state.x_dot;
  }
  EXPECT_EQ(check_convexity(s, tr), Convexity::violated);
  Trajectory tiny;
  tiny.samples.resize(3);
  EXPECT_THROW(check_convexity(s, tiny), InsufficientDataError);
}

TEST(WindingIdentity, ExactOnTheModel) {
  for (double r : {2.5, 3.0, 4.0}) {
    ProfileSurface s(r);
    for (double b : {0.3, 1e-3, 1e-6}) {
      const auto run = simulate_excursion_run(s, s.delta0(), b, 1e-10);
      const auto w = winding_identity_check(s, run.trajectory);
      EXPECT_LT(std::abs(w.lhs - w.rhs) / std::abs(w.lhs), 1e-6);
      const double ratio = w.rhs_delta / w.rhs;
      EXPECT_GE(ratio, 1.0 - 5.0 * s.delta0());
      EXPECT_LE(ratio, 1.0 + 5.0 * s.delta0());
      EXPECT_LE(ratio, 1.0);
    }
  }
  ProfileSurface s(3.0);
  const auto radial = integrate_geodesic(s, make_state(s, 0.5, 1.0, 0.0), 0.2, 1e-10);
  const auto w = winding_identity_check(s, radial);
  EXPECT_EQ(w.lhs, 0.0);
  EXPECT_EQ(w.rhs, 0.0);
}

TEST(FitPowerLaw, ExactAndErrors) {
  std::vector<std::pair<double, double>> pts;
  for (double u : {0.5, 1.0, 2.0, 7.0, 30.0}) pts.emplace_back(u, 7.0 * u * u);
  const auto f = fit_power_law(pts);
  EXPECT_NEAR(f.slope, 2.0, 1e-13);
  EXPECT_NEAR(std::exp(f.intercept), 7.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-13);
  EXPECT_EQ(f.n_points, 5);
  EXPECT_NEAR(f.slope_ci_halfwidth, 0.0, 1e-6);
  pts.emplace_back(-1.0, 2.0);
  EXPECT_THROW(fit_power_law(pts), DomainError);
  pts.assign({{1.0, 1.0}, {2.0, 3.0}});
  EXPECT_THROW(fit_power_law(pts), InsufficientDataError);
  nlohmann::json j = f;
  for (const char* k : {"slope", "intercept", "r_squared", "n_points", "slope_ci_halfwidth"}) {
    EXPECT_TRUE(j.contains(k));
  }
}

TEST(FitPowerLaw, WindingExponentIsRMinusOne) {
  for (double r : {2.5, 3.0}) {
    ProfileSurface s(r);
    const auto ens = depth_ensemble(s, 10.0, 1e4, 13, 1e-10);
    const auto f = winding_exponent_fit(ens);
    EXPECT_NEAR(f.slope, r - 1.0, 0.05);
    EXPECT_GT(f.r_squared, 0.999);
  }
}

TEST(InverseDeltaFunctional, LogarithmicInDepth) {
  ProfileSurface s(3.0);
  const auto ens = depth_ensemble(s, 10.0, 1e4, 13, 1e-10);
  const auto f = inverse_delta_functional(ens);
  EXPECT_GT(f.r_squared, 0.99);
  EXPECT_GT(f.slope, 0.0);
  // Doubling D adds a nearly constant amount.
  std::vector<double> inc;
  for (double D : {100.0, 1000.0}) {
    const double b1 = entry_angle_for_depth(s, s.delta0(), 1.0 / D);
    const double b2 = entry_angle_for_depth(s, s.delta0(), 0.5 / D);
    inc.push_back(simulate_excursion(s, s.delta0(), b2, 1e-10).inv_delta_integral -
                  simulate_excursion(s, s.delta0(), b1, 1e-10).inv_delta_integral);
  }
  EXPECT_NEAR(inc[1] / inc[0], 1.0, 0.1);
  const auto narrow = depth_ensemble(s, 10.0, 50.0, 5, 1e-10);
  EXPECT_THROW(inverse_delta_functional(narrow), InsufficientDataError);
}

TEST(ExcursionTable, MatchesQuadratureRoute) {
  for (double r : {2.5, 4.0}) {
    ProfileSurface s(r);
    ExcursionTable tab(s, s.delta0());
    EXPECT_NEAR(tab.tail_fit().slope, (1.0 - r) / r, 1e-3);
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> lb(std::log(1e-6), 0.0);
    for (int i = 0; i < 200; ++i) {
      const double b = i % 2 ? std::exp(lb(gen)) : std::uniform_real_distribution<double>(0, 1)(gen);
      if (!(b > 0.0)) continue;
      const auto t = tab.evaluate(b);
      const auto q = excursion_by_quadrature(s, s.delta0(), b);
      EXPECT_NEAR(t.duration / q.duration, 1.0, 1e-6);
      EXPECT_NEAR(t.winding / q.winding, 1.0, 1e-6);
      EXPECT_NEAR(t.inv_delta_integral / q.inv_delta_integral, 1.0, 1e-6);
      EXPECT_DOUBLE_EQ(t.delta_min, q.delta_min);
    }
    const auto deep = tab.evaluate(1e-9);
    EXPECT_TRUE(deep.flags.deep_shortcut);
    const auto q = excursion_by_quadrature(s, s.delta0(), 1e-9);
    EXPECT_NEAR(deep.winding / q.winding, 1.0, 1e-3);
    EXPECT_DOUBLE_EQ(deep.delta_min, predict_delta_min(s, s.delta0(), 1e-9));
    EXPECT_TRUE(tab.evaluate(1.0).flags.degenerate);
  }
}

TEST(ExcursionCsv, Header) {
  ProfileSurface s(3.0);
  std::vector<ExcursionRecord> v{simulate_excursion(s, s.delta0(), 0.1, 1e-10)};
  std::ostringstream os;
  write_excursion_csv(os, v);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "r,delta_entry,b_entry,delta_min,D,duration,winding,inv_delta_integral");
}
