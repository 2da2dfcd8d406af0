#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cuspflow/dop853.hpp"
#include "cuspflow/trajectory.hpp"

using namespace cuspflow;

namespace {

// Classical fixed-step RK4 on the geodesic equations; a reference that shares
// nothing with the adaptive integrator except the right-hand side formula.
PhaseState rk4_reference(const ProfileSurface& s, PhaseState st, double t_end, int n) {
  const double h = t_end / n;
  auto f = [&](const PhaseState& p) { return geodesic_rhs(s, p); };
  auto add = [](PhaseState p, const PhaseDerivative& d, double c) {
    p.x += c * d.dx;
    p.tau_lift += c * d.dtau;
    p.x_dot += c * d.ddx;
    p.tau_dot += c * d.ddtau;
    return p;
  };
  for (int i = 0; i < n; ++i) {
    const auto k1 = f(st);
    const auto k2 = f(add(st, k1, 0.5 * h));
    const auto k3 = f(add(st, k2, 0.5 * h));
    const auto k4 = f(add(st, k3, h));
    st.x += h / 6 * (k1.dx + 2 * k2.dx + 2 * k3.dx + k4.dx);
    st.tau_lift += h / 6 * (k1.dtau + 2 * k2.dtau + 2 * k3.dtau + k4.dtau);
    st.x_dot += h / 6 * (k1.ddx + 2 * k2.ddx + 2 * k3.ddx + k4.ddx);
    st.tau_dot += h / 6 * (k1.ddtau + 2 * k2.ddtau + 2 * k3.ddtau + k4.ddtau);
  }
  return st;
}

}  // namespace

TEST(Dop853, ExponentialDecayAndDenseOutput) {
  auto rhs = [](double, const Vec<1>& y, Vec<1>& f) {
    f[0] = -y[0];
    return true;
  };
  Dop853Options opt;
  opt.rtol = 1e-12;
  opt.atol = 1e-14;
  Dop853<1, decltype(rhs)> st(rhs, 0.0, {1.0}, opt);
  while (st.t() < 5.0) {
    auto seg = st.step(1.0, 5.0);
    ASSERT_TRUE(seg);
    const double tm = 0.5 * (seg->t0 + seg->t1());
    EXPECT_NEAR(seg->component(tm, 0), std::exp(-tm), 1e-11);
  }
  EXPECT_NEAR(st.t(), 5.0, 1e-15);
  EXPECT_NEAR(st.y()[0], std::exp(-5.0), 1e-12);
}

TEST(Dop853, HarmonicOscillatorLongRun) {
  auto rhs = [](double, const Vec<2>& y, Vec<2>& f) {
    f[0] = y[1];
    f[1] = -y[0];
    return true;
  };
  Dop853Options opt;
  opt.rtol = 1e-11;
  opt.atol = 1e-13;
  Dop853<2, decltype(rhs)> st(rhs, 0.0, {1.0, 0.0}, opt);
  const double T = 20.0 * std::numbers::pi;
  while (st.t() < T) ASSERT_TRUE(st.step(0.5, T));
  EXPECT_NEAR(st.y()[0], 1.0, 1e-8);
  EXPECT_NEAR(st.y()[1], 0.0, 1e-8);
  EXPECT_GT(st.accepted(), 0);
}

TEST(IntegrateGeodesic, AgreesWithFineRk4Reference) {
  ProfileSurface s(3.0);
  const PhaseState start = make_state(s, 0.6, -0.8, 0.6, 0.25);
  const double t_end = 0.4;
  const auto traj = integrate_geodesic(s, start, t_end, 1e-12);
  const PhaseState ref = rk4_reference(s, start, t_end, 20000);
  const PhaseState got = traj.samples.back().state;
  EXPECT_NEAR(traj.t_end(), t_end, 1e-15);
  EXPECT_NEAR(got.x, ref.x, 1e-11);
  EXPECT_NEAR(got.tau_lift, ref.tau_lift, 1e-10);
  EXPECT_NEAR(got.x_dot, ref.x_dot, 1e-10);
  EXPECT_NEAR(got.tau_dot, ref.tau_dot, 1e-9);
  const PhaseState mid = traj.at(0.2);
  const PhaseState ref_mid = rk4_reference(s, start, 0.2, 10000);
  EXPECT_NEAR(mid.x, ref_mid.x, 1e-10);
}

TEST(IntegrateGeodesic, ConservationAtDefaultTolerance) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> lb(std::log(1e-8), std::log(0.9));
  for (double r : {2.5, 3.0, 4.0}) {
    ProfileSurface s(r);
    const double xe = inverse_cusp_distance(s, s.delta0());
    for (int i = 0; i < 20; ++i) {
      const double b = std::exp(lb(gen));
      const PhaseState st = make_state(s, xe, -std::sqrt(1 - b * b), b);
      const auto t10 = integrate_geodesic(s, st, 1.5 * s.delta0(), 1e-10);
      EXPECT_LT(t10.clairaut_drift, 1e-8);
      EXPECT_LT(t10.speed_drift, 1e-8);
      EXPECT_LE(t10.clairaut_drift, 100 * 1e-10);
      EXPECT_LE(clairaut_ratio_bound(s, t10), 1.0 + 100 * 1e-10);
      const auto t12 = integrate_geodesic(s, st, 1.5 * s.delta0(), 1e-12);
      EXPECT_LT(t12.clairaut_drift, 1e-10);
      for (std::size_t k = 1; k < t10.samples.size(); ++k) {
        ASSERT_GT(t10.samples[k].t, t10.samples[k - 1].t);
      }
    }
  }
}

TEST(IntegrateGeodesic, RadialPathKeepsAngleAndFlagsFloor) {
  ProfileSurface s(3.0);
  const auto out = integrate_geodesic(s, make_state(s, 0.5, 1.0, 0.0, 1.25), 0.3, 1e-10);
  for (const auto& smp : out.samples) EXPECT_EQ(smp.state.tau_lift, 1.25);
  const auto in = integrate_geodesic(s, make_state(s, 0.5, -1.0, 0.0), 2.0, 1e-10);
  EXPECT_EQ(in.status, TrajectoryStatus::floor_reached);
  EXPECT_LE(in.samples.back().state.x, s.x_floor());
}

TEST(IntegrateGeodesic, SignOfDistanceRateIsA) {
  ProfileSurface s(4.0);
  const PhaseState st = make_state(s, 0.5, -0.3, std::sqrt(1 - 0.09));
  const auto traj = integrate_geodesic(s, st, 1.0, 1e-10);
  for (const auto& smp : traj.samples) {
    const double a = angular_data(s, smp.state).a;
    const double rate = delta_rate(s, smp.state);
    EXPECT_NEAR(rate, a, 1e-8);
  }
}

TEST(IntegrateGeodesic, RejectsBadInput) {
  ProfileSurface s(3.0);
  const PhaseState st = make_state(s, 0.5, -0.6, 0.8);
  EXPECT_THROW(integrate_geodesic(s, st, 1.0, 1e-5), DomainError);
  EXPECT_THROW(integrate_geodesic(s, st, 1.0, 1e-14), DomainError);
  EXPECT_THROW(integrate_geodesic(s, make_state(s, 0.5, 0.6, 0.0), 1.0, 1e-10), DomainError);
  PhaseState out = st;
  out.x = 2.0;
  EXPECT_THROW(integrate_geodesic(s, out, 1.0, 1e-10), DomainError);
}

TEST(IntegrateGeodesic, LeavingTheChartIsFlagged) {
  ProfileSurface s(3.0);
  const auto traj = integrate_geodesic(s, make_state(s, 0.9, 1.0, 0.0), 5.0, 1e-10);
  EXPECT_EQ(traj.status, TrajectoryStatus::left_chart);
}

TEST(TrajectoryCsv, HeaderAndPrecision) {
  ProfileSurface s(3.0);
  const auto traj = integrate_geodesic(s, make_state(s, 0.5, -0.6, 0.8), 0.1, 1e-10);
  std::ostringstream os;
  write_trajectory_csv(os, s, traj);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,x,tau_lift,x_dot,tau_dot,a,b,clairaut,delta");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 2), "0,");
  EXPECT_NE(line.find("0.5,"), std::string::npos);
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows + 1, static_cast<int>(traj.samples.size()));
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}
