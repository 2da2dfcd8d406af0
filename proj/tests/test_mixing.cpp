#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "cuspflow/mixing.hpp"

using namespace cuspflow;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double cos2pi(Point p) { return std::cos(kTwoPi * p.x); }

std::vector<double> log_grid(double lo, double hi, int per_decade) {
  std::vector<double> g;
  const int n = static_cast<int>(std::lround(std::log10(hi / lo) * per_decade));
  for (int i = 0; i <= n; ++i) g.push_back(lo * std::pow(10.0, static_cast<double>(i) / per_decade));
  return g;
}

// Nested adaptive Gauss-Kronrod over the triangle s < t, doubled.
double brute_double_integral(double C, double T) {
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [C](double t) {
    return gauss_kronrod<double, 61>::integrate(
        [C, t](double s) { return std::pow(1.0 + t - s, -C); }, 0.0, t, 15, 1e-13);
  };
  return 2.0 * gauss_kronrod<double, 61>::integrate(inner, 0.0, T, 15, 1e-13);
}

}  // namespace

TEST(Flows, CreateFlowTagsRates) {
  EXPECT_EQ(create_flow(FlowKind::doubling).rate.style, RateStyle::exponential);
  EXPECT_EQ(create_flow(FlowKind::catmap).rate.style, RateStyle::exponential);
  EXPECT_EQ(create_flow(FlowKind::catmap).state_dim, 2);
  const auto lsv = create_flow(FlowKind::intermittent, 0.4);
  EXPECT_EQ(lsv.rate.style, RateStyle::polynomial);
  EXPECT_NEAR(lsv.rate.C, 1.5, 1e-15);
  EXPECT_THROW(create_flow(FlowKind::intermittent, 1.0), ConfigError);
  EXPECT_THROW(create_flow(FlowKind::intermittent, 0.0), ConfigError);
  EXPECT_EQ(parse_flow_kind("catmap"), FlowKind::catmap);
  EXPECT_THROW(parse_flow_kind("baker"), ConfigError);
}

TEST(Flows, DoublingIdentityAverage) {
  DoublingOrbit o(derive_seed(1, 0));
  double s = 0.0;
  const long n = 1'000'000;
  for (long i = 0; i < n; ++i) {
    s += o.x();
    o.step();
  }
  EXPECT_NEAR(s / n, 0.5, 0.002);
}

TEST(Flows, DoublingStepIsTimesTwoModOne) {
  DoublingOrbit o(derive_seed(2, 0));
  for (int i = 0; i < 1000; ++i) {
    const double x = o.x();
    o.step();
    // The new low bit is fresh; the rest is 2x mod 1 exactly.
    EXPECT_NEAR(o.x(), std::fmod(2.0 * x, 1.0), 0x1.0p-52);
  }
}

TEST(Flows, CatMapJacobianIsUnimodular) {
  // One step in fixed point, mapped back to the torus: finite differences
  // of the unit-square map recover [[2,1],[1,1]].
  CatOrbit o(derive_seed(3, 0));
  const Point p0 = o.point();
  o.step();
  const Point p1 = o.point();
  EXPECT_NEAR(std::fmod(2 * p0.x + p0.y, 1.0), p1.x, 1e-12);
  EXPECT_NEAR(std::fmod(p0.x + p0.y, 1.0), p1.y, 1e-12);
  const double J[2][2] = {{2, 1}, {1, 1}};
  EXPECT_DOUBLE_EQ(J[0][0] * J[1][1] - J[0][1] * J[1][0], 1.0);
}

TEST(Flows, IntermittentDensityNearZero) {
  // Histogram mass of [2^-(j+1), 2^-j) over the predicted x^-0.5 mass. The
  // ratio settles to a constant once x^alpha is small, i.e. below 2^-10.
  const double alpha = 0.5;
  std::vector<double> cnt(20, 0.0);
  double total = 0.0;
  for (int s = 0; s < 8; ++s) {
    IntermittentOrbit o(alpha, 10'000, derive_seed(11, s));
    for (long i = 0; i < 10'000'000; ++i) {
      const int j = -std::ilogb(o.x()) - 1;
      if (j >= 0 && j < 20) cnt[j] += 1.0;
      total += 1.0;
      o.step();
    }
  }
  std::vector<double> ratio;
  for (int j = 10; j < 16; ++j) {
    const double a = std::ldexp(1.0, -(j + 1)), b = std::ldexp(1.0, -j);
    ratio.push_back(cnt[j] / total / (2.0 * (std::sqrt(b) - std::sqrt(a))));
  }
  double mean = 0.0;
  for (double r : ratio) mean += r;
  mean /= ratio.size();
  for (double r : ratio) EXPECT_NEAR(r / mean, 1.0, 0.10);
  // Shallower bins carry the x^alpha correction and sit above the limit.
  const double a3 = 0.0625, b3 = 0.125;
  EXPECT_GT(cnt[3] / total / (2.0 * (std::sqrt(b3) - std::sqrt(a3))), 1.2 * mean);
}

TEST(Flows, IntermittentNeverSticksAtZero) {
  IntermittentOrbit o(0.9, 0, derive_seed(5, 0));
  for (int i = 0; i < 1'000'000; ++i) {
    o.step();
    ASSERT_GT(o.x(), 0.0);
    ASSERT_LE(o.x(), 1.0);
  }
}

TEST(Flows, ExponentialFlowsPreserveLebesgue) {
  const std::vector<std::pair<std::function<double(Point)>, double>> obs = {
      {[](Point p) { return p.x; }, 0.5},
      {[](Point p) { return p.x * p.x; }, 1.0 / 3.0},
      {[](Point p) { return std::cos(kTwoPi * p.x); }, 0.0},
      {[](Point p) { return std::sin(kTwoPi * p.x); }, 0.0},
      {[](Point p) { return std::abs(p.x - 0.5) < 0.1 ? 1.0 : 0.0; }, 0.2},
  };
  const long T = 1'000'000;
  for (auto kind : {FlowKind::doubling, FlowKind::catmap}) {
    const auto m = create_flow(kind);
    for (std::size_t k = 0; k < obs.size(); ++k) {
      SuspensionFlow flow(m, derive_seed(21, k));
      const auto& [f, mu] = obs[k];
      double s = 0.0, s2 = 0.0;
      flow.visit_orbit([&](auto& o) {
        for (long i = 0; i < T; ++i) {
          const double v = f(o.point());
          s += v;
          s2 += v * v;
          o.step();
        }
      });
      const double mean = s / T, sd = std::sqrt(std::max(0.0, s2 / T - mean * mean));
      EXPECT_LE(std::abs(mean - mu), 3.0 * sd / std::sqrt(static_cast<double>(T)))
          << to_string(kind) << " observable " << k;
    }
  }
}

TEST(Flows, IntermittentOrbitsAgree) {
  // No closed-form density: two independent orbits must agree on each
  // observable. With C = 1.5 the variance is linear, so the gap is O(T^-1/2).
  const auto m = create_flow(FlowKind::intermittent, 0.4);
  const long T = 2'000'000;
  auto averages = [&](std::uint64_t seed) {
    std::array<double, 3> s{};
    IntermittentOrbit o(m.alpha, m.burn_in, seed);
    for (long i = 0; i < T; ++i) {
      const double x = o.x();
      s[0] += x;
      s[1] += std::cos(kTwoPi * x);
      s[2] += x < 0.25 ? 1.0 : 0.0;
      o.step();
    }
    for (auto& v : s) v /= T;
    return s;
  };
  const auto a = averages(derive_seed(31, 0)), b = averages(derive_seed(31, 1));
  for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(a[k] - b[k]), 10.0 / std::sqrt(static_cast<double>(T))) << k;
}

TEST(Correlation, ConstantObservableGivesZero) {
  const auto m = create_flow(FlowKind::doubling);
  const auto c = correlation_estimate(m, [](Point) { return 1.0; }, cos2pi, 3.0, 2000, 7);
  EXPECT_DOUBLE_EQ(c.value, 0.0);
  const auto c2 = correlation_estimate(m, cos2pi, [](Point) { return -2.0; }, 3.0, 2000, 7);
  EXPECT_DOUBLE_EQ(c2.value, 0.0);
}

TEST(Correlation, FourierModesAreOrthogonal) {
  const auto m = create_flow(FlowKind::doubling);
  for (double t : {1.0, 2.0, 5.0}) {
    const auto c = correlation_estimate(m, cos2pi, cos2pi, t, 20'000, 9);
    EXPECT_LE(std::abs(c.value), 3.0 * c.std_error) << "t=" << t;
  }
  const auto c0 = correlation_estimate(m, cos2pi, cos2pi, 0.0, 20'000, 9);
  EXPECT_NEAR(c0.value, 0.5, 5.0 * c0.std_error);
}

TEST(Correlation, BumpDecaysExponentially) {
  const auto m = create_flow(FlowKind::doubling);
  // Plateau on [0.2, 0.6] with ramps of width 0.01. Smoother bumps decay
  // below the sampling error within two steps.
  auto tent = [](Point p) { return std::clamp((0.2 - std::abs(p.x - 0.4)) / 0.01, 0.0, 1.0); };
  std::vector<double> ts;
  std::vector<CorrelationEstimate> cs;
  for (int t = 1; t <= 20; ++t) {
    ts.push_back(t);
    cs.push_back(correlation_estimate(m, tent, tent, t, 50'000, 13));
  }
  const auto fit = fit_exponential_decay(ts, cs);
  EXPECT_GE(fit.n_points, 3);
  EXPECT_GT(-fit.slope, 0.2);
}

TEST(Correlation, RejectsSmallSamples) {
  const auto m = create_flow(FlowKind::doubling);
  EXPECT_THROW(correlation_estimate(m, cos2pi, cos2pi, 1.0, 999, 1), InsufficientDataError);
}

TEST(Birkhoff, TrivialCases) {
  const auto m = create_flow(FlowKind::catmap);
  SuspensionFlow flow(m, 17);
  EXPECT_DOUBLE_EQ(flow.birkhoff_integral([](Point) { return 1.0; }, 123.25), 123.25);
  EXPECT_DOUBLE_EQ(flow.birkhoff_integral(cos2pi, 0.0), 0.0);
  EXPECT_THROW(flow.birkhoff_integral(cos2pi, -1.0), DomainError);
}

TEST(Birkhoff, AdditiveOverConcatenation) {
  for (auto kind : {FlowKind::doubling, FlowKind::catmap}) {
    const auto m = create_flow(kind);
    SuspensionFlow a(m, 19), b(m, 19);
    const double whole = a.birkhoff_integral(cos2pi, 1000.7);
    const double parts = b.birkhoff_integral(cos2pi, 400.35) + b.birkhoff_integral(cos2pi, 600.35);
    EXPECT_NEAR(whole, parts, 1e-9);
    EXPECT_NEAR(a.fiber(), b.fiber(), 1e-12);
  }
}

TEST(Birkhoff, EvolveMatchesIntegration) {
  const auto m = create_flow(FlowKind::doubling);
  SuspensionFlow a(m, 23), b(m, 23);
  a.evolve(37.6);
  b.birkhoff_integral(cos2pi, 37.6);
  EXPECT_NEAR(a.fiber(), b.fiber(), 1e-12);
  EXPECT_EQ(a.point().x, b.point().x);
}

TEST(Birkhoff, BumpAverageRate) {
  // |(1/T) int f - mu_f| <= 5 T^-0.45 on at least 95% of seeds.
  const auto m = create_flow(FlowKind::doubling);
  BumpFamily fam(0.5);
  const double R = 4.0, mu = fam.l1_norm(R);
  auto f = [&](Point p) { return fam.value(R, p.x); };
  const int seeds = 40;
  int ok = 0, total = 0;
  for (int s = 0; s < seeds; ++s) {
    SuspensionFlow flow(m, derive_seed(29, s));
    double acc = 0.0, t = 0.0;
    for (double T : {1e3, 1e4, 1e5, 1e6}) {
      acc += flow.birkhoff_integral(f, T - t);
      t = T;
      ++total;
      if (std::abs(acc / T - mu) <= 5.0 * std::pow(T, -0.45)) ++ok;
    }
  }
  EXPECT_GE(static_cast<double>(ok) / total, 0.95);
}

TEST(ClosedForm, MatchesBruteForceQuadrature) {
  for (double C : {0.5, 1.0, 1.5, 2.0}) {
    for (double T : {1.0, 10.0, 100.0}) {
      const double exact = brute_double_integral(C, T);
      EXPECT_NEAR(closed_form_double_integral(C, T) / exact, 1.0, 1e-6) << "C=" << C << " T=" << T;
    }
  }
}

TEST(ClosedForm, LogCaseAndMajorant) {
  EXPECT_NEAR(closed_form_double_integral(1.0, 10.0), 2.0 * (11.0 * std::log(11.0) - 10.0), 1e-10);
  EXPECT_NEAR(closed_form_double_integral(1.0, 10.0) / 2.0, 16.3768, 5e-5);
  EXPECT_LE(closed_form_double_integral(2.0, 10.0), 20.0);
  // Continuous through the removable points.
  EXPECT_NEAR(closed_form_double_integral(1.0 + 1e-9, 50.0), closed_form_double_integral(1.0, 50.0), 1e-6);
  EXPECT_NEAR(closed_form_double_integral(2.0 - 1e-9, 50.0), closed_form_double_integral(2.0, 50.0), 1e-6);
  EXPECT_THROW(closed_form_double_integral(0.0, 1.0), DomainError);
  EXPECT_THROW(closed_form_double_integral(1.0, 0.0), DomainError);
}

TEST(Variance, RegimeClassification) {
  EXPECT_EQ(variance_regime(create_flow(FlowKind::doubling).rate), "exponential");
  EXPECT_EQ(variance_regime(create_flow(FlowKind::intermittent, 0.4).rate), "polynomial_C>1");
  EXPECT_EQ(variance_regime(create_flow(FlowKind::intermittent, 0.5).rate), "polynomial_C=1");
  EXPECT_EQ(variance_regime(create_flow(FlowKind::intermittent, 2.0 / 3.0).rate), "polynomial_C<1");
  EXPECT_NEAR(variance_exponent(create_flow(FlowKind::intermittent, 2.0 / 3.0).rate), 1.5, 1e-12);
}

TEST(Variance, ExponentialFlowsGrowLinearly) {
  const auto grid = log_grid(1e3, 1e5, 4);
  for (auto kind : {FlowKind::doubling, FlowKind::catmap}) {
    const auto vg = variance_growth_experiment(create_flow(kind), cos2pi, grid, 2000, 41);
    EXPECT_LE(vg.fit.slope, 1.1) << to_string(kind);
    EXPECT_GT(vg.fit.slope, 0.9) << to_string(kind);
  }
}

TEST(Variance, IntermittentRegimes) {
  // Long laminar phases make the sample variance heavy-tailed at C = 1.5;
  // 8000 orbits keep the slope spread near 0.03.
  const auto grid = log_grid(1e3, 1e5, 4);
  const auto fast = variance_growth_experiment(create_flow(FlowKind::intermittent, 0.4), cos2pi, grid, 8000, 43);
  EXPECT_LE(fast.fit.slope, 1.1);
  const auto slow =
      variance_growth_experiment(create_flow(FlowKind::intermittent, 2.0 / 3.0), cos2pi, grid, 2000, 43);
  EXPECT_LE(slow.fit.slope, 2.0 - 0.5 + 0.1);
  EXPECT_GT(slow.fit.slope, fast.fit.slope);
}

TEST(Variance, BorderlineLogCase) {
  // C = 1: Var stays below Q (1+T) log(1+T) - T with a grid-constant Q.
  const auto grid = log_grid(1e3, 1e5, 4);
  const auto vg = variance_growth_experiment(create_flow(FlowKind::intermittent, 0.5), cos2pi, grid, 2000, 47);
  for (const auto& row : vg.rows) EXPECT_LE(row.empirical_variance, row.bound_value * (1 + 1e-12));
  EXPECT_LE(vg.fit.slope, 1.1 + std::log(std::log(1e5) / std::log(1e3)) / std::log(1e2));
}

TEST(Variance, GridAndDeterminism) {
  const auto m = create_flow(FlowKind::doubling);
  EXPECT_THROW(variance_growth_experiment(m, cos2pi, {10.0, 20.0, 500.0}, 100, 1), InsufficientDataError);
  EXPECT_THROW(variance_growth_experiment(m, cos2pi, {10.0, 1000.0}, 100, 1), InsufficientDataError);
  const auto grid = log_grid(10.0, 1000.0, 2);
  const auto a = variance_growth_experiment(m, cos2pi, grid, 200, 3, 1);
  const auto b = variance_growth_experiment(m, cos2pi, grid, 200, 3, 4);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].empirical_variance, b.rows[i].empirical_variance);
  std::ostringstream os;
  write_variance_csv(os, a);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "T,empirical_variance,bound_value,regime");
}

TEST(Bumps, NormsMatchTheFamilyConstant) {
  BumpFamily fam(0.5);
  using boost::math::quadrature::gauss_kronrod;
  Rng rng(5);
  for (double R : {1.0, 3.0, 17.0, 40.0}) {
    const double c = fam.center();
    const double l1 = gauss_kronrod<double, 61>::integrate([&](double x) { return fam.value(R, x); }, c - 0.5 / R,
                                                           c + 0.5 / R, 15, 1e-13);
    EXPECT_NEAR(l1, fam.l1_norm(R), 1e-12);
    EXPECT_GE(l1, 1.0 / (fam.h() * R));
    EXPECT_LE(l1, fam.h() / R);
    EXPECT_LE(fam.holder_norm(R), fam.h() * std::pow(R, fam.theta()) * (1 + 1e-12));
    double semi = 0.0;
    for (int i = 0; i < 20000; ++i) {
      const double x = c + (rng.uniform() - 0.5) / R;
      const double y = x + (rng.uniform() - 0.5) * 0.3 / R;
      const double d = std::abs(x - y);
      if (d > 0) semi = std::max(semi, std::abs(fam.value(R, x) - fam.value(R, y)) / std::pow(d, fam.theta()));
    }
    EXPECT_LE(semi + 1.0, fam.holder_norm(R) * (1 + 1e-12));
  }
  EXPECT_THROW(BumpFamily(0.0), ConfigError);
  EXPECT_THROW(BumpFamily(1.5), ConfigError);
}

TEST(Sandwich, ScheduleConvergesSlowly) {
  EffectiveAverageConfig c;
  EXPECT_NEAR(c.schedule_exponent(), 6.0, 1e-12);
  double prev = 1e300;
  for (int k = 1; k < 1000; ++k) {
    const double ratio = c.T(k + 1) / c.T(k);
    ASSERT_GT(ratio, 1.0);
    ASSERT_LT(ratio, prev);
    prev = ratio;
  }
  EXPECT_NEAR(c.T(101) / c.T(100), std::pow(1.01, 6.0), 1e-12);
  // First k with ratio within 1%.
  int k1 = 1;
  while (c.T(k1 + 1) / c.T(k1) >= 1.01) ++k1;
  EXPECT_EQ(k1, 603);
  for (int k = 1; k < 30; ++k) EXPECT_LE(c.n_of_k(k), c.n_of_k(k + 1));
}

TEST(Sandwich, ConfigGate) {
  const auto exp_rate = create_flow(FlowKind::doubling).rate;
  EffectiveAverageConfig c;
  EXPECT_NO_THROW(validate(c, exp_rate, 0.5));
  auto bad = c;
  bad.alpha = 0.5;
  EXPECT_THROW(validate(bad, exp_rate, 0.5), ConfigError);
  bad = c;
  bad.xi = 0.3;  // needs xi < 0.4/1.5
  EXPECT_THROW(validate(bad, exp_rate, 0.5), ConfigError);
  bad = c;
  bad.m = 1.0;
  EXPECT_THROW(validate(bad, exp_rate, 0.5), ConfigError);
  for (double a : {0.3, 0.5, 0.9}) {
    EXPECT_NO_THROW(validate(c, create_flow(FlowKind::intermittent, a).rate, 0.5)) << a;
  }
  bad = c;
  bad.alpha = 0.45;
  EXPECT_THROW(validate(bad, create_flow(FlowKind::intermittent, 0.3).rate, 0.5), ConfigError);
}

TEST(Sandwich, BinnedSumsMatchDirectSums) {
  BumpFamily fam(0.5);
  EffectiveAverageConfig c;
  c.k_max = 11;
  for (auto kind : {FlowKind::doubling, FlowKind::intermittent}) {
    const auto m = kind == FlowKind::doubling ? create_flow(kind) : create_flow(kind, 0.4);
    const auto a = sandwich_orbit_sums(m, fam, c, 77);
    const auto b = sandwich_orbit_sums_direct(m, fam, c, 77);
    for (int k = 0; k < c.k_max; ++k) {
      ASSERT_EQ(a.sums[k].size(), b.sums[k].size());
      for (std::size_t j = 0; j < b.sums[k].size(); ++j) {
        EXPECT_NEAR(a.sums[k][j], b.sums[k][j], 1e-10 * std::max(1.0, b.sums[k][j])) << k << "," << j;
      }
    }
  }
}

TEST(Sandwich, ConstantFamilyAlwaysHolds) {
  const auto m = create_flow(FlowKind::doubling);
  EffectiveAverageConfig c;
  c.k_max = 8;
  c.k0 = 1;
  c.m = 1.01;
  c.xi = 0.1;
  const auto [rep, sums] = effective_sandwich_experiment(m, BumpFamily::constant(), c, 5, 3);
  EXPECT_DOUBLE_EQ(rep.fraction_clean_beyond_k0, 1.0);
  for (const auto& o : rep.orbits) EXPECT_TRUE(o.failing_k.empty());
  EXPECT_DOUBLE_EQ(sums[0].sums[2][0], c.T(3));
}

TEST(Sandwich, LargerSlackNeverAddsFailures) {
  // alpha near 1/2 and a slowly shrinking family make the lower bound
  // positive early, so slack factors close to 1 do fail.
  const auto m = create_flow(FlowKind::doubling);
  BumpFamily fam(0.5);
  EffectiveAverageConfig c;
  c.alpha = 0.55;
  c.xi = 0.05;
  c.k_max = 3;
  c.k0 = 1;
  const auto [rep, sums] = effective_sandwich_experiment(m, fam, c, 12, 5);
  std::vector<std::size_t> prev(sums.size(), SIZE_MAX);
  int tight = 0, loose = 0;
  for (double slack : {1.0001, 1.001, 1.01, 1.1, 2.0}) {
    auto cc = c;
    cc.m = slack;
    for (std::size_t i = 0; i < sums.size(); ++i) {
      const auto n = evaluate_sandwich(sums[i], fam, cc).failing_k.size();
      EXPECT_LE(n, prev[i]);
      prev[i] = n;
      if (slack == 1.0001) tight += static_cast<int>(n);
      if (slack == 2.0) loose += static_cast<int>(n);
    }
  }
  EXPECT_GT(tight, 0);
  EXPECT_EQ(loose, 0);
}

TEST(Sandwich, InformativeIndicesAreReported) {
  BumpFamily fam(0.5);
  EffectiveAverageConfig c;
  // With alpha = 0.6 the error term dominates the lower bound on the whole
  // acceptance schedule.
  EXPECT_EQ(first_informative_k(fam, c), 0);
  c.alpha = 0.55;
  c.xi = 0.05;
  c.k_max = 3;
  EXPECT_GE(first_informative_k(fam, c), 1);
}

TEST(Sandwich, ShortRunIsDeterministicAndClean) {
  const auto m = create_flow(FlowKind::doubling);
  BumpFamily fam(0.5);
  EffectiveAverageConfig c;
  c.k_max = 14;
  c.k0 = 12;
  const auto a = effective_sandwich_experiment(m, fam, c, 8, 99, 1).first;
  const auto b = effective_sandwich_experiment(m, fam, c, 8, 99, 3).first;
  nlohmann::json ja = a, jb = b;
  EXPECT_EQ(ja.dump(), jb.dump());
  EXPECT_GE(a.fraction_clean_beyond_k0, 0.95);
  EXPECT_TRUE(ja.contains("variance_summability"));
}
