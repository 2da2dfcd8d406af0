#pragma once

// Synthetic mixing flows: unit-roof suspensions of the doubling map, the
// torus cat map [[2,1],[1,1]] and the Liverani-Saussol-Vaienti intermittent
// map. Observables are functions of the base point and constant on fibers,
// so flow time T integrates as whole steps plus a fractional last step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuspflow/errors.hpp"
#include "cuspflow/parallel.hpp"
#include "cuspflow/rng.hpp"
#include "cuspflow/scaling.hpp"

namespace cuspflow {

enum class FlowKind { doubling, catmap, intermittent };
enum class RateStyle { exponential, polynomial };

inline std::string_view to_string(FlowKind k) {
  switch (k) {
    case FlowKind::doubling: return "doubling";
    case FlowKind::catmap: return "catmap";
    case FlowKind::intermittent: return "intermittent";
  }
  return "unknown";
}

inline FlowKind parse_flow_kind(std::string_view s) {
  if (s == "doubling") return FlowKind::doubling;
  if (s == "catmap") return FlowKind::catmap;
  if (s == "intermittent") return FlowKind::intermittent;
  throw ConfigError("unknown flow kind '" + std::string(s) +
                    "' (expected doubling, catmap or intermittent)");
}

inline std::string_view to_string(RateStyle s) {
  return s == RateStyle::exponential ? "exponential" : "polynomial";
}

/// Declared decay of correlations: K e^(-C t) or K (1 + t)^(-C).
struct RateModel {
  RateStyle style = RateStyle::exponential;
  double K = 1.0;
  double C = 1.0;
};

struct MixingFlowModel {
  FlowKind kind = FlowKind::doubling;
  double alpha = 0.0;  // intermittency exponent; only for the LSV map
  RateModel rate;
  int state_dim = 1;
  long burn_in = 10'000;
};

inline MixingFlowModel create_flow(FlowKind kind, double alpha = 0.0) {
  MixingFlowModel m;
  m.kind = kind;
  switch (kind) {
    case FlowKind::doubling:
      m.rate = {RateStyle::exponential, 1.0, std::numbers::ln2};
      break;
    case FlowKind::catmap:
      m.state_dim = 2;
      m.rate = {RateStyle::exponential, 1.0, std::log((3.0 + std::sqrt(5.0)) / 2.0)};
      break;
    case FlowKind::intermittent:
      if (!(alpha > 0.0 && alpha < 1.0)) {
        std::ostringstream os;
        os << "intermittent map needs alpha in (0, 1) (got " << alpha << ")";
        throw ConfigError(os.str());
      }
      m.alpha = alpha;
      m.rate = {RateStyle::polynomial, 1.0, 1.0 / alpha - 1.0};
      break;
  }
  return m;
}

/// Base point; y is unused by the one-dimensional maps.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Doubling map on a 64-bit binary window. Each step shifts in a fresh
/// random bit, which is exactly the action of x -> 2x mod 1 on a
/// Lebesgue-random real whose digits are revealed on demand.
class DoublingOrbit {
 public:
  explicit DoublingOrbit(std::uint64_t seed) : rng_(seed) { window_ = rng_.bits(); }
  void step() {
    if (left_ == 0) {
      pool_ = rng_.bits();
      left_ = 64;
    }
    window_ = (window_ << 1) | (pool_ & 1u);
    pool_ >>= 1;
    --left_;
  }
  double x() const { return static_cast<double>(window_ >> 11) * 0x1.0p-53; }
  Point point() const { return {x(), 0.0}; }

 private:
  Rng rng_;
  std::uint64_t window_ = 0, pool_ = 0;
  int left_ = 0;
};

/// Cat map in 64-bit fixed point: exact integer arithmetic mod 2^64.
class CatOrbit {
 public:
  explicit CatOrbit(std::uint64_t seed) {
    Rng rng(seed);
    u_ = rng.bits();
    v_ = rng.bits();
  }
  void step() {
    const std::uint64_t u = 2 * u_ + v_;
    v_ = u_ + v_;
    u_ = u;
  }
  double x() const { return static_cast<double>(u_ >> 11) * 0x1.0p-53; }
  Point point() const {
    return {x(), static_cast<double>(v_ >> 11) * 0x1.0p-53};
  }

 private:
  std::uint64_t u_ = 0, v_ = 0;
};

/// LSV map x(1 + (2x)^alpha) on [0, 1/2), 2x - 1 on [1/2, 1], started from
/// a Lebesgue point and burnt in.
class IntermittentOrbit {
 public:
  IntermittentOrbit(double alpha, long burn_in, std::uint64_t seed) : alpha_(alpha), rng_(seed) {
    x_ = rng_.uniform_open_zero();
    for (long i = 0; i < burn_in; ++i) step();
  }
  void step() {
    x_ = x_ < 0.5 ? x_ * (1.0 + std::pow(2.0 * x_, alpha_)) : 2.0 * x_ - 1.0;
    // 1/2 -> 0 is the only way to land on the fixed point in floating
    // point; re-inject a fresh point rather than sticking there.
    if (!(x_ > 0.0) || x_ > 1.0) x_ = rng_.uniform_open_zero();
  }
  double x() const { return x_; }
  Point point() const { return {x_, 0.0}; }

 private:
  double alpha_;
  Rng rng_;
  double x_ = 0.5;
};

using AnyOrbit = std::variant<DoublingOrbit, CatOrbit, IntermittentOrbit>;

/// Base point drawn from the map's invariant measure.
inline AnyOrbit sample_orbit(const MixingFlowModel& m, std::uint64_t seed) {
  switch (m.kind) {
    case FlowKind::doubling: return DoublingOrbit(seed);
    case FlowKind::catmap: return CatOrbit(seed);
    case FlowKind::intermittent: return IntermittentOrbit(m.alpha, m.burn_in, seed);
  }
  throw ConfigError("unknown flow kind");
}

/// Unit-roof suspension flow: base orbit plus fiber coordinate in [0, 1).
class SuspensionFlow {
 public:
  /// Samples the flow-invariant measure: base point from the map's
  /// invariant measure, fiber uniform.
  SuspensionFlow(const MixingFlowModel& m, std::uint64_t seed)
      : model_(m), orbit_(sample_orbit(m, derive_seed(seed, 0, 1))) {
    fiber_ = Rng(derive_seed(seed, 0, 2)).uniform();
  }
  SuspensionFlow(const MixingFlowModel& m, AnyOrbit orbit, double fiber)
      : model_(m), orbit_(std::move(orbit)), fiber_(fiber) {
    if (!(fiber >= 0.0 && fiber < 1.0)) throw DomainError("fiber coordinate outside [0, 1)");
  }

  const MixingFlowModel& model() const { return model_; }
  double fiber() const { return fiber_; }
  Point point() const {
    return std::visit([](const auto& o) { return o.point(); }, orbit_);
  }

  template <class F>
  double eval(F&& f) const {
    return f(point());
  }

  void evolve(double t) {
    if (t < 0.0) throw DomainError("evolve: negative time");
    const double s = fiber_ + t;
    const double whole = std::floor(s);
    fiber_ = s - whole;
    const auto n = static_cast<long long>(whole);
    std::visit(
        [n](auto& o) {
          for (long long i = 0; i < n; ++i) o.step();
        },
        orbit_);
  }

  /// Integral of f along the flow over [0, T]; advances the state to T,
  /// so consecutive calls add up to the integral over the concatenation.
  template <class F>
  double birkhoff_integral(F&& f, double T) {
    if (!(T >= 0.0)) throw DomainError("birkhoff_integral: T must be >= 0");
    return std::visit(
        [&](auto& o) {
          double sum = 0.0;
          double left = T;
          while (left > 0.0) {
            const double piece = std::min(left, 1.0 - fiber_);
            sum += piece * f(o.point());
            left -= piece;
            fiber_ += piece;
            if (fiber_ >= 1.0) {
              fiber_ = 0.0;
              o.step();
            }
          }
          return sum;
        },
        orbit_);
  }

  template <class Fn>
  decltype(auto) visit_orbit(Fn&& fn) {
    return std::visit(std::forward<Fn>(fn), orbit_);
  }

 private:
  MixingFlowModel model_;
  AnyOrbit orbit_;
  double fiber_ = 0.0;
};

struct CorrelationEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long n_samples = 0;
};

/// Monte Carlo estimate of the integral of f1 . f2 o g_t minus the product
/// of the means, from independent invariant samples.
template <class F1, class F2>
CorrelationEstimate correlation_estimate(const MixingFlowModel& m, F1&& f1, F2&& f2, double t,
                                         long n_samples, std::uint64_t seed) {
  if (n_samples < 1000) throw InsufficientDataError("correlation_estimate: n_samples < 1000");
  if (!(t >= 0.0)) throw DomainError("correlation_estimate: t must be >= 0");
  std::vector<double> a(n_samples), b(n_samples);
  for (long i = 0; i < n_samples; ++i) {
    SuspensionFlow flow(m, derive_seed(seed, static_cast<std::uint64_t>(i), 3));
    a[i] = flow.eval(f1);
    flow.evolve(t);
    b[i] = flow.eval(f2);
  }
  double ma = 0.0, mb = 0.0;
  for (long i = 0; i < n_samples; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n_samples;
  mb /= n_samples;
  double mean = 0.0;
  for (long i = 0; i < n_samples; ++i) mean += (a[i] - ma) * (b[i] - mb);
  mean /= n_samples;
  double var = 0.0;
  for (long i = 0; i < n_samples; ++i) {
    const double d = (a[i] - ma) * (b[i] - mb) - mean;
    var += d * d;
  }
  var /= (n_samples - 1);
  return {mean, std::sqrt(var / n_samples), n_samples};
}

/// Fits log|c(t)| against t over the estimates that are resolved (more than
/// three standard errors from zero). The decay rate is -slope.
inline ScalingFit fit_exponential_decay(std::span<const double> t,
                                        std::span<const CorrelationEstimate> c) {
  std::vector<double> u, v;
  for (std::size_t i = 0; i < t.size() && i < c.size(); ++i) {
    if (std::abs(c[i].value) > 3.0 * c[i].std_error && c[i].value != 0.0) {
      u.push_back(t[i]);
      v.push_back(std::log(std::abs(c[i].value)));
    }
  }
  return fit_linear(u, v);
}

/// Closed form of the double integral of (1 + |t - s|)^(-C) over [0, T]^2,
///   2 [ (T+1) ((1+T)^(1-C) - 1)/(1-C) - ((1+T)^(2-C) - 1)/(2-C) ],
/// with the logarithmic limits at C = 1 and C = 2. expm1 keeps the
/// quotients accurate as C approaches either limit.
inline double closed_form_double_integral(double C, double T) {
  if (!(C > 0.0) || !(T > 0.0)) throw DomainError("closed_form_double_integral: need C > 0, T > 0");
  const double L = std::log1p(T);
  auto ratio = [L](double e) { return e == 0.0 ? L : std::expm1(e * L) / e; };
  return 2.0 * ((T + 1.0) * ratio(1.0 - C) - ratio(2.0 - C));
}

/// Leading growth of Var(integral of F over [0, T]) allowed by the rate model.
inline double variance_normalizer(const RateModel& rate, double T) {
  if (rate.style == RateStyle::exponential) return T;
  return closed_form_double_integral(rate.C, T);
}

inline std::string variance_regime(const RateModel& rate) {
  if (rate.style == RateStyle::exponential) return "exponential";
  if (rate.C > 1.0) return "polynomial_C>1";
  if (rate.C == 1.0) return "polynomial_C=1";
  return "polynomial_C<1";
}

/// Upper slope of log Var vs log T permitted by the rate model (before the
/// +0.1 slack for logarithmic factors).
inline double variance_exponent(const RateModel& rate) {
  if (rate.style == RateStyle::exponential || rate.C >= 1.0) return 1.0;
  return 2.0 - rate.C;
}

struct VarianceRow {
  double T = 0.0;
  double empirical_variance = 0.0;
  double bound_value = 0.0;
  std::string regime;
};

struct VarianceGrowth {
  ScalingFit fit;
  double Q = 0.0;  // fitted constant: max over the grid of Var / normalizer
  double exponent = 1.0;
  std::vector<VarianceRow> rows;
};

/// Variance over independent invariant orbits of the Birkhoff integral of
/// f up to each T in the grid, and its log-log growth rate.
template <class F>
VarianceGrowth variance_growth_experiment(const MixingFlowModel& m, F&& f,
                                          std::vector<double> T_grid, int n_orbits,
                                          std::uint64_t seed, unsigned workers = 1) {
  std::sort(T_grid.begin(), T_grid.end());
  if (T_grid.size() < 3 || !(T_grid.front() > 0.0) || T_grid.back() < 100.0 * T_grid.front() * (1.0 - 1e-9)) {
    throw InsufficientDataError("variance_growth_experiment: T grid must span two decades");
  }
  if (n_orbits < 10) throw InsufficientDataError("variance_growth_experiment: n_orbits < 10");
  const auto sums = parallel_map(static_cast<std::size_t>(n_orbits), workers, [&](std::size_t i) {
    SuspensionFlow flow(m, derive_seed(seed, i, 4));
    std::vector<double> out(T_grid.size());
    double acc = 0.0, t = 0.0;
    for (std::size_t k = 0; k < T_grid.size(); ++k) {
      acc += flow.birkhoff_integral(f, T_grid[k] - t);
      t = T_grid[k];
      out[k] = acc;
    }
    return out;
  });
  VarianceGrowth vg;
  vg.exponent = variance_exponent(m.rate);
  std::vector<double> lt, lv;
  for (std::size_t k = 0; k < T_grid.size(); ++k) {
    double mean = 0.0;
    for (const auto& s : sums) mean += s[k];
    mean /= n_orbits;
    double var = 0.0;
    for (const auto& s : sums) var += (s[k] - mean) * (s[k] - mean);
    var /= (n_orbits - 1);
    vg.rows.push_back({T_grid[k], var, 0.0, variance_regime(m.rate)});
    vg.Q = std::max(vg.Q, var / variance_normalizer(m.rate, T_grid[k]));
    lt.push_back(std::log(T_grid[k]));
    lv.push_back(std::log(var));
  }
  for (auto& row : vg.rows) row.bound_value = vg.Q * variance_normalizer(m.rate, row.T);
  vg.fit = fit_linear(lt, lv);
  return vg;
}

inline void write_variance_csv(std::ostream& os, const VarianceGrowth& vg) {
  os << "T,empirical_variance,bound_value,regime\n";
  char buf[128];
  for (const auto& r : vg.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,", r.T, r.empirical_variance, r.bound_value);
    os << buf << r.regime << '\n';
  }
}

/// Trapezoid bumps on the circle: member R equals 1 within 1/(4R) of the
/// centre and falls linearly to 0 at 1/(2R). Its L1 norm is 3/(4R) and its
/// Holder-theta norm (sup plus seminorm) is 1 + (4R)^theta.
class BumpFamily {
 public:
  explicit BumpFamily(double theta, double center = 0.3) : theta_(theta), center_(center) {
    if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("bump family needs theta in (0, 1]");
    if (!(center >= 0.0 && center < 1.0)) throw ConfigError("bump centre outside [0, 1)");
  }
  /// The constant family f_R = 1 (a control case).
  static BumpFamily constant() {
    BumpFamily b(1.0);
    b.constant_ = true;
    return b;
  }

  bool is_constant() const { return constant_; }
  double theta() const { return theta_; }
  double center() const { return center_; }
  /// Constant h with L1 in [1/(hR), h/R] and Holder norm <= h R^theta, R >= 1.
  double h() const { return 1.0 + std::pow(4.0, theta_); }

  double circle_distance(double x) const {
    const double d = std::abs(x - center_);
    return std::min(d, 1.0 - d);
  }
  double value(double R, double x) const {
    if (constant_) return 1.0;
    return std::clamp(2.0 - 4.0 * R * circle_distance(x), 0.0, 1.0);
  }
  double l1_norm(double R) const { return constant_ ? 1.0 : 0.75 / R; }
  double holder_norm(double R) const { return constant_ ? 1.0 : 1.0 + std::pow(4.0 * R, theta_); }

 private:
  double theta_;
  double center_;
  bool constant_ = false;
};

struct EffectiveAverageConfig {
  double alpha = 0.6;
  double m = 2.0;
  double xi = 0.2;
  int k_max = 21;
  int k0 = 20;              // acceptance threshold on schedule indices
  int subdivisions = 16;    // minimum certificate sub-intervals per schedule interval

  double schedule_exponent() const { return 2.0 * alpha / (2.0 * alpha - 1.0); }
  double T(int k) const { return std::pow(static_cast<double>(k), schedule_exponent()); }
  /// Sub-intervals of [T_k, T_{k+1}); each spans a time ratio of at most
  /// 1 + (m - 1)/4, so a flat sum never fails the certificate by itself.
  int certificate_points(int k) const {
    const double need = std::log(T(k + 1) / T(k)) / std::log1p((m - 1.0) / 4.0);
    return std::max(subdivisions, static_cast<int>(std::ceil(need - 1e-9)));
  }
  /// Family index used on [T_k, T_{k+1}).
  long n_of_k(int k) const {
    return std::max(1L, static_cast<long>(std::ceil(std::pow(T(k), xi) - 1e-12)));
  }
};

/// Checks the config against its own invariants and the flow's rate model.
/// The polynomial gate is alpha > min(1/2, 1 - C/2).
inline void validate(const EffectiveAverageConfig& c, const RateModel& rate, double theta) {
  if (!(c.alpha > 0.5 && c.alpha < 1.0)) throw ConfigError("effective average: alpha must lie in (1/2, 1)");
  if (!(c.m > 1.0)) throw ConfigError("effective average: m must exceed 1");
  if (!(c.xi > 0.0)) throw ConfigError("effective average: xi must be positive");
  if (!(c.xi < (1.0 - c.alpha) / (1.0 + theta))) {
    throw ConfigError("effective average: xi must be below (1 - alpha)/(1 + theta)");
  }
  if (c.k_max < 2 || c.k0 < 1 || c.subdivisions < 1) {
    throw ConfigError("effective average: need k_max >= 2, k0 >= 1, subdivisions >= 1");
  }
  if (rate.style == RateStyle::polynomial) {
    const double gate = std::min(0.5, 1.0 - rate.C / 2.0);
    if (!(c.alpha > gate)) {
      std::ostringstream os;
      os << "effective average: alpha = " << c.alpha << " fails alpha > min(1/2, 1 - C/2) = " << gate;
      throw ConfigError(os.str());
    }
  }
}

/// Birkhoff sums of f_{n(T_k)} at the certificate points of one orbit.
struct SandwichOrbit {
  std::vector<std::vector<double>> sums;  // [k-1][j], j = 0..certificate_points(k)
};

struct SandwichOrbitResult {
  std::vector<int> failing_k;
  int largest_failing_k = 0;
};

struct SandwichReport {
  std::vector<SandwichOrbitResult> orbits;
  double fraction_clean_beyond_k0 = 0.0;
  int n_orbits = 0;
  double m = 0.0;
  int k0 = 0;
  int k_max = 0;
  bool variance_summability = true;  // alpha > 1 - C/2 (polynomial case)
  int first_informative_k = 0;
};

namespace detail {

inline double certificate_time(const EffectiveAverageConfig& c, int k, int j, int n) {
  const double a = c.T(k), b = c.T(k + 1);
  if (j == n) return b;
  return a * std::pow(b / a, static_cast<double>(j) / n);
}

}  // namespace detail

/// Runs one orbit of the flow (base point invariant, fiber 0) to
/// T_{k_max + 1} and records the Birkhoff sums needed by the certificate.
inline SandwichOrbit sandwich_orbit_sums(const MixingFlowModel& model, const BumpFamily& fam,
                                         const EffectiveAverageConfig& c, std::uint64_t seed) {
  struct Check {
    double t;
    int k, j, slot;
  };
  std::vector<long> ns;
  for (int k = 1; k <= c.k_max; ++k) ns.push_back(c.n_of_k(k));
  std::vector<long> distinct = ns;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<Check> checks;
  for (int k = 1; k <= c.k_max; ++k) {
    const int slot = static_cast<int>(
        std::lower_bound(distinct.begin(), distinct.end(), ns[k - 1]) - distinct.begin());
    const int n = c.certificate_points(k);
    for (int j = 0; j <= n; ++j) checks.push_back({detail::certificate_time(c, k, j, n), k, j, slot});
  }
  std::sort(checks.begin(), checks.end(), [](const Check& a, const Check& b) { return a.t < b.t; });

  SandwichOrbit out;
  out.sums.resize(c.k_max);
  for (int k = 1; k <= c.k_max; ++k) out.sums[k - 1].assign(c.certificate_points(k) + 1, 0.0);
  std::vector<double> R(distinct.begin(), distinct.end());

  // Every bump is piecewise linear in the circle distance d with kinks at
  // 1/(4R) and 1/(2R). Binning d at all kinks and keeping the count and the
  // sum of d per bin reproduces every Birkhoff sum exactly at checkpoints.
  std::vector<double> edges{0.0, 0.5};
  for (double r : R) {
    edges.push_back(std::min(0.5, 0.25 / r));
    edges.push_back(std::min(0.5, 0.5 / r));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  const std::size_t nbins = edges.size() - 1;
  double min_gap = 0.5;
  for (std::size_t b = 0; b < nbins; ++b) min_gap = std::min(min_gap, edges[b + 1] - edges[b]);
  std::size_t ncells = 1;
  while (ncells < (std::size_t{1} << 22) && 0.5 / static_cast<double>(ncells) > 0.5 * min_gap) ncells <<= 1;
  const double cell_scale = 2.0 * static_cast<double>(ncells);
  std::vector<std::uint32_t> cell_bin(ncells);
  for (std::size_t i = 0, b = 0; i < ncells; ++i) {
    const double lo = static_cast<double>(i) / cell_scale;
    while (b + 1 < nbins && lo >= edges[b + 1]) ++b;
    cell_bin[i] = static_cast<std::uint32_t>(b);
  }
  edges.push_back(std::numeric_limits<double>::infinity());

  // Per bin and bump, value = A + B d.
  std::vector<double> A(nbins * R.size()), B(nbins * R.size());
  for (std::size_t b = 0; b < nbins; ++b) {
    const double mid = 0.5 * (edges[b] + edges[b + 1]);
    for (std::size_t s = 0; s < R.size(); ++s) {
      double a = 0.0, bb = 0.0;
      if (fam.is_constant() || mid < 0.25 / R[s]) {
        a = 1.0;
      } else if (mid < 0.5 / R[s]) {
        a = 2.0;
        bb = -4.0 * R[s];
      }
      A[b * R.size() + s] = a;
      B[b * R.size() + s] = bb;
    }
  }
  std::vector<double> count(nbins, 0.0), dsum(nbins, 0.0);
  auto slot_sum = [&](std::size_t s) {
    double acc = 0.0;
    for (std::size_t b = 0; b < nbins; ++b) {
      acc += A[b * R.size() + s] * count[b] + B[b * R.size() + s] * dsum[b];
    }
    return acc;
  };

  AnyOrbit orbit = sample_orbit(model, seed);
  std::visit(
      [&](auto& o) {
        std::size_t next = 0;
        for (long long i = 0; next < checks.size(); ++i) {
          const double x = o.x();
          const double d = fam.circle_distance(x);
          const double t_end = static_cast<double>(i + 1);
          while (next < checks.size() && checks[next].t <= t_end) {
            const auto& ck = checks[next];
            const double frac = ck.t - static_cast<double>(i);
            out.sums[ck.k - 1][ck.j] = slot_sum(ck.slot) + frac * fam.value(R[ck.slot], x);
            ++next;
          }
          const auto cell = std::min<std::size_t>(static_cast<std::size_t>(d * cell_scale), ncells - 1);
          std::size_t b = cell_bin[cell];
          while (d >= edges[b + 1]) ++b;
          count[b] += 1.0;
          dsum[b] += d;
          o.step();
        }
      },
      orbit);
  return out;
}

/// Direct per-step accumulation of the same sums, without binning. Slower;
/// kept as a cross-check of the binned path.
inline SandwichOrbit sandwich_orbit_sums_direct(const MixingFlowModel& model, const BumpFamily& fam,
                                                const EffectiveAverageConfig& c, std::uint64_t seed) {
  SandwichOrbit out;
  out.sums.resize(c.k_max);
  for (int k = 1; k <= c.k_max; ++k) out.sums[k - 1].assign(c.certificate_points(k) + 1, 0.0);
  std::vector<std::pair<double, std::pair<int, int>>> checks;
  for (int k = 1; k <= c.k_max; ++k) {
    const int n = c.certificate_points(k);
    for (int j = 0; j <= n; ++j) checks.push_back({detail::certificate_time(c, k, j, n), {k, j}});
  }
  std::sort(checks.begin(), checks.end());
  std::vector<double> acc(c.k_max, 0.0);
  AnyOrbit orbit = sample_orbit(model, seed);
  std::visit(
      [&](auto& o) {
        std::size_t next = 0;
        for (long long i = 0; next < checks.size(); ++i) {
          const double x = o.x();
          const double t_end = static_cast<double>(i + 1);
          while (next < checks.size() && checks[next].first <= t_end) {
            const auto [k, j] = checks[next].second;
            const double R = static_cast<double>(c.n_of_k(k));
            out.sums[k - 1][j] = acc[k - 1] + (checks[next].first - static_cast<double>(i)) * fam.value(R, x);
            ++next;
          }
          for (int k = 1; k <= c.k_max; ++k) acc[k - 1] += fam.value(static_cast<double>(c.n_of_k(k)), x);
          o.step();
        }
      },
      orbit);
  return out;
}

/// Applies the sandwich bounds to recorded sums. On each sub-interval
/// [tau_j, tau_{j+1}] of [T_k, T_{k+1}] the Birkhoff sum S is non-decreasing,
/// the upper bound U is increasing and the lower bound L is convex, so
///   S(tau_j) >= max(L(tau_j), L(tau_{j+1}))  and  S(tau_{j+1}) <= U(tau_j)
/// certify both bounds on the whole sub-interval. A k is reported failing
/// when either certificate fails somewhere in its interval. The sub-grid is
/// the one the sums were recorded on, so c.m may differ from the recording.
inline SandwichOrbitResult evaluate_sandwich(const SandwichOrbit& orbit, const BumpFamily& fam,
                                             const EffectiveAverageConfig& c) {
  SandwichOrbitResult res;
  for (int k = 1; k <= c.k_max; ++k) {
    const double R = static_cast<double>(c.n_of_k(k));
    const double l1 = fam.l1_norm(R), hn = fam.holder_norm(R);
    auto L = [&](double T) { return T * l1 / c.m - 2.0 * std::pow(T, c.alpha) * hn; };
    auto U = [&](double T) { return c.m * T * l1 + 2.0 * std::pow(T, c.alpha) * hn; };
    const auto& s = orbit.sums[k - 1];
    bool ok = true;
    for (int j = 0; j + 1 < static_cast<int>(s.size()) && ok; ++j) {
      const int n = static_cast<int>(s.size()) - 1;
      const double ta = detail::certificate_time(c, k, j, n);
      const double tb = detail::certificate_time(c, k, j + 1, n);
      ok = s[j] >= std::max(L(ta), L(tb)) && s[j + 1] <= U(ta);
    }
    if (!ok) {
      res.failing_k.push_back(k);
      res.largest_failing_k = k;
    }
  }
  return res;
}

/// Smallest k <= k_max at which the lower bound is positive at T_k, or 0
/// when the error term dominates on the whole schedule (then only the upper
/// bound can fail).
inline int first_informative_k(const BumpFamily& fam, const EffectiveAverageConfig& c) {
  for (int k = 1; k <= c.k_max; ++k) {
    const double R = static_cast<double>(c.n_of_k(k)), T = c.T(k);
    if (T * fam.l1_norm(R) / c.m > 2.0 * std::pow(T, c.alpha) * fam.holder_norm(R)) return k;
  }
  return 0;
}

inline SandwichReport summarize_sandwich(const std::vector<SandwichOrbit>& orbits,
                                         const BumpFamily& fam, const EffectiveAverageConfig& c,
                                         const RateModel& rate) {
  SandwichReport rep;
  rep.n_orbits = static_cast<int>(orbits.size());
  rep.m = c.m;
  rep.k0 = c.k0;
  rep.k_max = c.k_max;
  rep.variance_summability = rate.style == RateStyle::exponential || c.alpha > 1.0 - rate.C / 2.0;
  rep.first_informative_k = first_informative_k(fam, c);
  int clean = 0;
  for (const auto& o : orbits) {
    rep.orbits.push_back(evaluate_sandwich(o, fam, c));
    if (rep.orbits.back().largest_failing_k < c.k0) ++clean;
  }
  rep.fraction_clean_beyond_k0 = orbits.empty() ? 0.0 : static_cast<double>(clean) / orbits.size();
  return rep;
}

/// Effective ergodic sandwich along the schedule T_k for n_orbits
/// independent invariant orbits. Returns the recorded sums as well so that
/// other slack factors m can be evaluated without re-running orbits.
inline std::pair<SandwichReport, std::vector<SandwichOrbit>> effective_sandwich_experiment(
    const MixingFlowModel& model, const BumpFamily& fam, const EffectiveAverageConfig& c,
    int n_orbits, std::uint64_t seed, unsigned workers = 1) {
  validate(c, model.rate, fam.theta());
  if (n_orbits < 1) throw InsufficientDataError("effective_sandwich_experiment: n_orbits < 1");
  auto sums = parallel_map(static_cast<std::size_t>(n_orbits), workers, [&](std::size_t i) {
    return sandwich_orbit_sums(model, fam, c, derive_seed(seed, i, 5));
  });
  auto rep = summarize_sandwich(sums, fam, c, model.rate);
  return {std::move(rep), std::move(sums)};
}

inline void to_json(nlohmann::json& j, const SandwichReport& r) {
  nlohmann::json orbits = nlohmann::json::array();
  for (const auto& o : r.orbits) {
    orbits.push_back({{"failing_k", o.failing_k}, {"largest_failing_k", o.largest_failing_k}});
  }
  j = nlohmann::json{{"n_orbits", r.n_orbits},
                     {"m", r.m},
                     {"k0", r.k0},
                     {"k_max", r.k_max},
                     {"fraction_clean_beyond_k0", r.fraction_clean_beyond_k0},
                     {"variance_summability", r.variance_summability},
                     {"first_informative_k", r.first_informative_k},
                     {"orbits", orbits}};
}

}  // namespace cuspflow
