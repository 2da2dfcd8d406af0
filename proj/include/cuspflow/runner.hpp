#pragma once

// Experiment configuration, check suites and report handling behind the
// command-line tool.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include "cuspflow/errors.hpp"
#include "cuspflow/excursion.hpp"
#include "cuspflow/geometry.hpp"
#include "cuspflow/mixing.hpp"
#include "cuspflow/montecarlo.hpp"
#include "cuspflow/parallel.hpp"
#include "cuspflow/rng.hpp"

namespace cuspflow {

using json = nlohmann::json;

struct SurfaceConfig {
  std::vector<double> r{2.5, 3.0, 4.0};
  double x_max = 1.0;
  double tol = 1e-10;  // integrator tolerance
};

struct ExcursionConfig {
  int n_random = 1000;  // random excursions per r, b log-uniform on [b_min, b_max]
  double b_min = 1e-6;
  double b_max = 0.5;
  double D_min = 10.0;  // winding ensemble
  double D_max = 1e4;
  int n_winding = 31;
};

struct MixingConfig {
  std::string kind = "doubling";  // flow used for the sandwich
  double map_alpha = 0.5;         // intermittency exponent when kind = intermittent
  double theta = 0.5;
  double alpha = 0.6;
  double m = 2.0;
  double xi = 0.2;
  int k_max = 21;
  int k0 = 20;
  int n_orbits = 200;
  double variance_T_min = 1e3;
  double variance_T_max = 1e5;
  int variance_orbits = 2000;
  int variance_orbits_heavy = 8000;  // for the C > 1 intermittent map
};

struct MonteCarloConfig {
  double T_min = 1e3;
  double T_max = 1e6;
  int per_decade = 20;
  int n_trajectories = 100;
  double mu_gap = 1.0;
  std::string gap_law = "exponential";
  std::string source = "renewal";
  double pareto_shape = 1.5;
  double epsilon = 0.1;
  double c = 10.0;
  int sensitivity_trajectories = 20;
};

struct ExperimentConfig {
  std::string suite = "all";
  std::uint64_t seed = 20240611;
  unsigned workers = 0;  // 0: one per hardware thread
  std::string output_dir = "cuspflow_out";
  SurfaceConfig surface;
  ExcursionConfig excursion;
  MixingConfig mixing;
  MonteCarloConfig montecarlo;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"geometry", "excursion", "mixing", "montecarlo"};
  return names;
}

namespace detail {

/// Reads an object field by field and rejects keys nobody asked for.
class StrictReader {
 public:
  StrictReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where("") + "must be an object");
  }

  void number(const char* key, double& out) {
    if (auto* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "must be a number");
      out = v->get<double>();
    }
  }
  void integer(const char* key, int& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "must be an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(where(key) + "out of range");
      }
      out = static_cast<int>(x);
    }
  }
  void u64(const char* key, std::uint64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        throw ConfigError(where(key) + "must be a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void string(const char* key, std::string& out) {
    if (auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "must be a string");
      out = v->get<std::string>();
    }
  }
  void workers(const char* key, unsigned& out) {
    if (auto* v = find(key)) {
      if (v->is_string() && v->get<std::string>() == "auto") {
        out = 0;
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0 && v->get<std::int64_t>() <= 4096) {
        out = static_cast<unsigned>(v->get<std::int64_t>());
      } else {
        throw ConfigError(where(key) + "must be \"auto\" or an integer in [0, 4096]");
      }
    }
  }
  void numbers(const char* key, std::vector<double>& out) {
    if (auto* v = find(key)) {
      if (v->is_number()) {
        out = {v->get<double>()};
        return;
      }
      if (!v->is_array() || v->empty()) throw ConfigError(where(key) + "must be a number or a non-empty array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) throw ConfigError(where(key) + "entries must be numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  template <class Fn>
  void object(const char* key, Fn&& fn) {
    if (auto* v = find(key)) {
      StrictReader sub(*v, path_ + key + ".");
      fn(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path_ + it.key() + "'");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const char* key) const { return "config field '" + path_ + key + "' "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Overlays a JSON document on the defaults. Unknown keys and wrong types
/// are config errors; values are checked by validate().
inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  detail::StrictReader rd(j, "");
  rd.string("suite", c.suite);
  rd.u64("seed", c.seed);
  rd.workers("workers", c.workers);
  rd.string("output_dir", c.output_dir);
  rd.object("surface", [&](detail::StrictReader& s) {
    s.numbers("r", c.surface.r);
    s.number("x_max", c.surface.x_max);
    s.number("tol", c.surface.tol);
  });
  rd.object("excursion", [&](detail::StrictReader& s) {
    auto& e = c.excursion;
    s.integer("n_random", e.n_random);
    s.number("b_min", e.b_min);
    s.number("b_max", e.b_max);
    s.number("D_min", e.D_min);
    s.number("D_max", e.D_max);
    s.integer("n_winding", e.n_winding);
  });
  rd.object("mixing", [&](detail::StrictReader& s) {
    auto& m = c.mixing;
    s.string("kind", m.kind);
    s.number("map_alpha", m.map_alpha);
    s.number("theta", m.theta);
    s.number("alpha", m.alpha);
    s.number("m", m.m);
    s.number("xi", m.xi);
    s.integer("k_max", m.k_max);
    s.integer("k0", m.k0);
    s.integer("n_orbits", m.n_orbits);
    s.number("variance_T_min", m.variance_T_min);
    s.number("variance_T_max", m.variance_T_max);
    s.integer("variance_orbits", m.variance_orbits);
    s.integer("variance_orbits_heavy", m.variance_orbits_heavy);
  });
  rd.object("montecarlo", [&](detail::StrictReader& s) {
    auto& m = c.montecarlo;
    s.number("T_min", m.T_min);
    s.number("T_max", m.T_max);
    s.integer("per_decade", m.per_decade);
    s.integer("n_trajectories", m.n_trajectories);
    s.number("mu_gap", m.mu_gap);
    s.string("gap_law", m.gap_law);
    s.string("source", m.source);
    s.number("pareto_shape", m.pareto_shape);
    s.number("epsilon", m.epsilon);
    s.number("c", m.c);
    s.integer("sensitivity_trajectories", m.sensitivity_trajectories);
  });
  rd.finish();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Canonical form. With `include_run` false the run-only fields (workers,
/// output_dir) are omitted, which is what reports embed.
inline json serialize_config(const ExperimentConfig& c, bool include_run = true) {
  json j{{"suite", c.suite},
         {"seed", c.seed},
         {"surface", {{"r", c.surface.r}, {"x_max", c.surface.x_max}, {"tol", c.surface.tol}}},
         {"excursion",
          {{"n_random", c.excursion.n_random},
           {"b_min", c.excursion.b_min},
           {"b_max", c.excursion.b_max},
           {"D_min", c.excursion.D_min},
           {"D_max", c.excursion.D_max},
           {"n_winding", c.excursion.n_winding}}},
         {"mixing",
          {{"kind", c.mixing.kind},
           {"map_alpha", c.mixing.map_alpha},
           {"theta", c.mixing.theta},
           {"alpha", c.mixing.alpha},
           {"m", c.mixing.m},
           {"xi", c.mixing.xi},
           {"k_max", c.mixing.k_max},
           {"k0", c.mixing.k0},
           {"n_orbits", c.mixing.n_orbits},
           {"variance_T_min", c.mixing.variance_T_min},
           {"variance_T_max", c.mixing.variance_T_max},
           {"variance_orbits", c.mixing.variance_orbits},
           {"variance_orbits_heavy", c.mixing.variance_orbits_heavy}}},
         {"montecarlo",
          {{"T_min", c.montecarlo.T_min},
           {"T_max", c.montecarlo.T_max},
           {"per_decade", c.montecarlo.per_decade},
           {"n_trajectories", c.montecarlo.n_trajectories},
           {"mu_gap", c.montecarlo.mu_gap},
           {"gap_law", c.montecarlo.gap_law},
           {"source", c.montecarlo.source},
           {"pareto_shape", c.montecarlo.pareto_shape},
           {"epsilon", c.montecarlo.epsilon},
           {"c", c.montecarlo.c},
           {"sensitivity_trajectories", c.montecarlo.sensitivity_trajectories}}}};
  if (include_run) {
    j["workers"] = c.workers;
    j["output_dir"] = c.output_dir;
  }
  return j;
}

namespace detail {

inline MixingFlowModel sandwich_flow(const MixingConfig& m) {
  const auto kind = parse_flow_kind(m.kind);
  return kind == FlowKind::intermittent ? create_flow(kind, m.map_alpha) : create_flow(kind);
}

inline EffectiveAverageConfig effective_config(const MixingConfig& m) {
  EffectiveAverageConfig e;
  e.alpha = m.alpha;
  e.m = m.m;
  e.xi = m.xi;
  e.k_max = m.k_max;
  e.k0 = m.k0;
  return e;
}

inline ReturnProcess return_process(const MonteCarloConfig& m) {
  ReturnProcess p;
  p.gap_law = parse_gap_law(m.gap_law);
  p.source = parse_return_source(m.source);
  p.mu_gap = m.mu_gap;
  p.pareto_shape = m.pareto_shape;
  return p;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail

/// Checks every field against the invariants of the module that owns it.
inline void validate(const ExperimentConfig& c) {
  using detail::require;
  const auto& names = suite_names();
  require(c.suite == "all" || std::find(names.begin(), names.end(), c.suite) != names.end(),
          "suite must be one of geometry, excursion, mixing, montecarlo, all (got '" + c.suite + "')");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(!c.surface.r.empty(), "surface.r must list at least one exponent");
  for (double r : c.surface.r) ProfileSurface probe(r, c.surface.x_max);
  require(c.surface.tol >= 1e-13 && c.surface.tol <= 1e-6, "surface.tol must lie in [1e-13, 1e-6]");

  const auto& e = c.excursion;
  require(e.n_random >= 10, "excursion.n_random must be >= 10");
  require(e.b_min > 0.0 && e.b_min < e.b_max && e.b_max < 1.0, "excursion needs 0 < b_min < b_max < 1");
  require(e.D_min > 0.0 && e.D_max >= 100.0 * e.D_min, "excursion D range must span two decades");
  require(e.n_winding >= 3, "excursion.n_winding must be >= 3");
  for (double r : c.surface.r) {
    ProfileSurface s(r, c.surface.x_max);
    require(1.0 / e.D_min < s.delta0(), "excursion.D_min must exceed 1/delta0 so every depth lies below the entry level");
  }

  const auto& m = c.mixing;
  const auto flow = detail::sandwich_flow(m);
  BumpFamily fam(m.theta);
  validate(detail::effective_config(m), flow.rate, m.theta);
  require(m.n_orbits >= 1, "mixing.n_orbits must be >= 1");
  require(m.variance_T_min > 0.0 && m.variance_T_max >= 100.0 * m.variance_T_min,
          "mixing variance grid must span two decades");
  require(m.variance_orbits >= 10 && m.variance_orbits_heavy >= 10, "mixing variance orbit counts must be >= 10");

  const auto& mc = c.montecarlo;
  require(mc.T_min > 0.0 && mc.T_max >= 1000.0 * mc.T_min * (1.0 - 1e-12),
          "montecarlo checkpoints must span three decades (T_max >= 1000 T_min)");
  require(mc.per_decade >= 1, "montecarlo.per_decade must be >= 1");
  require(mc.n_trajectories >= 1, "montecarlo.n_trajectories must be >= 1");
  require(mc.sensitivity_trajectories >= 0, "montecarlo.sensitivity_trajectories must be >= 0");
  validate(detail::return_process(mc));
  validate(AcceptanceWindow{mc.epsilon, mc.c});
}

/// One acceptance check inside a suite report.
struct Criterion {
  int criterion = 0;  // acceptance criterion number the check belongs to
  std::string name;
  std::string anchor;  // the law being checked
  double measured = 0.0;
  std::string bound;
  bool pass = false;
};

inline void to_json(json& j, const Criterion& c) {
  j = json{{"criterion", c.criterion}, {"name", c.name},   {"anchor", c.anchor},
           {"measured", c.measured},   {"bound", c.bound}, {"pass", c.pass}};
}

inline void from_json(const json& j, Criterion& c) {
  j.at("criterion").get_to(c.criterion);
  j.at("name").get_to(c.name);
  j.at("anchor").get_to(c.anchor);
  j.at("measured").get_to(c.measured);
  j.at("bound").get_to(c.bound);
  j.at("pass").get_to(c.pass);
}

struct SuiteResult {
  std::string suite;
  std::vector<Criterion> criteria;
  json details = json::object();
  std::map<std::string, std::string> artifacts;  // file name -> contents

  bool all_pass() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.pass; });
  }
  json report(const ExperimentConfig& cfg) const {
    return json{{"suite", suite},
                {"config", serialize_config(cfg, false)},
                {"criteria", criteria},
                {"details", details},
                {"all_pass", all_pass()}};
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline std::string r_tag(double r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline Criterion at_most(int n, std::string name, std::string anchor, double measured, double bound) {
  return {n, std::move(name), std::move(anchor), measured, "<= " + fmt(bound), measured <= bound};
}

inline Criterion at_least(int n, std::string name, std::string anchor, double measured, double bound) {
  return {n, std::move(name), std::move(anchor), measured, ">= " + fmt(bound), measured >= bound};
}

inline Criterion within(int n, std::string name, std::string anchor, double measured, double target, double tol) {
  return {n,        std::move(name),
          std::move(anchor), measured,
          "in [" + fmt(target - tol) + ", " + fmt(target + tol) + "]",
          std::abs(measured - target) <= tol};
}

inline std::uint64_t suite_seed(std::uint64_t seed, std::uint64_t suite_index) {
  return derive_seed(seed, suite_index, 100);
}

}  // namespace detail

/// Curvature law and the volume and level-length asymptotics.
inline SuiteResult run_geometry_suite(const ExperimentConfig& cfg) {
  SuiteResult res;
  res.suite = "geometry";
  for (double r : cfg.surface.r) {
    ProfileSurface s(r, cfg.surface.x_max);
    const std::string tag = "_r" + detail::r_tag(r);
    double worst_k = 0.0, k_at_1e4 = 0.0;
    const int n = 201;
    for (int i = 0; i < n; ++i) {
      const double d = 1e-4 * std::pow(100.0, static_cast<double>(i) / (n - 1));
      const double q = gaussian_curvature(s, inverse_cusp_distance(s, d)) * d * d / (r * (r - 1.0));
      worst_k = std::max(worst_k, std::abs(q + 1.0));
      if (i == 0) k_at_1e4 = q * r * (r - 1.0);
    }
    res.criteria.push_back(detail::at_most(1, "curvature_law" + tag, "K·δ² → −r(r−1)", worst_k, 0.05));

    double worst_v = 0.0, worst_l = 0.0;
    for (int i = 0; i < 21; ++i) {
      const double B = 1e-4 * std::pow(100.0, i / 20.0);
      const double lead_v = kTwoPi * std::pow(B, r + 1.0) / (r + 1.0);
      const double lead_l = kTwoPi * std::pow(B, r);
      worst_v = std::max(worst_v, std::abs(cusp_volume(s, B) / lead_v - 1.0));
      worst_l = std::max(worst_l, std::abs(level_length(s, B) / lead_l - 1.0));
    }
    res.criteria.push_back(
        detail::at_most(2, "volume_asymptotics" + tag, "vol{δ ≤ B} ~ 2πB^(r+1)/(r+1)", worst_v, 0.01));
    res.criteria.push_back(detail::at_most(2, "level_length_asymptotics" + tag, "ℓ(B) ~ 2πB^r", worst_l, 0.01));
    res.details["r" + detail::r_tag(r)] = {{"K_delta2_at_1e-4", k_at_1e4},
                                           {"max_curvature_deviation", worst_k},
                                           {"max_volume_ratio_deviation", worst_v},
                                           {"max_level_length_ratio_deviation", worst_l},
                                           {"delta0", s.delta0()},
                                           {"delta_max", s.delta_max()}};
  }
  return res;
}

namespace detail {

struct ExcursionSample {
  ExcursionRecord record;
  double clairaut_drift = 0.0;
  double speed_drift = 0.0;
  double depth_ratio = 1.0;
  Convexity convexity = Convexity::strict;
  double winding_identity_error = 0.0;
};

inline ExcursionSample run_checked_excursion(const ProfileSurface& s, double b, double tol) {
  const auto run = simulate_excursion_run(s, s.delta0(), b, tol);
  ExcursionSample out;
  out.record = run.record;
  out.clairaut_drift = run.trajectory.clairaut_drift;
  out.speed_drift = run.trajectory.speed_drift;
  out.depth_ratio = run.record.delta_min / predict_delta_min(s, s.delta0(), b);
  out.convexity = check_convexity(s, run.trajectory);
  const auto w = winding_identity_check(s, run.trajectory);
  out.winding_identity_error = std::abs(w.lhs - w.rhs) / std::max(std::abs(w.rhs), 1e-300);
  return out;
}

}  // namespace detail

/// ODE excursions: conservation, depth, exit time, convexity, winding
/// exponent, winding identity and the logarithm law.
inline SuiteResult run_excursion_suite(const ExperimentConfig& cfg) {
  SuiteResult res;
  res.suite = "excursion";
  const auto& ec = cfg.excursion;
  const double tol = cfg.surface.tol;
  const std::uint64_t seed = detail::suite_seed(cfg.seed, 1);
  for (std::size_t ri = 0; ri < cfg.surface.r.size(); ++ri) {
    const double r = cfg.surface.r[ri];
    ProfileSurface s(r, cfg.surface.x_max);
    const std::string tag = "_r" + detail::r_tag(r);

    Rng rng(derive_seed(seed, ri, 1));
    std::vector<double> bs(ec.n_random);
    const double l0 = std::log(ec.b_min), l1 = std::log(ec.b_max);
    for (auto& b : bs) b = std::exp(l0 + rng.uniform() * (l1 - l0));
    const auto random = parallel_map(bs.size(), cfg.workers,
                                     [&](std::size_t i) { return detail::run_checked_excursion(s, bs[i], tol); });

    std::vector<double> bw(ec.n_winding);
    for (int i = 0; i < ec.n_winding; ++i) {
      const double D = ec.D_min * std::pow(ec.D_max / ec.D_min, static_cast<double>(i) / (ec.n_winding - 1));
      bw[i] = entry_angle_for_depth(s, s.delta0(), 1.0 / D);
    }
    const auto winding = parallel_map(bw.size(), cfg.workers,
                                      [&](std::size_t i) { return detail::run_checked_excursion(s, bw[i], tol); });

    // Conservation is judged on the random ensemble; the winding ensemble
    // reaches b near 1e-16, where the drift is reported but not judged.
    double drift = 0.0, drift_winding = 0.0, depth = 0.0, duration = 0.0, wid = 0.0;
    long strict = 0, applicable = 0, singular = 0;
    std::vector<ExcursionRecord> all, wrec;
    for (const auto* set : {&random, &winding}) {
      double& d = set == &random ? drift : drift_winding;
      for (const auto& x : *set) {
        d = std::max({d, x.clairaut_drift, x.speed_drift});
        wid = std::max(wid, x.winding_identity_error);
        singular += x.record.flags.singular;
        all.push_back(x.record);
      }
    }
    for (const auto& x : random) {
      depth = std::max(depth, std::abs(x.depth_ratio - 1.0));
      duration = std::max(duration, x.record.duration / x.record.delta_entry);
      if (x.convexity != Convexity::not_applicable) {
        ++applicable;
        strict += x.convexity == Convexity::strict;
      }
    }
    for (const auto& x : winding) wrec.push_back(x.record);
    const auto wfit = winding_exponent_fit(wrec);
    const auto lfit = inverse_delta_functional(wrec);

    res.criteria.push_back(
        detail::at_most(3, "conservation" + tag, "Clairaut integral and speed conserved", drift, 1e-8));
    res.criteria.push_back(
        detail::at_most(4, "depth" + tag, "δ_min = δ(x_entry·b^(1/r))", depth, 0.02));
    res.criteria.push_back(detail::at_most(4, "exit_time" + tag, "duration ≤ 2.1·δ_entry", duration, 2.1));
    res.criteria.push_back(detail::at_least(4, "convexity" + tag, "t ↦ δ(t) strictly convex",
                                            applicable ? static_cast<double>(strict) / applicable : 0.0, 1.0));
    res.criteria.push_back(detail::within(5, "winding_exponent" + tag, "w ≍ D^(r−1)", wfit.slope, r - 1.0, 0.05));
    res.criteria.push_back(detail::at_most(5, "winding_identity" + tag, "Δτ = ∫ b/x^r dt", wid, 1e-6));
    if (r == 3.0) {
      res.criteria.push_back(detail::at_least(6, "log_law" + tag, "∫dt/δ linear in log D", lfit.r_squared, 0.99));
    }
    res.details["r" + detail::r_tag(r)] = {{"n_random", ec.n_random},
                                           {"n_winding", ec.n_winding},
                                           {"max_drift", drift},
                                           {"max_drift_winding_ensemble", drift_winding},
                                           {"min_b_winding_ensemble", bw.back()},
                                           {"max_depth_deviation", depth},
                                           {"max_duration_over_delta_entry", duration},
                                           {"convexity_strict", strict},
                                           {"convexity_applicable", applicable},
                                           {"singular", singular},
                                           {"max_winding_identity_error", wid},
                                           {"winding_fit", wfit},
                                           {"log_law_fit", lfit}};
    std::ostringstream csv;
    write_excursion_csv(csv, all);
    res.artifacts["excursions" + tag + ".csv"] = csv.str();
  }
  return res;
}

namespace detail {

inline double brute_double_integral(double C, double T) {
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [C](double t) {
    return gauss_kronrod<double, 61>::integrate([C, t](double u) { return std::pow(1.0 + t - u, -C); }, 0.0, t, 15,
                                                1e-13);
  };
  return 2.0 * gauss_kronrod<double, 61>::integrate(inner, 0.0, T, 15, 1e-13);
}

}  // namespace detail

/// Variance growth regimes, the closed-form normalizer and the effective
/// sandwich.
inline SuiteResult run_mixing_suite(const ExperimentConfig& cfg) {
  SuiteResult res;
  res.suite = "mixing";
  const auto& mc = cfg.mixing;
  const std::uint64_t seed = detail::suite_seed(cfg.seed, 2);
  auto cos2pi = [](Point p) { return std::cos(kTwoPi * p.x); };

  std::vector<double> grid;
  const int n_grid = static_cast<int>(std::lround(std::log10(mc.variance_T_max / mc.variance_T_min) * 4.0));
  for (int i = 0; i <= n_grid; ++i) {
    grid.push_back(mc.variance_T_min * std::pow(mc.variance_T_max / mc.variance_T_min, static_cast<double>(i) / n_grid));
  }
  struct Case {
    std::string name;
    MixingFlowModel model;
    int orbits;
    double bound;
    std::string anchor;
  };
  const std::vector<Case> cases{
      {"doubling", create_flow(FlowKind::doubling), mc.variance_orbits, 1.1, "Var ≲ T (exponential mixing)"},
      {"catmap", create_flow(FlowKind::catmap), mc.variance_orbits, 1.1, "Var ≲ T (exponential mixing)"},
      {"intermittent_0.4", create_flow(FlowKind::intermittent, 0.4), mc.variance_orbits_heavy, 1.1,
       "Var ≲ T (polynomial mixing, C > 1)"},
      {"intermittent_0.667", create_flow(FlowKind::intermittent, 2.0 / 3.0), mc.variance_orbits, -1.0,
       "Var ≲ T^(2−C) (polynomial mixing, C < 1)"},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& k = cases[i];
    // Negative bound: the slow-mixing regime, whose bound follows the rate.
    const double bound = k.bound < 0.0 ? 2.0 - k.model.rate.C + 0.1 : k.bound;
    const auto vg = variance_growth_experiment(k.model, cos2pi, grid, k.orbits, derive_seed(seed, i, 1), cfg.workers);
    res.criteria.push_back(detail::at_most(7, "variance_slope_" + k.name, k.anchor, vg.fit.slope, bound));
    res.details["variance_" + k.name] = {{"fit", vg.fit},
                                         {"Q", vg.Q},
                                         {"rate_C", k.model.rate.C},
                                         {"regime", variance_regime(k.model.rate)},
                                         {"orbits", k.orbits}};
    std::ostringstream csv;
    write_variance_csv(csv, vg);
    res.artifacts["variance_" + k.name + ".csv"] = csv.str();
  }

  double worst = 0.0;
  for (double C : {0.5, 1.0, 1.5, 2.0}) {
    for (double T : {1.0, 10.0, 100.0}) {
      worst = std::max(worst, std::abs(closed_form_double_integral(C, T) / detail::brute_double_integral(C, T) - 1.0));
    }
  }
  res.criteria.push_back(
      detail::at_most(7, "closed_form_double_integral", "∬(1+|t−s|)^(−C) closed form", worst, 1e-6));

  const auto flow = detail::sandwich_flow(mc);
  const auto ecfg = detail::effective_config(mc);
  BumpFamily fam(mc.theta);
  const auto [rep, sums] = effective_sandwich_experiment(flow, fam, ecfg, mc.n_orbits, derive_seed(seed, 0, 2),
                                                         cfg.workers);
  res.criteria.push_back(detail::at_least(8, "effective_sandwich_" + std::string(to_string(flow.kind)),
                                          "T‖f‖₁/m − 2T^α‖f‖ ≤ ∫f ≤ mT‖f‖₁ + 2T^α‖f‖", rep.fraction_clean_beyond_k0,
                                          0.95));
  res.details["sandwich"] = rep;
  res.details["sandwich"]["flow"] = std::string(to_string(flow.kind));
  res.details["sandwich"]["schedule_exponent"] = ecfg.schedule_exponent();
  res.details["sandwich"]["T_k_max_plus_1"] = ecfg.T(ecfg.k_max + 1);
  return res;
}

/// Long-geodesic surrogate: main window, linear growth and the y_max
/// comparison, plus sensitivity runs that are reported only.
inline SuiteResult run_montecarlo_suite(const ExperimentConfig& cfg) {
  SuiteResult res;
  res.suite = "montecarlo";
  const auto& mc = cfg.montecarlo;
  const std::uint64_t seed = detail::suite_seed(cfg.seed, 3);
  const auto cps = log_checkpoints(mc.T_min, mc.T_max, mc.per_decade);
  const AcceptanceWindow win{mc.epsilon, mc.c};
  const auto proc = detail::return_process(mc);
  for (std::size_t ri = 0; ri < cfg.surface.r.size(); ++ri) {
    const double r = cfg.surface.r[ri];
    const std::string tag = "_r" + detail::r_tag(r);
    ProfileSurface s(r, cfg.surface.x_max);
    const ExcursionTable table(s, s.delta0());
    const auto e = run_ensemble(table, proc, mc.n_trajectories, derive_seed(seed, ri, 1), cps, cfg.workers);
    const auto w = max_excursion_window_check(e, win, mc.T_min);
    const auto l = winding_and_distance_linearity(e, mc.T_min);
    res.criteria.push_back(detail::at_least(9, "window_containment" + tag,
                                            "T^(−(1+ε)/r)/c ≤ inf δ ≤ c·T^(−(1−ε)/(2r))", w.containment, 0.95));
    res.criteria.push_back(
        detail::within(9, "depth_exponent" + tag, "inf δ ≈ T^(−1/r)", w.depth_fit.slope, 1.0 / r, 0.05));
    res.criteria.push_back(detail::within(10, "winding_growth" + tag, "W(T) linear", l.fit_W.slope, 1.0, 0.05));
    res.criteria.push_back(
        detail::within(10, "distance_growth" + tag, "hyperbolic distance linear", l.fit_H.slope, 1.0, 0.05));
    json d{{"window", w}, {"linearity", l}};
    long long deep = 0, flagged = 0;
    for (const auto& run : e.runs) {
      deep += run.n_deep_shortcut;
      flagged += run.n_flagged;
    }
    d["deep_shortcut_excursions"] = deep;
    d["flagged_excursions"] = flagged;
    d["table_tail_exponent"] = table.tail_fit().slope;
    if (r == 3.0) {
      const auto su = sullivan_comparison(e, win, mc.T_min);
      res.criteria.push_back(detail::within(10, "ymax_exponent", "y_max ≈ T^(2/3)", su.y_fit.slope, 2.0 / 3.0, 0.07));
      res.criteria.push_back(detail::at_least(10, "ymax_window", "T^((1−ε)/3)/c₁ < y_max < c₁·T^((2+ε)/3)",
                                              su.containment, 0.95));
      d["sullivan"] = su;
    }
    res.details["r" + detail::r_tag(r)] = d;
    std::ostringstream csv;
    write_summary_csv(csv, e);
    res.artifacts["summaries" + tag + ".csv"] = csv.str();
  }

  if (mc.sensitivity_trajectories > 0) {
    const double r = std::find(cfg.surface.r.begin(), cfg.surface.r.end(), 3.0) != cfg.surface.r.end()
                         ? 3.0
                         : cfg.surface.r.front();
    ProfileSurface s(r, cfg.surface.x_max);
    const ExcursionTable table(s, s.delta0());
    json sens = json::object();
    const std::vector<std::pair<std::string, ReturnProcess>> variants{
        {"pareto_gaps", ReturnProcess{.gap_law = GapLaw::pareto, .mu_gap = mc.mu_gap, .pareto_shape = mc.pareto_shape}},
        {"catmap_returns", ReturnProcess{.mu_gap = mc.mu_gap, .source = ReturnSource::catmap}},
    };
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const auto e =
          run_ensemble(table, variants[v].second, mc.sensitivity_trajectories, derive_seed(seed, v, 2), cps, cfg.workers);
      const auto w = max_excursion_window_check(e, win, mc.T_min);
      const auto l = winding_and_distance_linearity(e, mc.T_min);
      sens[variants[v].first] = {{"r", r},
                                 {"trajectories", mc.sensitivity_trajectories},
                                 {"containment", w.containment},
                                 {"depth_exponent", w.depth_fit.slope},
                                 {"winding_slope", l.fit_W.slope},
                                 {"distance_slope", l.fit_H.slope}};
    }
    res.details["sensitivity"] = sens;
  }
  return res;
}

inline SuiteResult run_suite(const std::string& name, const ExperimentConfig& cfg) {
  if (name == "geometry") return run_geometry_suite(cfg);
  if (name == "excursion") return run_excursion_suite(cfg);
  if (name == "mixing") return run_mixing_suite(cfg);
  if (name == "montecarlo") return run_montecarlo_suite(cfg);
  throw ConfigError("unknown suite '" + name + "'");
}

inline std::string dump_report(const json& j) { return j.dump(2) + "\n"; }

inline void write_file(const std::filesystem::path& p, const std::string& contents) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << contents;
  if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
}

enum ExitCode : int { kExitOk = 0, kExitAcceptance = 1, kExitConfig = 2, kExitRuntime = 3 };

/// Runs the configured suites, writes <suite>.json and CSV artifacts into
/// output_dir and returns the exit status. Progress goes to `log`.
inline int run(const ExperimentConfig& cfg, std::ostream& log) {
  validate(cfg);
  const std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);
  std::vector<std::string> suites;
  if (cfg.suite == "all") {
    suites = suite_names();
  } else {
    suites = {cfg.suite};
  }
  std::vector<std::string> failing;
  for (const auto& name : suites) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = run_suite(name, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file(out / (name + ".json"), dump_report(res.report(cfg)));
    for (const auto& [file, text] : res.artifacts) write_file(out / file, text);
    log << "suite " << name << ": " << (res.all_pass() ? "pass" : "FAIL") << " (" << std::fixed
        << std::setprecision(1) << secs << " s)\n";
    log.unsetf(std::ios::fixed);
    for (const auto& c : res.criteria) {
      if (!c.pass) failing.push_back(c.name);
    }
  }
  if (!failing.empty()) {
    log << "failing checks:";
    for (const auto& f : failing) log << ' ' << f;
    log << '\n';
    return kExitAcceptance;
  }
  return kExitOk;
}

/// Criteria from every report in a directory, ordered by criterion number.
inline std::vector<Criterion> load_criteria(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("report directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Criterion> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
      for (const auto& c : j.at("criteria")) out.push_back(c.get<Criterion>());
    } catch (const json::exception& e) {
      throw ConfigError("corrupt report '" + f.string() + "': " + e.what());
    }
  }
  if (out.empty()) throw ConfigError("no reports found in '" + dir.string() + "'");
  std::stable_sort(out.begin(), out.end(), [](const Criterion& a, const Criterion& b) { return a.criterion < b.criterion; });
  return out;
}

inline void print_summary(const std::vector<Criterion>& rows, std::ostream& os) {
  // Width in code points, so that UTF-8 symbols line up.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
  };
  auto pad = [&](const std::string& s, std::size_t w) {
    return s + std::string(w > width(s) ? w - width(s) : 0, ' ');
  };
  std::size_t wn = 4, wa = 6;
  for (const auto& c : rows) {
    wn = std::max(wn, width(c.name));
    wa = std::max(wa, width(c.anchor));
  }
  os << "#   " << pad("name", wn) << "  " << pad("law", wa) << "  " << pad("measured", 14) << "  "
     << pad("bound", 22) << "  result\n";
  for (const auto& c : rows) {
    std::ostringstream m;
    m << std::setprecision(6) << c.measured;
    os << pad(std::to_string(c.criterion), 4) << pad(c.name, wn) << "  " << pad(c.anchor, wa) << "  "
       << pad(m.str(), 14) << "  " << pad(c.bound, 22) << "  " << (c.pass ? "pass" : "FAIL") << '\n';
  }
}

}  // namespace cuspflow
