#pragma once

// Long random geodesics as a renewal process of cusp excursions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuspflow/errors.hpp"
#include "cuspflow/excursion.hpp"
#include "cuspflow/geometry.hpp"
#include "cuspflow/parallel.hpp"
#include "cuspflow/rng.hpp"
#include "cuspflow/scaling.hpp"

namespace cuspflow {

enum class GapLaw { exponential, pareto };
/// Where the uniforms behind each event come from: an independent stream,
/// or consecutive points of a cat-map orbit (correlated returns).
enum class ReturnSource { renewal, catmap };

inline std::string_view to_string(GapLaw g) { return g == GapLaw::exponential ? "exponential" : "pareto"; }
inline std::string_view to_string(ReturnSource s) { return s == ReturnSource::renewal ? "renewal" : "catmap"; }

inline GapLaw parse_gap_law(std::string_view s) {
  if (s == "exponential") return GapLaw::exponential;
  if (s == "pareto") return GapLaw::pareto;
  throw ConfigError("unknown gap law '" + std::string(s) + "' (expected exponential or pareto)");
}

inline ReturnSource parse_return_source(std::string_view s) {
  if (s == "renewal") return ReturnSource::renewal;
  if (s == "catmap") return ReturnSource::catmap;
  throw ConfigError("unknown return source '" + std::string(s) + "' (expected renewal or catmap)");
}

/// Inter-excursion gaps and entry angles. The entry angle b is uniform on
/// (0, 1], so P(b <= 1/R) = 1/R exactly.
struct ReturnProcess {
  GapLaw gap_law = GapLaw::exponential;
  double mu_gap = 1.0;
  double pareto_shape = 1.5;  // tail index; finite mean needs > 1
  ReturnSource source = ReturnSource::renewal;
  std::uint64_t seed = 0;
};

inline void validate(const ReturnProcess& p) {
  if (!(p.mu_gap > 0.0) || !std::isfinite(p.mu_gap)) throw ConfigError("return process: mu_gap must be positive");
  if (p.gap_law == GapLaw::pareto && !(p.pareto_shape > 1.0)) {
    throw ConfigError("return process: pareto_shape must exceed 1 for a finite mean gap");
  }
}

/// P(b <= u) under the entry-angle law.
inline double entry_angle_cdf(double u) { return std::clamp(u, 0.0, 1.0); }

struct ReturnEvent {
  double gap = 0.0;
  double b = 1.0;
};

class ReturnSampler {
 public:
  explicit ReturnSampler(const ReturnProcess& p) : p_(p), rng_(p.seed) {
    validate(p);
    if (p.source == ReturnSource::catmap) {
      u_ = rng_.bits();
      v_ = rng_.bits();
    }
  }

  ReturnEvent next() {
    double u1, u2;  // both in (0, 1]
    if (p_.source == ReturnSource::renewal) {
      u1 = rng_.uniform_open_zero();
      u2 = rng_.uniform_open_zero();
    } else {
      const std::uint64_t u = 2 * u_ + v_;
      v_ = u_ + v_;
      u_ = u;
      u1 = static_cast<double>((u_ >> 11) + 1) * 0x1.0p-53;
      u2 = static_cast<double>((v_ >> 11) + 1) * 0x1.0p-53;
    }
    ReturnEvent e;
    if (p_.gap_law == GapLaw::exponential) {
      e.gap = -p_.mu_gap * std::log(u1);
    } else {
      const double scale = p_.mu_gap * (p_.pareto_shape - 1.0) / p_.pareto_shape;
      e.gap = scale * std::pow(u1, -1.0 / p_.pareto_shape);
    }
    // Guard against a zero gap from u1 == 1.
    e.gap = std::max(e.gap, std::numeric_limits<double>::min());
    e.b = u2;
    return e;
  }

 private:
  ReturnProcess p_;
  Rng rng_;
  std::uint64_t u_ = 0, v_ = 0;
};

inline ReturnEvent sample_return_event(ReturnSampler& sampler) { return sampler.next(); }

/// State of one long geodesic at time T. Only completed excursions count.
/// delta_min_running starts at the entry level.
struct GeodesicSummary {
  double T = 0.0;
  long long n_excursions = 0;
  double delta_min_running = 0.0;
  double W = 0.0;
  double dist_hyp = 0.0;
};

inline void to_json(nlohmann::json& j, const GeodesicSummary& s) {
  j = nlohmann::json{{"T", s.T},
                     {"n_excursions", s.n_excursions},
                     {"delta_min_running", s.delta_min_running},
                     {"W", s.W},
                     {"dist_hyp", s.dist_hyp}};
}

struct LongGeodesic {
  GeodesicSummary final;
  std::vector<GeodesicSummary> checkpoints;
  std::vector<ExcursionRecord> records;  // filled only when requested
  long long n_deep_shortcut = 0;
  long long n_flagged = 0;  // excursions the table rejected; skipped
  double b_min = 1.0;
};

/// Log-spaced checkpoints, `per_decade` per factor of ten, from lo to hi.
inline std::vector<double> log_checkpoints(double lo, double hi, int per_decade = 20) {
  if (!(lo > 0.0) || !(hi >= lo) || per_decade < 1) throw DomainError("log_checkpoints: need 0 < lo <= hi");
  const int n = static_cast<int>(std::floor(std::log10(hi / lo) * per_decade + 1e-9));
  std::vector<double> t;
  for (int i = 0; i <= n; ++i) t.push_back(lo * std::pow(10.0, static_cast<double>(i) / per_decade));
  return t;
}

/// Runs the renewal composition up to the last checkpoint: gap, excursion,
/// gap, excursion, ... Per-excursion physics comes from the table. Depth is
/// exact and evaluated only when a new smallest b appears.
inline LongGeodesic simulate_long_geodesic(const ExcursionTable& table, const ReturnProcess& process,
                                           std::vector<double> checkpoints, bool keep_records = false) {
  if (checkpoints.empty()) throw DomainError("simulate_long_geodesic: no checkpoints");
  std::sort(checkpoints.begin(), checkpoints.end());
  if (!(checkpoints.front() > 0.0)) throw DomainError("simulate_long_geodesic: T must be positive");
  const double T_max = checkpoints.back();

  ReturnSampler sampler(process);
  LongGeodesic out;
  GeodesicSummary s;
  s.delta_min_running = table.delta_entry();
  std::size_t next = 0;
  auto emit_until = [&](double t_done) {
    while (next < checkpoints.size() && checkpoints[next] < t_done) {
      GeodesicSummary c = s;
      c.T = checkpoints[next++];
      out.checkpoints.push_back(c);
    }
  };

  double t = 0.0;
  while (true) {
    const auto ev = sampler.next();
    const double t_start = t + ev.gap;
    if (t_start >= T_max) break;
    ExcursionRecord rec;
    try {
      rec = table.evaluate_dynamics(ev.b);
    } catch (const std::exception&) {
      ++out.n_flagged;
      t = t_start;
      continue;
    }
    const double t_end = t_start + rec.duration;
    if (t_end > T_max) break;
    emit_until(t_end);
    ++s.n_excursions;
    s.W += rec.winding;
    s.dist_hyp += rec.inv_delta_integral;
    if (rec.flags.deep_shortcut) ++out.n_deep_shortcut;
    if (ev.b < out.b_min) {
      out.b_min = ev.b;
      s.delta_min_running = std::min(s.delta_min_running, table.exact_delta_min(ev.b));
    }
    if (keep_records) {
      rec.delta_min = table.exact_delta_min(ev.b);
      rec.D = 1.0 / rec.delta_min;
      out.records.push_back(rec);
    }
    t = t_end;
  }
  emit_until(std::numeric_limits<double>::infinity());
  s.T = T_max;
  out.final = s;
  return out;
}

/// Independent trajectories with streams derived from (seed, index).
struct Ensemble {
  double r = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<LongGeodesic> runs;
};

inline std::uint64_t trajectory_seed(std::uint64_t master, std::uint64_t index) {
  return derive_seed(master, index, 6);
}

inline Ensemble run_ensemble(const ExcursionTable& table, ReturnProcess process, int n_trajectories,
                             std::uint64_t seed, const std::vector<double>& checkpoints, unsigned workers = 1) {
  if (n_trajectories < 1) throw InsufficientDataError("run_ensemble: need at least one trajectory");
  Ensemble e;
  e.r = table.surface().r();
  for (int i = 0; i < n_trajectories; ++i) e.seeds.push_back(trajectory_seed(seed, static_cast<std::uint64_t>(i)));
  e.runs = parallel_map(static_cast<std::size_t>(n_trajectories), workers, [&](std::size_t i) {
    ReturnProcess p = process;
    p.seed = e.seeds[i];
    return simulate_long_geodesic(table, p, checkpoints);
  });
  return e;
}

struct AcceptanceWindow {
  double epsilon = 0.1;
  double c = 10.0;
};

inline void validate(const AcceptanceWindow& w) {
  if (!(w.epsilon > 0.0 && w.epsilon < 0.5)) throw ConfigError("acceptance window: epsilon must lie in (0, 1/2)");
  if (!(w.c >= 1.0)) throw ConfigError("acceptance window: c must be >= 1");
}

namespace detail {

/// Checkpoint indices with T >= t_min, shared by all runs; requires three
/// decades of coverage.
inline std::vector<std::size_t> usable_checkpoints(const Ensemble& e, double t_min, const char* who) {
  if (e.runs.empty()) throw InsufficientDataError(std::string(who) + ": empty ensemble");
  const auto& cps = e.runs.front().checkpoints;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (cps[i].T >= t_min * (1.0 - 1e-12)) idx.push_back(i);
  }
  if (idx.size() < 3 || cps[idx.back()].T < 1000.0 * cps[idx.front()].T * (1.0 - 1e-9)) {
    throw InsufficientDataError(std::string(who) + ": checkpoints must span three decades");
  }
  for (const auto& run : e.runs) {
    if (run.checkpoints.size() != cps.size()) {
      throw InsufficientDataError(std::string(who) + ": runs have different checkpoints");
    }
  }
  return idx;
}

/// Fits the ensemble mean of log q(run, checkpoint) against log T.
template <class Q>
ScalingFit mean_log_fit(const Ensemble& e, const std::vector<std::size_t>& idx, Q&& q) {
  std::vector<double> u, v;
  for (std::size_t i : idx) {
    double acc = 0.0;
    for (const auto& run : e.runs) {
      const double x = q(run.checkpoints[i]);
      if (!(x > 0.0)) throw InsufficientDataError("mean_log_fit: non-positive value at a checkpoint");
      acc += std::log(x);
    }
    u.push_back(std::log(e.runs.front().checkpoints[i].T));
    v.push_back(acc / static_cast<double>(e.runs.size()));
  }
  return fit_linear(u, v);
}

}  // namespace detail

struct WindowReport {
  double r = 0.0;
  AcceptanceWindow window;
  double t_min = 0.0;
  double containment = 0.0;  // over all (trajectory, checkpoint) pairs
  std::vector<double> per_trajectory;
  ScalingFit depth_fit;  // -log delta_min_running vs log T
  double lower_exponent = 0.0, upper_exponent = 0.0;
};

/// Containment of delta_min_running in
///   [T^-((1+eps)/r) / c, c T^-((1-eps)/(2r))]
/// at checkpoints T >= t_min, and the ensemble depth exponent.
inline WindowReport max_excursion_window_check(const Ensemble& e, AcceptanceWindow w, double t_min = 1e3) {
  validate(w);
  const auto idx = detail::usable_checkpoints(e, t_min, "max_excursion_window_check");
  WindowReport rep;
  rep.r = e.r;
  rep.window = w;
  rep.t_min = t_min;
  rep.lower_exponent = (1.0 + w.epsilon) / e.r;
  rep.upper_exponent = (1.0 - w.epsilon) / (2.0 * e.r);
  long inside = 0, total = 0;
  for (const auto& run : e.runs) {
    long in_run = 0;
    for (std::size_t i : idx) {
      const auto& c = run.checkpoints[i];
      const double lo = std::pow(c.T, -rep.lower_exponent) / w.c;
      const double hi = w.c * std::pow(c.T, -rep.upper_exponent);
      if (c.delta_min_running >= lo && c.delta_min_running <= hi) ++in_run;
    }
    rep.per_trajectory.push_back(static_cast<double>(in_run) / idx.size());
    inside += in_run;
    total += static_cast<long>(idx.size());
  }
  rep.containment = static_cast<double>(inside) / total;
  const auto fit = detail::mean_log_fit(e, idx, [](const GeodesicSummary& s) { return 1.0 / s.delta_min_running; });
  rep.depth_fit = fit;
  return rep;
}

struct LinearityReport {
  double r = 0.0;
  ScalingFit fit_W, fit_H;
  double rate_W = 0.0, rate_H = 0.0;  // pooled W/T and dist_hyp/T at the last checkpoint
  double band_W_low = 0.0, band_W_high = 0.0;
  double band_H_low = 0.0, band_H_high = 0.0;
  double P_W = 0.0, P_H = 0.0;  // smallest P with (1/P) rate T < X < P rate T everywhere
};

inline LinearityReport winding_and_distance_linearity(const Ensemble& e, double t_min = 1e3) {
  const auto idx = detail::usable_checkpoints(e, t_min, "winding_and_distance_linearity");
  LinearityReport rep;
  rep.r = e.r;
  rep.fit_W = detail::mean_log_fit(e, idx, [](const GeodesicSummary& s) { return s.W; });
  rep.fit_H = detail::mean_log_fit(e, idx, [](const GeodesicSummary& s) { return s.dist_hyp; });
  double sw = 0.0, sh = 0.0, st = 0.0;
  for (const auto& run : e.runs) {
    const auto& last = run.checkpoints[idx.back()];
    sw += last.W;
    sh += last.dist_hyp;
    st += last.T;
  }
  rep.rate_W = sw / st;
  rep.rate_H = sh / st;
  rep.band_W_low = rep.band_H_low = std::numeric_limits<double>::infinity();
  for (const auto& run : e.runs) {
    for (std::size_t i : idx) {
      const auto& c = run.checkpoints[i];
      const double qw = c.W / (rep.rate_W * c.T), qh = c.dist_hyp / (rep.rate_H * c.T);
      rep.band_W_low = std::min(rep.band_W_low, qw);
      rep.band_W_high = std::max(rep.band_W_high, qw);
      rep.band_H_low = std::min(rep.band_H_low, qh);
      rep.band_H_high = std::max(rep.band_H_high, qh);
    }
  }
  rep.P_W = std::max(rep.band_W_high, 1.0 / rep.band_W_low);
  rep.P_H = std::max(rep.band_H_high, 1.0 / rep.band_H_low);
  return rep;
}

struct SullivanReport {
  AcceptanceWindow window;
  double t_min = 0.0;
  double containment = 0.0;               // window with constant c1 = window.c
  double containment_unit_constant = 0.0;  // same window with c1 = 1
  ScalingFit y_fit;                        // log y_max vs log T
};

/// y_max = delta_min_running^-2 against the window
///   (T^((1-eps)/3) / c1, c1 T^((2+eps)/3)).
inline SullivanReport sullivan_comparison(const Ensemble& e, AcceptanceWindow w, double t_min = 1e3) {
  if (e.r != 3.0) {
    std::ostringstream os;
    os << "sullivan_comparison applies to r = 3 only (got r = " << e.r << ")";
    throw DomainError(os.str());
  }
  validate(w);
  const auto idx = detail::usable_checkpoints(e, t_min, "sullivan_comparison");
  SullivanReport rep;
  rep.window = w;
  rep.t_min = t_min;
  long in_c = 0, in_1 = 0, total = 0;
  for (const auto& run : e.runs) {
    for (std::size_t i : idx) {
      const auto& c = run.checkpoints[i];
      const double y = 1.0 / (c.delta_min_running * c.delta_min_running);
      const double lo = std::pow(c.T, (1.0 - w.epsilon) / 3.0), hi = std::pow(c.T, (2.0 + w.epsilon) / 3.0);
      if (y > lo / w.c && y < w.c * hi) ++in_c;
      if (y > lo && y < hi) ++in_1;
      ++total;
    }
  }
  rep.containment = static_cast<double>(in_c) / total;
  rep.containment_unit_constant = static_cast<double>(in_1) / total;
  rep.y_fit = detail::mean_log_fit(e, idx, [](const GeodesicSummary& s) {
    return 1.0 / (s.delta_min_running * s.delta_min_running);
  });
  return rep;
}

inline void write_summary_csv(std::ostream& os, const Ensemble& e) {
  os << "seed,T,n_excursions,delta_min_running,W,dist_hyp\n";
  char buf[256];
  for (std::size_t k = 0; k < e.runs.size(); ++k) {
    for (const auto& c : e.runs[k].checkpoints) {
      std::snprintf(buf, sizeof buf, "%llu,%.17g,%lld,%.17g,%.17g,%.17g\n",
                    static_cast<unsigned long long>(e.seeds[k]), c.T, c.n_excursions, c.delta_min_running, c.W,
                    c.dist_hyp);
      os << buf;
    }
  }
}

inline void to_json(nlohmann::json& j, const AcceptanceWindow& w) {
  j = nlohmann::json{{"epsilon", w.epsilon}, {"c", w.c}};
}

inline void to_json(nlohmann::json& j, const WindowReport& r) {
  j = nlohmann::json{{"r", r.r},
                     {"window", r.window},
                     {"t_min", r.t_min},
                     {"containment", r.containment},
                     {"min_trajectory_containment",
                      r.per_trajectory.empty() ? 0.0
                                               : *std::min_element(r.per_trajectory.begin(), r.per_trajectory.end())},
                     {"depth_fit", r.depth_fit},
                     {"lower_exponent", r.lower_exponent},
                     {"upper_exponent", r.upper_exponent}};
}

inline void to_json(nlohmann::json& j, const LinearityReport& r) {
  j = nlohmann::json{{"r", r.r},
                     {"fit_W", r.fit_W},
                     {"fit_H", r.fit_H},
                     {"rate_W", r.rate_W},
                     {"rate_H", r.rate_H},
                     {"band_W", {r.band_W_low, r.band_W_high}},
                     {"band_H", {r.band_H_low, r.band_H_high}},
                     {"P_W", r.P_W},
                     {"P_H", r.P_H}};
}

inline void to_json(nlohmann::json& j, const SullivanReport& r) {
  j = nlohmann::json{{"window", r.window},
                     {"t_min", r.t_min},
                     {"containment", r.containment},
                     {"containment_unit_constant", r.containment_unit_constant},
                     {"y_fit", r.y_fit}};
}

}  // namespace cuspflow
