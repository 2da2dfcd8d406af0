#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuspflow/errors.hpp"

namespace cuspflow {

/// Least-squares line through (u, v) or (log u, log v).
struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int n_points = 0;
  double slope_ci_halfwidth = 0.0;  // 95%, normal theory
};

inline void to_json(nlohmann::json& j, const ScalingFit& f) {
  j = nlohmann::json{{"slope", f.slope},
                     {"intercept", f.intercept},
                     {"r_squared", f.r_squared},
                     {"n_points", f.n_points},
                     {"slope_ci_halfwidth", f.slope_ci_halfwidth}};
}

inline void from_json(const nlohmann::json& j, ScalingFit& f) {
  j.at("slope").get_to(f.slope);
  j.at("intercept").get_to(f.intercept);
  j.at("r_squared").get_to(f.r_squared);
  j.at("n_points").get_to(f.n_points);
  j.at("slope_ci_halfwidth").get_to(f.slope_ci_halfwidth);
}

inline ScalingFit fit_linear(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DomainError("fit_linear: mismatched sizes");
  const std::size_t n = u.size();
  if (n < 3) throw InsufficientDataError("fit_linear: need at least 3 points");
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double suu = 0.0, suv = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double du = u[i] - mu, dv = v[i] - mv;
    suu += du * du;
    suv += du * dv;
    svv += dv * dv;
  }
  if (suu <= 0.0) throw InsufficientDataError("fit_linear: abscissae are all equal");
  ScalingFit f;
  f.n_points = static_cast<int>(n);
  f.slope = suv / suu;
  f.intercept = mv - f.slope * mu;
  const double sse = std::max(0.0, svv - f.slope * suv);
  f.r_squared = svv > 0.0 ? std::clamp(1.0 - sse / svv, 0.0, 1.0) : 1.0;
  const double se = std::sqrt(sse / static_cast<double>(n - 2) / suu);
  f.slope_ci_halfwidth = 1.959963984540054 * se;
  return f;
}

/// Power-law fit v ~ exp(intercept) u^slope by least squares in log-log.
inline ScalingFit fit_power_law(std::span<const std::pair<double, double>> points) {
  std::vector<double> lu, lv;
  lu.reserve(points.size());
  lv.reserve(points.size());
  for (const auto& [u, v] : points) {
    if (!(u > 0.0) || !(v > 0.0)) {
      throw DomainError("fit_power_law: coordinates must be positive");
    }
    lu.push_back(std::log(u));
    lv.push_back(std::log(v));
  }
  return fit_linear(lu, lv);
}

}  // namespace cuspflow
