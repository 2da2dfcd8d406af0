#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace cuspflow::quad {

namespace detail {

// Kronrod 15-point nodes (non-negative half) and weights, with the embedded
// 7-point Gauss weights on the odd-indexed nodes.
inline constexpr std::array<double, 8> kNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrod = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kGauss = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
void gk15(F& f, double a, double b, double& kronrod, double& err) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double k = fc * kKronrod[7];
  double g = fc * kGauss[3];
  for (std::size_t j = 0; j < 7; ++j) {
    const double dx = h * kNodes[j];
    const double f1 = f(c - dx);
    const double f2 = f(c + dx);
    k += kKronrod[j] * (f1 + f2);
    if (j % 2 == 1) g += kGauss[j / 2] * (f1 + f2);
  }
  kronrod = k * h;
  err = std::abs((k - g) * h);
}

template <class F>
double adaptive(F& f, double a, double b, double tol_abs, int depth) {
  double k, err;
  gk15(f, a, b, k, err);
  if (err <= tol_abs || depth <= 0 || !(std::abs(b - a) > 1e-300)) return k;
  const double m = 0.5 * (a + b);
  return adaptive(f, a, m, 0.5 * tol_abs, depth - 1) + adaptive(f, m, b, 0.5 * tol_abs, depth - 1);
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (7/15) quadrature on [a, b]. Subdivides until the
/// local |K15 - G7| meets its share of max(abs_tol, rel_tol * |I|), where I
/// is the first whole-interval estimate.
template <class F>
double integrate(F&& f, double a, double b, double rel_tol = 1e-12, double abs_tol = 0.0,
                 int max_depth = 40) {
  if (a == b) return 0.0;
  if (b < a) return -integrate(f, b, a, rel_tol, abs_tol, max_depth);
  double k, err;
  detail::gk15(f, a, b, k, err);
  const double tol = std::max(abs_tol, rel_tol * std::abs(k));
  if (err <= tol) return k;
  const double m = 0.5 * (a + b);
  return detail::adaptive(f, a, m, 0.5 * tol, max_depth - 1) +
         detail::adaptive(f, m, b, 0.5 * tol, max_depth - 1);
}

}  // namespace cuspflow::quad
