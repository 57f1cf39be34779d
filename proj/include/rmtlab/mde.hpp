#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "rmtlab/core.hpp"

namespace rmtlab {

/// Largest |z| the scalar MDE routines accept.
inline constexpr double kMaxAbsZ = 10.0;
/// Stand-in for the small-product threshold below which eta -> eta*rho is
/// inverted on (0, 1).
inline constexpr double kProductCeiling = 1e-2;
/// Default factor for two-sided asymptotic envelopes.
inline constexpr double kEnvelopeFactor = 10.0;

struct SpectralPoint {
  cplx z;
  double eta;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ArgumentError("spectral point needs eta > 0");
    if (!(std::abs(z) <= kMaxAbsZ)) throw ArgumentError("spectral point needs |z| <= 10");
  }
};

/// Solution of the MDE at (z, i*eta). The solution is m = i*a with a > 0.
struct MdeSolution {
  SpectralPoint point;
  double a = 0.0;
  double u = 0.0;
  double rho = 0.0;
  double m_prime_trace = 0.0;
  double residual = 0.0;

  [[nodiscard]] cplx m() const { return {0.0, a}; }
};

/// a^3 + 2 eta a^2 + (eta^2 + |z|^2 - 1) a - eta: the MDE after substituting
/// m = i a and clearing denominators.
inline double mde_cubic(double a, double eta, double abs_z2) {
  return ((a + 2.0 * eta) * a + (eta * eta + abs_z2 - 1.0)) * a - eta;
}

/// Residual of the MDE multiplied through by m, i.e. |1 + m (i eta + m) - |z|^2 u|.
/// Every term is O(1), so the residual is meaningful in absolute terms even
/// when m itself is tiny.
inline double mde_residual(cplx m, cplx z, double eta) {
  const cplx w_plus_m = cplx(0.0, eta) + m;
  const cplx u = m / w_plus_m;
  return std::abs(1.0 + m * w_plus_m - std::norm(z) * u);
}

/// <M'> = -1 + 1/(1 + u - 2|z|^2 u^2), the derivative of m along w at w = i eta.
/// On a solution the denominator equals eta/(eta + a) + 2 a^2, which avoids the
/// cancellation near |z| = 1; off-shell input falls back to the literal form.
inline double m_prime_trace(const MdeSolution& sol) {
  const double abs_z2 = std::norm(sol.point.z);
  const double eta = sol.point.eta;
  const double denom = sol.a > 0.0 ? eta / (eta + sol.a) + 2.0 * sol.a * sol.a
                                   : 1.0 + sol.u - 2.0 * abs_z2 * sol.u * sol.u;
  if (!(std::abs(denom) >= 1e-14 * (sol.a > 0.0 ? 1e-280 : 1.0)) || !std::isfinite(1.0 / denom))
    throw NumericalError("singular denominator in <M'> at eta=" + std::to_string(sol.point.eta));
  return -1.0 + 1.0 / denom;
}

namespace detail {

/// Positive root of the cubic by bisection on [0, 2 + eta]. The cubic is -eta at
/// 0 and positive at 2 + eta, and its coefficient signs change exactly once, so
/// this is the only positive root.
inline double cubic_positive_root(double eta, double abs_z2) {
  double lo = 0.0;
  double hi = 2.0 + eta;
  if (!(mde_cubic(hi, eta, abs_z2) > 0.0))
    throw NumericalError("MDE cubic has no sign change on [0, 2+eta]");
  for (int it = 0; it < 4000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (mde_cubic(mid, eta, abs_z2) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  // Pick whichever bracket end has the smaller |f|.
  const double flo = std::abs(mde_cubic(lo, eta, abs_z2));
  const double fhi = std::abs(mde_cubic(hi, eta, abs_z2));
  const double root = flo < fhi ? lo : hi;
  if (!(root > 0.0)) throw NumericalError("MDE bisection collapsed to a = 0");
  return root;
}

/// Counts sign changes of the cubic on a uniform scan of [0, 2 + eta].
inline int cubic_sign_changes(double eta, double abs_z2, int points = 64) {
  int changes = 0;
  const double hi = 2.0 + eta;
  double prev = mde_cubic(0.0, eta, abs_z2);
  for (int k = 1; k <= points; ++k) {
    const double f = mde_cubic(hi * k / points, eta, abs_z2);
    if ((prev < 0.0) != (f < 0.0)) ++changes;
    prev = f;
  }
  return changes;
}

}  // namespace detail

inline MdeSolution solve_mde(const SpectralPoint& point) {
  point.validate();
  const double eta = point.eta;
  const double abs_z2 = std::norm(point.z);
  const double a = detail::cubic_positive_root(eta, abs_z2);
  if (detail::cubic_sign_changes(eta, abs_z2) > 1)
    throw NumericalError("MDE cubic shows a second positive sign change");
  MdeSolution sol;
  sol.point = point;
  sol.a = a;
  sol.rho = a;
  sol.u = a / (eta + a);
  sol.residual = mde_residual(sol.m(), point.z, eta);
  sol.m_prime_trace = m_prime_trace(sol);
  return sol;
}

/// The 2x2 block form of M: m on the diagonal blocks, -z u and -conj(z) u off
/// the diagonal, each block a multiple of I_N.
struct BlockM {
  cplx m;
  cplx off_upper;
  cplx off_lower;
  Index n = 0;

  [[nodiscard]] CMatrix expand() const {
    CMatrix out = CMatrix::Zero(2 * n, 2 * n);
    for (Index i = 0; i < n; ++i) {
      out(i, i) = m;
      out(n + i, n + i) = m;
      out(i, n + i) = off_upper;
      out(n + i, i) = off_lower;
    }
    return out;
  }

  /// M v without materializing M.
  [[nodiscard]] CVector apply(const CVector& v) const {
    require(v.size() == 2 * n, "BlockM::apply dimension mismatch");
    CVector out(2 * n);
    out.head(n) = m * v.head(n) + off_upper * v.tail(n);
    out.tail(n) = off_lower * v.head(n) + m * v.tail(n);
    return out;
  }

  /// <x, M y>.
  [[nodiscard]] cplx quadratic_form(const CVector& x, const CVector& y) const {
    return x.dot(apply(y));
  }
};

inline BlockM build_M(const MdeSolution& sol, Index n) {
  require(n >= 1, "build_M needs n >= 1");
  return {sol.m(), -sol.point.z * sol.u, -std::conj(sol.point.z) * sol.u, n};
}

struct RhoEnvelope {
  double center;
  double lower;
  double upper;

  [[nodiscard]] bool contains(double rho) const { return rho >= lower && rho <= upper; }
  /// max(rho/center, center/rho).
  [[nodiscard]] double ratio(double rho) const { return std::max(rho / center, center / rho); }
};

/// Asymptotic size of rho: eta^{1/3} + (1-|z|)^{1/2} inside the unit disc and
/// eta / (|z| - 1 + eta^{2/3}) outside, widened by the given factor.
inline RhoEnvelope rho_envelope(const SpectralPoint& point, double factor = kEnvelopeFactor) {
  point.validate();
  if (!(point.eta < 1.0)) throw OutOfRangeError("rho envelope requires eta < 1");
  const double r = std::abs(point.z);
  const double eta = point.eta;
  const double center = r <= 1.0 ? std::cbrt(eta) + std::sqrt(1.0 - r)
                                 : eta / (r - 1.0 + std::pow(eta, 2.0 / 3.0));
  return {center, center / factor, center * factor};
}

enum class ProductGate {
  /// 0 < A < kProductCeiling and eta searched on (0, 1).
  strict,
  /// Any 0 < A < 1 and eta searched on (0, 1e12). eta * rho < 1 for every eta,
  /// so A >= 1 has no solution in either mode.
  relaxed,
};

/// Unique eta with eta * rho^z(i eta) = A, by bisection on the increasing map
/// eta -> eta * rho. Bisection runs on log(eta).
inline double solve_eta_for_product(cplx z, double A, ProductGate gate = ProductGate::strict) {
  if (!(std::abs(z) <= kMaxAbsZ)) throw ArgumentError("|z| must be <= 10");
  if (!(A > 0.0)) throw OutOfRangeError("product target A must be positive");
  if (gate == ProductGate::strict && !(A < kProductCeiling))
    throw OutOfRangeError("product target A=" + std::to_string(A) +
                          " is not below the ceiling A*=" + std::to_string(kProductCeiling));
  if (!(A < 1.0))
    throw OutOfRangeError("product target A=" + std::to_string(A) +
                          " is unattainable: eta*rho < 1 for every eta");
  const double eta_max = gate == ProductGate::strict ? 1.0 : 1e12;
  auto product = [&](double eta) { return eta * solve_mde({z, eta}).a; };
  if (!(product(eta_max) > A))
    throw NumericalError("eta*rho = A has no solution below eta=" + std::to_string(eta_max));
  double lo = std::log(1e-300);
  double hi = std::log(eta_max);
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (product(std::exp(mid)) > A)
      hi = mid;
    else
      lo = mid;
  }
  const double e_lo = std::exp(lo);
  const double e_hi = std::exp(hi);
  const double eta = std::abs(product(e_lo) - A) < std::abs(product(e_hi) - A) ? e_lo : e_hi;
  if (std::abs(product(eta) - A) > 1e-12 * A)
    throw NumericalError("eta*rho inversion missed tolerance");
  return eta;
}

/// Asymptotic eta for a given product A (two-sided, returns the center).
inline double eta_product_asymptotic(double abs_z, double A) {
  if (abs_z <= 1.0) return A / (std::sqrt(1.0 - abs_z) + std::pow(A, 0.25));
  return std::sqrt(A) * (std::sqrt(abs_z - 1.0) + std::pow(A, 0.25));
}

/// Asymptotic rho for a given product A.
inline double rho_product_asymptotic(double abs_z, double A) {
  if (abs_z <= 1.0) return std::pow(A, 0.25) + std::sqrt(1.0 - abs_z);
  return std::sqrt(A) / (std::sqrt(abs_z - 1.0) + std::pow(A, 0.25));
}

}  // namespace rmtlab
