#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "rmtlab/core.hpp"
#include "rmtlab/mde.hpp"

namespace rmtlab {

struct CharSample {
  double t;
  cplx z;
  double eta;
  double rho;
  /// <M'> at (z_t, i eta_t).
  double m_prime;
};

/// Trajectory of d_t eta = -rho - eta/2, d_t z = -z/2 on [0, T], samples in
/// increasing t.
struct Characteristic {
  std::vector<CharSample> samples;
  double T = 0.0;

  [[nodiscard]] const CharSample& start() const { return samples.front(); }
  [[nodiscard]] const CharSample& end() const { return samples.back(); }

  /// (eta_t / rho_t + 1) e^t, constant along an exact characteristic.
  [[nodiscard]] static double invariant(const CharSample& s) {
    return (s.eta / s.rho + 1.0) * std::exp(s.t);
  }

  /// Largest relative deviation of the invariant from its value at T.
  [[nodiscard]] double conservation_defect() const {
    const double ref = invariant(end());
    double worst = 0.0;
    for (const auto& s : samples) worst = std::max(worst, std::abs(invariant(s) - ref) / ref);
    return worst;
  }

  /// Index of the sample at time t, or -1 when t is not a sample time.
  [[nodiscard]] std::ptrdiff_t find(double t, double tol = 1e-12) const {
    auto it = std::lower_bound(samples.begin(), samples.end(), t - tol,
                               [](const CharSample& s, double v) { return s.t < v; });
    if (it != samples.end() && std::abs(it->t - t) <= tol) return it - samples.begin();
    return -1;
  }

  /// Sample at an arbitrary t: z exact, eta log-linearly interpolated, rho and
  /// <M'> re-solved from the MDE.
  [[nodiscard]] CharSample at(double t) const {
    require(t >= samples.front().t - 1e-14 && t <= samples.back().t + 1e-14,
            "characteristic queried outside [0, T]");
    const auto idx = find(t, 0.0);
    if (idx >= 0) return samples[static_cast<std::size_t>(idx)];
    auto hi = std::upper_bound(samples.begin(), samples.end(), t,
                               [](double v, const CharSample& s) { return v < s.t; });
    if (hi == samples.end()) return samples.back();
    if (hi == samples.begin()) return samples.front();
    auto lo = hi - 1;
    const double w = (t - lo->t) / (hi->t - lo->t);
    const double eta = std::exp((1.0 - w) * std::log(lo->eta) + w * std::log(hi->eta));
    const cplx z = start().z * std::exp(-t / 2.0);
    const auto sol = solve_mde({z, eta});
    return {t, z, eta, sol.rho, sol.m_prime_trace};
  }
};

namespace detail {

inline CharSample make_sample(double t, cplx z0, double eta) {
  const cplx z = z0 * std::exp(-t / 2.0);
  const auto sol = solve_mde({z, eta});
  return {t, z, eta, sol.rho, sol.m_prime_trace};
}

}  // namespace detail

/// Integrates the characteristic backward from (z_T, eta_T) = end to t = 0.
///
/// z is advanced in closed form; eta by adaptive Dormand-Prince with dense
/// output. Samples: `steps` + 1 uniform times, a geometric cluster near T
/// where eta changes on the scale eta_T / rho_T, and any `extra_times`.
inline Characteristic integrate_backward(const SpectralPoint& end, double T, int steps,
                                         std::span<const double> extra_times = {},
                                         double tolerance = 1e-12) {
  end.validate();
  if (!(T > 0.0)) throw ArgumentError("characteristic horizon T must be positive");
  if (steps < 1) throw ArgumentError("characteristic needs at least one step");
  const cplx z0 = end.z * std::exp(T / 2.0);
  if (std::abs(z0) > kMaxAbsZ) throw ArgumentError("characteristic leaves |z| <= 10 before t = 0");

  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(steps) + 200 + extra_times.size());
  for (int k = 0; k <= steps; ++k) times.push_back(T * static_cast<double>(k) / steps);
  const auto end_sol = solve_mde(end);
  const double scale = end.eta / end_sol.rho;
  for (int k = -64; k <= 64; ++k) {
    const double gap = scale * std::pow(10.0, k / 8.0);
    if (gap < T) times.push_back(T - gap);
  }
  for (double t : extra_times) {
    require(t >= 0.0 && t <= T, "extra characteristic time outside [0, T]");
    times.push_back(t);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [T](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, T); }),
              times.end());
  times.back() = T;
  times.front() = 0.0;

  namespace odeint = boost::numeric::odeint;
  auto rhs = [z0](const double& eta, double& deta, double t) {
    if (!(eta > 0.0)) throw NumericalError("characteristic eta left (0, inf) at t=" + std::to_string(t));
    const cplx z = z0 * std::exp(-t / 2.0);
    deta = -solve_mde({z, eta}).a - 0.5 * eta;
  };

  std::vector<CharSample> samples;
  samples.reserve(times.size());
  std::vector<double> descending(times.rbegin(), times.rend());
  double eta = end.eta;
  auto stepper = odeint::make_dense_output(tolerance, tolerance, odeint::runge_kutta_dopri5<double>());
  odeint::integrate_times(stepper, rhs, eta, descending.begin(), descending.end(), -scale * 1e-3,
                          [&](const double& e, double t) {
                            if (!(e > 0.0)) throw NumericalError("characteristic eta not positive");
                            samples.push_back(detail::make_sample(t, z0, e));
                          });
  std::reverse(samples.begin(), samples.end());
  samples.back().eta = end.eta;
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (!(samples[i].eta < samples[i - 1].eta))
      throw NumericalError("characteristic eta not strictly decreasing");
  return {std::move(samples), T};
}

struct Landmarks {
  double t_star = 0.0;
  double kappa0 = 0.0;
  double S1 = 0.0;
  double S2 = 0.0;
  bool S1_clamped = false;
  bool S2_clamped = false;
  /// T - S1 and T - S2 before clamping. Ordering is decided on these, since
  /// T - gap rounds to T once the gaps drop below the spacing of doubles near T.
  double gap1 = 0.0;
  double gap2 = 0.0;

  /// S1 < S2 < T with S1 not clamped.
  [[nodiscard]] bool ordered(double T) const { return gap1 > gap2 && gap2 > 0.0 && gap1 <= T; }
};

/// S1 = T - N^{5 xi}/(N rho_T^2), S2 = T - (log N)^3/(N rho_T^2), clamped to
/// [0, T]; t* is the entry time into the unit disc; kappa0 = (|z0|-1)_+^{3/2} + eta0.
inline Landmarks landmark_times(double T, cplx z0, double eta0, double rho_T, double N, double xi) {
  require(N > 1.0, "landmarks need N > 1");
  Landmarks lm;
  const double r0 = std::abs(z0);
  // |z_t| = |z0| e^{-t/2} crosses 1 at t = 2 log|z0|.
  lm.t_star = r0 <= 1.0 ? 0.0 : std::min(T, 2.0 * std::log(r0));
  lm.kappa0 = std::pow(std::max(0.0, r0 - 1.0), 1.5) + eta0;
  const double denom = N * rho_T * rho_T;
  lm.gap1 = std::pow(N, 5.0 * xi) / denom;
  lm.gap2 = std::pow(std::log(N), 3.0) / denom;
  const double s1 = T - lm.gap1;
  const double s2 = T - lm.gap2;
  lm.S1 = std::clamp(s1, 0.0, T);
  lm.S2 = std::clamp(s2, 0.0, T);
  lm.S1_clamped = s1 != lm.S1;
  lm.S2_clamped = s2 != lm.S2;
  return lm;
}

inline Landmarks landmark_times(const Characteristic& c, double xi, double N) {
  if (!(xi > 0.0 && xi <= 0.01)) throw ArgumentError("xi must lie in (0, 0.01]");
  return landmark_times(c.T, c.start().z, c.start().eta, c.end().rho, N, xi);
}

/// p_{s,t} = exp(int_s^t (1/2 + <M'_r>) dr) by the trapezoid rule over samples.
inline double propagator(const Characteristic& c, double s, double t) {
  if (s > t) throw ArgumentError("propagator needs s <= t");
  if (s == t) return 1.0;
  const CharSample a = c.at(s);
  const CharSample b = c.at(t);
  double integral = 0.0;
  double prev_t = a.t;
  double prev_phi = 0.5 + a.m_prime;
  for (const auto& smp : c.samples) {
    if (smp.t <= s || smp.t >= t) continue;
    const double phi = 0.5 + smp.m_prime;
    integral += 0.5 * (phi + prev_phi) * (smp.t - prev_t);
    prev_t = smp.t;
    prev_phi = phi;
  }
  integral += 0.5 * (0.5 + b.m_prime + prev_phi) * (b.t - prev_t);
  return std::exp(integral);
}

struct LemmaCharsReport {
  double N = 0.0;
  double xi = 0.0;
  double factor = kEnvelopeFactor;
  Landmarks landmarks;
  /// (i) eta0/rho0 against N^{-xi}: worst of ratio and inverse ratio.
  double item1_ratio = 0.0;
  bool item1 = false;
  /// (ii) min N eta_s rho_s over s <= S1 (resp. S2) relative to N^{5xi} (resp. (log N)^3).
  double item2_s1_ratio = 0.0;
  double item2_s2_ratio = 0.0;
  bool ordering = false;
  bool item2 = false;
  /// (iii) the three eta ratios, each normalized so that >= 1/F (or <= F) passes.
  double item3_total_ratio = 0.0;
  double item3_s2_ratio = 0.0;
  double item3_s1_ratio = 0.0;
  bool item3 = false;

  [[nodiscard]] bool all() const { return item1 && item2 && item3 && ordering; }
};

/// Audits the landmark estimates for a characteristic ending at `end` with
/// horizon T = N^{-xi}. N is symbolic: no matrix is involved.
inline LemmaCharsReport check_lemma_chars(const SpectralPoint& end, double N, double xi,
                                          double factor = kEnvelopeFactor, int steps = 512) {
  if (!(xi > 0.0 && xi <= 0.01))
    throw PreconditionError("hypothesis failed: xi must lie in (0, 0.01]");
  if (!(N > 1.0)) throw PreconditionError("hypothesis failed: N > 1");
  end.validate();
  if (std::abs(end.z) > 1.0 + std::pow(N, -10.0 * xi))
    throw PreconditionError("hypothesis failed: |z_T| <= 1 + N^{-10 xi}");
  const auto end_sol = solve_mde(end);
  const double A = end.eta * end_sol.rho;
  if (A < 1.0 / N) throw PreconditionError("hypothesis failed: A = eta rho >= 1/N");
  if (A > std::pow(N, -20.0 * xi)) throw PreconditionError("hypothesis failed: A = eta rho <= N^{-20 xi}");

  const double T = std::pow(N, -xi);
  const cplx z0 = end.z * std::exp(T / 2.0);
  // Landmarks depend only on T, z0 and rho_T; eta0 is filled in after integration.
  Landmarks pre = landmark_times(T, z0, 0.0, end_sol.rho, N, xi);
  const double extra[] = {pre.S1, pre.S2};
  const Characteristic c = integrate_backward(end, T, steps, extra);

  LemmaCharsReport r;
  r.N = N;
  r.xi = xi;
  r.factor = factor;
  r.landmarks = landmark_times(c, xi, N);
  const auto& s0 = c.start();
  const auto& sT = c.end();
  const double logN = std::log(N);

  const double target1 = std::pow(N, -xi);
  const double q1 = (s0.eta / s0.rho) / target1;
  r.item1_ratio = std::max(q1, 1.0 / q1);
  r.item1 = r.item1_ratio <= factor;

  r.ordering = r.landmarks.ordered(T);
  double min_s1 = INFINITY, min_s2 = INFINITY;
  for (const auto& s : c.samples) {
    const double v = N * s.eta * s.rho;
    if (s.t <= r.landmarks.S1 + 1e-15) min_s1 = std::min(min_s1, v);
    if (s.t <= r.landmarks.S2 + 1e-15) min_s2 = std::min(min_s2, v);
  }
  r.item2_s1_ratio = min_s1 / std::pow(N, 5.0 * xi);
  r.item2_s2_ratio = min_s2 / std::pow(logN, 3.0);
  r.item2 = r.item2_s1_ratio >= 1.0 / factor && r.item2_s2_ratio >= 1.0 / factor;

  const CharSample at_s1 = c.at(r.landmarks.S1);
  const CharSample at_s2 = c.at(r.landmarks.S2);
  r.item3_total_ratio = (s0.eta / sT.eta) / std::pow(N, 9.0 * xi);
  r.item3_s2_ratio = (at_s2.eta / sT.eta) / std::pow(logN, 3.0);
  r.item3_s1_ratio = (s0.eta / at_s1.eta) / std::pow(N, 4.0 * xi);
  r.item3 = r.item3_total_ratio >= 1.0 / factor && r.item3_s2_ratio <= factor &&
            r.item3_s1_ratio >= 1.0 / factor;
  return r;
}

}  // namespace rmtlab
