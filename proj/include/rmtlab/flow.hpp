#pragma once

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmtlab/characteristics.hpp"
#include "rmtlab/ensemble.hpp"
#include "rmtlab/locallaw.hpp"
#include "rmtlab/parallel.hpp"
#include "rmtlab/stats.hpp"

namespace rmtlab {

namespace detail {

/// Resolvent powers of the Hermitization through the SVD of Y = X - z.
///
/// With Y = U S V*, every power G^p is block-diagonal in the singular basis:
/// G^p = [[U d U*, U o V*], [V o U*, V d V*]] for scalar sequences d, o.
class SvdResolvent {
 public:
  SvdResolvent(const CMatrix& x, cplx z, double eta) : eta_(eta), n_(x.rows()) {
    CMatrix y = x;
    y.diagonal().array() -= z;
    Eigen::BDCSVD<CMatrix> svd(y, Eigen::ComputeFullU | Eigen::ComputeFullV);
    s_ = svd.singularValues();
    u_ = svd.matrixU();
    v_ = svd.matrixV();
    if (!s_.allFinite() || !u_.allFinite() || !v_.allFinite())
      throw NumericalError("singular value decomposition produced non-finite values");
  }

  [[nodiscard]] Index n() const { return n_; }

  /// Diagonal-block and off-diagonal-block coefficients of G^p, p in 1..3.
  void coefficients(int p, CVector& d, CVector& o) const {
    const cplx w(0.0, eta_);
    d.resize(n_);
    o.resize(n_);
    for (Index k = 0; k < n_; ++k) {
      const double s = s_(k);
      const cplx den = s * s - w * w;
      switch (p) {
        case 1:
          d(k) = w / den;
          o(k) = s / den;
          break;
        case 2:
          d(k) = (s * s + w * w) / (den * den);
          o(k) = 2.0 * s * w / (den * den);
          break;
        case 3:
          d(k) = w * (3.0 * s * s + w * w) / (den * den * den);
          o(k) = s * (s * s + 3.0 * w * w) / (den * den * den);
          break;
        default: throw ArgumentError("resolvent power must be 1, 2 or 3");
      }
    }
  }

  /// <G^p> = (1/N) sum_k d_k.
  [[nodiscard]] cplx trace(int p) const {
    CVector d, o;
    coefficients(p, d, o);
    return d.sum() / static_cast<double>(n_);
  }

  [[nodiscard]] CMatrix upper(const CVector& o) const { return u_ * o.asDiagonal() * v_.adjoint(); }
  [[nodiscard]] CMatrix lower(const CVector& o) const { return v_ * o.asDiagonal() * u_.adjoint(); }

  /// Re (U* dB V)_kk, the only part of dB that <G^p B(dB)> sees.
  [[nodiscard]] Eigen::VectorXd noise_coordinates(const CMatrix& dB) const {
    const CMatrix w = u_.adjoint() * dB;
    Eigen::VectorXd c(n_);
    for (Index k = 0; k < n_; ++k) c(k) = (w.row(k).transpose().cwiseProduct(v_.col(k))).sum().real();
    return c;
  }

  /// G^p y for a 2N vector, with conjugated coefficients when `adjoint`.
  [[nodiscard]] CVector apply(int p, const CVector& y, bool adjoint = false) const {
    CVector d, o;
    coefficients(p, d, o);
    if (adjoint) {
      d = d.conjugate();
      o = o.conjugate();
    }
    const CVector a = u_.adjoint() * y.head(n_);
    const CVector b = v_.adjoint() * y.tail(n_);
    CVector out(2 * n_);
    out.head(n_) = u_ * (d.cwiseProduct(a) + o.cwiseProduct(b));
    out.tail(n_) = v_ * (o.cwiseProduct(a) + d.cwiseProduct(b));
    return out;
  }

 private:
  double eta_;
  Index n_;
  Eigen::VectorXd s_;
  CMatrix u_, v_;
};

}  // namespace detail

/// One recorded time of a flow trajectory. Increments refer to the step that
/// starts at `t` and are zero on the final record.
struct FlowRecord {
  double t = 0.0;
  cplx z;
  double eta = 0.0;
  double rho = 0.0;
  cplx m;
  double m_prime = 0.0;

  cplx X1;      ///< <G - M>
  cplx X2;      ///< <G^2 - M'>
  cplx Xiso;    ///< (G - M)_xy
  cplx G2;      ///< <G^2>
  cplx G3;      ///< <G^3>
  /// (1/N) sum over i != j of <G^2 E_i G^t E_j>.
  cplx beta_term;

  cplx dN;
  cplx dN_hat;
  cplx dN_tilde;

  /// Quadratic-variation integrands for N and N-hat in the trace form with
  /// the sum over i != j (real case includes the transpose term).
  double qv_rate = 0.0;
  double qv_rate_hat = 0.0;
  /// E[|dN|^2 | F_t] / dt for the increments actually drawn.
  double cond_var_rate = 0.0;

  bool gate = true;  ///< |<G - M>| <= rho
  double second_moment = 0.0;

  /// Phi(t) = 1/2 + <M'>.
  [[nodiscard]] double phi() const { return 0.5 + m_prime; }

  /// Drift of X1 with the Ito terms: Phi X1 + X1 X2 (+ beta term).
  [[nodiscard]] cplx drift(bool with_beta) const {
    return phi() * X1 + X1 * X2 + (with_beta ? beta_term : cplx(0.0));
  }

  /// Drift of X1 when the Brownian increments are zero: no Ito terms.
  [[nodiscard]] cplx drift_noise_off() const { return 0.5 * X1 - m * G2; }
};

struct FlowOptions {
  bool noise = true;
  std::uint64_t seed = 0;
  /// Probes for Xiso; empty means x = y = (0, e_1).
  CVector x, y;
  /// Keep X_t at every record (small N diagnostics).
  bool keep_matrices = false;
};

struct FlowTrajectory {
  Characteristic characteristic;
  std::vector<FlowRecord> records;
  double dt = 0.0;
  std::uint64_t seed = 0;
  Field field = Field::complex;
  Index n = 0;
  bool noise = true;
  std::vector<CMatrix> matrices;

  [[nodiscard]] std::size_t size() const { return records.size(); }
  [[nodiscard]] std::vector<double> times() const {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.t);
    return out;
  }
  [[nodiscard]] std::vector<cplx> X1ave() const {
    std::vector<cplx> out;
    for (const auto& r : records) out.push_back(r.X1);
    return out;
  }
};

/// Step size min(1e-3, 10 eta_T^2), rounded down so that it divides T.
inline double default_flow_dt(double T, double eta_T) {
  require(T > 0.0 && eta_T > 0.0, "flow step needs T > 0 and eta_T > 0");
  const double target = std::min(1e-3, 10.0 * eta_T * eta_T);
  return T / std::ceil(T / target - 1e-9);
}

/// Characteristic sampled on the uniform grid k dt, k = 0..T/dt.
inline Characteristic flow_characteristic(const SpectralPoint& end, double T, double dt) {
  require(dt > 0.0 && dt <= T, "flow step must lie in (0, T]");
  const double steps = std::round(T / dt);
  require(std::abs(steps * dt - T) <= 1e-9 * T, "flow step must divide the horizon T");
  return integrate_backward(end, T, static_cast<int>(steps));
}

/// Euler-Maruyama OU flow with the resolvent evaluated along a characteristic.
///
/// The Brownian increment of step k drives X_k -> X_{k+1} and, with G at step k,
/// gives the recorded martingale increments of that step.
inline FlowTrajectory simulate_flow(const RandomMatrix& x0, const Characteristic& c, double dt,
                                    const FlowOptions& opt = {}) {
  const Index n = x0.n();
  require(n >= 2 && n <= 256, "simulate_flow supports 2 <= N <= 256");
  require(dt > 0.0 && dt <= kMaxOuStep, "flow step must lie in (0, 1e-2]");
  const double steps_real = std::round(c.T / dt);
  require(steps_real >= 1 && std::abs(steps_real * dt - c.T) <= 1e-9 * c.T,
          "flow step must divide the characteristic horizon");
  const auto steps = static_cast<std::size_t>(steps_real);
  const CVector x = opt.x.size() ? opt.x : Probe::lower_coordinate(n, 0).v;
  const CVector y = opt.y.size() ? opt.y : x;
  require(x.size() == 2 * n && y.size() == 2 * n, "flow probes must have dimension 2N");

  FlowTrajectory out;
  out.characteristic = c;
  out.dt = dt;
  out.seed = opt.seed;
  out.field = x0.spec.field;
  out.n = n;
  out.noise = opt.noise;
  out.records.reserve(steps + 1);

  RngStream rng(opt.seed);
  RandomMatrix xt = x0;
  const double nn = static_cast<double>(n);
  const double inv_sqrt_n = 1.0 / std::sqrt(nn);
  const bool real = x0.spec.field == Field::real;

  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = c.T * static_cast<double>(k) / static_cast<double>(steps);
    const auto idx = c.find(t, 1e-12 * std::max(1.0, c.T));
    if (idx < 0) throw ArgumentError("flow time " + std::to_string(t) + " is not a characteristic sample");
    const CharSample& cs = c.samples[static_cast<std::size_t>(idx)];

    FlowRecord r;
    r.t = t;
    r.z = cs.z;
    r.eta = cs.eta;
    r.rho = cs.rho;
    r.m_prime = cs.m_prime;
    const auto sol = solve_mde({cs.z, cs.eta});
    r.m = sol.m();
    r.second_moment = normalized_second_moment(xt.entries);
    if (opt.keep_matrices) out.matrices.push_back(xt.entries);

    std::optional<detail::SvdResolvent> res;
    try {
      res.emplace(xt.entries, cs.z, cs.eta);
    } catch (const NumericalError& e) {
      throw NumericalError("flow step " + std::to_string(k) + ": " + e.what());
    }
    CVector d1, o1, d2, o2, d3, o3;
    res->coefficients(1, d1, o1);
    res->coefficients(2, d2, o2);
    res->coefficients(3, d3, o3);
    const cplx g1 = d1.sum() / nn;
    r.G2 = d2.sum() / nn;
    r.G3 = d3.sum() / nn;
    r.X1 = g1 - r.m;
    r.X2 = r.G2 - r.m_prime;
    const CVector gy = res->apply(1, y);
    r.Xiso = x.dot(gy) - build_M(sol, n).quadratic_form(x, y);
    r.gate = std::abs(r.X1) <= r.rho;
    if (!std::isfinite(std::abs(r.X1)) || !std::isfinite(std::abs(r.G2)))
      throw NumericalError("flow step " + std::to_string(k) + ": non-finite resolvent trace");

    const CMatrix a12 = res->upper(o2), a21 = res->lower(o2);
    const CMatrix g12 = res->upper(o1), g21 = res->lower(o1);
    const cplx tr = (a21.cwiseProduct(g21)).sum() + (a12.cwiseProduct(g12)).sum();
    r.beta_term = tr / (2.0 * nn * nn);

    if (real) {
      const CMatrix c12 = res->upper(o3), c21 = res->lower(o3);
      r.qv_rate = (a21 + a12.transpose()).squaredNorm() / (2.0 * nn * nn * nn);
      r.qv_rate_hat = (c21 + c12.transpose()).squaredNorm() / (2.0 * nn * nn * nn);
      r.cond_var_rate = r.qv_rate / 2.0;
    } else {
      r.qv_rate = o2.squaredNorm() / (nn * nn * nn);
      r.qv_rate_hat = o3.squaredNorm() / (nn * nn * nn);
      r.cond_var_rate = r.qv_rate / 2.0;
    }

    if (k < steps) {
      CMatrix dB = opt.noise ? brownian_increment(n, x0.spec.field, dt, rng) : CMatrix::Zero(n, n);
      if (opt.noise) {
        const Eigen::VectorXd cc = res->noise_coordinates(dB);
        r.dN = -inv_sqrt_n * (o2.array() * cc.array().cast<cplx>()).sum() / nn;
        r.dN_hat = -inv_sqrt_n * (o3.array() * cc.array().cast<cplx>()).sum() / nn;
        const CVector hx = res->apply(1, x, true);
        const cplx form = hx.head(n).dot(dB * gy.tail(n)) + hx.tail(n).dot(dB.adjoint() * gy.head(n));
        r.dN_tilde = -inv_sqrt_n * form;
      }
      xt = ou_step(xt, dt, dB);
    }
    out.records.push_back(r);
  }
  return out;
}

/// Independent trajectories: trajectory i draws X0 and its Brownian path from
/// substreams i of the ensemble and flow seeds.
inline std::vector<FlowTrajectory> simulate_flow_ensemble(const EnsembleSpec& spec, const Characteristic& c,
                                                          double dt, std::size_t count,
                                                          const FlowOptions& opt = {}) {
  spec.validate();
  std::vector<FlowTrajectory> out(count);
  const RngStream root(spec.seed);
  parallel_for(count, [&](std::size_t i) {
    const auto x0 = sample_iid(spec.with_seed(root.substream({0, i}).key()));
    FlowOptions o = opt;
    o.seed = root.substream({1, i}).key();
    out[i] = simulate_flow(x0, c, dt, o);
  });
  return out;
}

struct DriftPoint {
  double t = 0.0;
  cplx mean_fd;       ///< ensemble mean of (X1(t+dt) - X1(t)) / dt
  cplx mean_drift;    ///< ensemble mean of the theoretical drift at t
  cplx mean_dev;      ///< mean of per-trajectory fd - drift (after control variate)
  cplx mean_beta;     ///< ensemble mean of the beta term at t
  double se = 0.0;
  double allowance = 0.0;
  [[nodiscard]] double sigmas() const { return se > 0.0 ? std::abs(mean_dev) / se : 0.0; }
  [[nodiscard]] bool pass() const { return std::abs(mean_dev) <= 3.0 * se + allowance; }
};

struct DriftReport {
  bool with_beta = false;
  bool control_variate = true;
  std::vector<DriftPoint> points;
  [[nodiscard]] double max_sigmas() const {
    double w = 0.0;
    for (const auto& p : points) w = std::max(w, p.sigmas());
    return w;
  }
  /// Largest |mean deviation| / (3 SE + allowance); <= 1 is a pass.
  [[nodiscard]] double worst_ratio() const {
    double w = 0.0;
    for (const auto& p : points) w = std::max(w, std::abs(p.mean_dev) / (3.0 * p.se + p.allowance));
    return w;
  }
  [[nodiscard]] bool pass() const {
    return std::all_of(points.begin(), points.end(), [](const DriftPoint& p) { return p.pass(); });
  }
  /// Separation of the beta term from zero, max over t of |mean beta| / SE.
  [[nodiscard]] double beta_power() const {
    double w = 0.0;
    for (const auto& p : points)
      if (p.se > 0.0) w = std::max(w, std::abs(p.mean_beta) / p.se);
    return w;
  }
};

struct DriftOptions {
  bool with_beta = false;
  /// Subtract the recorded martingale increment dN from each finite difference.
  bool control_variate = true;
  std::size_t min_trajectories = 100;
};

/// Ensemble-mean finite difference of X1 against the drift of the X1 equation.
///
/// The O(dt) allowance is 10 dt |d(drift)/dt|, the drift's rate of change
/// estimated from consecutive records.
inline DriftReport drift_consistency(const std::vector<FlowTrajectory>& ens, const DriftOptions& opt = {}) {
  if (ens.size() < std::max<std::size_t>(opt.min_trajectories, 2))
    throw ArgumentError("drift consistency needs at least " + std::to_string(opt.min_trajectories) +
                        " trajectories");
  const auto& ref = ens.front();
  for (const auto& tr : ens) {
    if (tr.dt != ref.dt || tr.size() != ref.size() || tr.noise != ref.noise || tr.n != ref.n)
      throw ArgumentError("drift consistency needs a common dt, characteristic and mode");
    for (std::size_t k = 0; k < tr.size(); ++k)
      if (tr.records[k].t != ref.records[k].t || tr.records[k].eta != ref.records[k].eta)
        throw ArgumentError("drift consistency needs a common characteristic");
  }
  DriftReport rep;
  rep.with_beta = opt.with_beta;
  rep.control_variate = opt.control_variate;
  const double dt = ref.dt;
  const std::size_t K = ref.size();
  for (std::size_t k = 0; k + 1 < K; ++k) {
    std::vector<cplx> fd, drift, dev, slope, beta;
    for (const auto& tr : ens) {
      const auto& a = tr.records[k];
      const auto& b = tr.records[k + 1];
      cplx f = (b.X1 - a.X1) / dt;
      const cplx dr = tr.noise ? a.drift(opt.with_beta) : a.drift_noise_off();
      const cplx dr_next = tr.noise ? b.drift(opt.with_beta) : b.drift_noise_off();
      fd.push_back(f);
      if (opt.control_variate) f -= a.dN / dt;
      drift.push_back(dr);
      dev.push_back(f - dr);
      slope.push_back((dr_next - dr) / dt);
      beta.push_back(a.beta_term);
    }
    DriftPoint p;
    p.t = ref.records[k].t;
    p.mean_fd = stats::mean(std::span<const cplx>(fd));
    p.mean_drift = stats::mean(std::span<const cplx>(drift));
    p.mean_dev = stats::mean(std::span<const cplx>(dev));
    p.mean_beta = stats::mean(std::span<const cplx>(beta));
    p.se = stats::standard_error(std::span<const cplx>(dev));
    p.allowance = 10.0 * dt * std::abs(stats::mean(std::span<const cplx>(slope)));
    rep.points.push_back(p);
  }
  return rep;
}

/// Largest |fd - drift| of a noise-off trajectory over times that are
/// multiples of `stride` dt.
inline double noise_off_error(const FlowTrajectory& tr, std::size_t stride = 1) {
  require(!tr.noise, "noise_off_error needs a noise-off trajectory");
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < tr.size(); k += stride) {
    const auto& a = tr.records[k];
    const cplx fd = (tr.records[k + 1].X1 - a.X1) / tr.dt;
    worst = std::max(worst, std::abs(fd - a.drift_noise_off()));
  }
  return worst;
}

struct OrderReport {
  double err_coarse = 0.0;
  double err_fine = 0.0;
  [[nodiscard]] double order() const { return std::log2(err_coarse / err_fine); }
};

/// Observed order of the noise-off drift check under dt-halving.
inline OrderReport noise_off_order(const RandomMatrix& x0, const SpectralPoint& end, double T, double dt) {
  const auto c = flow_characteristic(end, T, dt / 2.0);
  FlowOptions o;
  o.noise = false;
  const auto coarse = simulate_flow(x0, c, dt, o);
  const auto fine = simulate_flow(x0, c, dt / 2.0, o);
  return {noise_off_error(coarse, 1), noise_off_error(fine, 2)};
}

struct QvWindow {
  std::size_t first = 0;
  std::size_t steps = 0;
  double realized = 0.0, envelope = 0.0;
  double realized_hat = 0.0, envelope_hat = 0.0;
  [[nodiscard]] bool pass() const { return realized <= envelope && realized_hat <= envelope_hat; }
};

struct QvReport {
  std::vector<QvWindow> windows;
  std::size_t gated_out = 0;
  std::size_t integrand_checked = 0;
  std::size_t integrand_violations = 0;
  double worst_integrand_ratio = 0.0;
  double worst_integrand_ratio_hat = 0.0;
  [[nodiscard]] std::size_t windows_passed() const {
    return static_cast<std::size_t>(std::count_if(windows.begin(), windows.end(), [](const QvWindow& w) { return w.pass(); }));
  }
  [[nodiscard]] double pass_fraction() const {
    return windows.empty() ? 1.0 : static_cast<double>(windows_passed()) / static_cast<double>(windows.size());
  }
};

/// Realized quadratic variation of N and N-hat over windows against
/// slack * sum 8 rho dt / (N^2 eta^3) (resp. 20 rho dt / (N^2 eta^5)), plus the
/// deterministic integrand bound at every gated step.
inline QvReport qv_bound_check(const FlowTrajectory& tr, std::size_t window = 32, double slack = 5.0) {
  require(window >= 1, "QV window must hold at least one step");
  QvReport rep;
  const double n2 = static_cast<double>(tr.n) * static_cast<double>(tr.n);
  const std::size_t steps = tr.size() > 0 ? tr.size() - 1 : 0;
  QvWindow cur;
  for (std::size_t k = 0; k < steps; ++k) {
    const auto& r = tr.records[k];
    if (cur.steps == 0) cur.first = k;
    const double bound = 8.0 * r.rho / (n2 * std::pow(r.eta, 3));
    const double bound_hat = 20.0 * r.rho / (n2 * std::pow(r.eta, 5));
    if (r.gate) {
      ++rep.integrand_checked;
      rep.worst_integrand_ratio = std::max(rep.worst_integrand_ratio, r.qv_rate / bound);
      rep.worst_integrand_ratio_hat = std::max(rep.worst_integrand_ratio_hat, r.qv_rate_hat / bound_hat);
      if (r.qv_rate > bound || r.qv_rate_hat > bound_hat) ++rep.integrand_violations;
      cur.realized += std::norm(r.dN);
      cur.realized_hat += std::norm(r.dN_hat);
      cur.envelope += slack * bound * tr.dt;
      cur.envelope_hat += slack * bound_hat * tr.dt;
    } else {
      ++rep.gated_out;
    }
    if (++cur.steps == window) {
      rep.windows.push_back(cur);
      cur = {};
    }
  }
  return rep;
}

struct MartingaleMeanReport {
  std::size_t steps = 0;
  std::size_t within = 0;  ///< steps where all three means are within 3 SE of 0
  double worst_sigmas = 0.0;
  [[nodiscard]] bool all_within() const { return within == steps; }
};

/// Ensemble mean of each recorded increment against 3 standard errors.
inline MartingaleMeanReport martingale_means(const std::vector<FlowTrajectory>& ens) {
  require(ens.size() >= 2, "martingale check needs at least two trajectories");
  MartingaleMeanReport rep;
  const std::size_t K = ens.front().size();
  for (std::size_t k = 0; k + 1 < K; ++k) {
    bool ok = true;
    for (int which = 0; which < 3; ++which) {
      std::vector<cplx> v;
      for (const auto& tr : ens) {
        const auto& r = tr.records[k];
        v.push_back(which == 0 ? r.dN : which == 1 ? r.dN_hat : r.dN_tilde);
      }
      const double se = stats::standard_error(std::span<const cplx>(v));
      const double dev = std::abs(stats::mean(std::span<const cplx>(v)));
      const double sig = se > 0.0 ? dev / se : 0.0;
      rep.worst_sigmas = std::max(rep.worst_sigmas, sig);
      ok = ok && dev <= 3.0 * se;
    }
    ++rep.steps;
    rep.within += ok;
  }
  return rep;
}

}  // namespace rmtlab
