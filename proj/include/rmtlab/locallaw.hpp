#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rmtlab/core.hpp"
#include "rmtlab/ensemble.hpp"
#include "rmtlab/hermitization.hpp"
#include "rmtlab/mde.hpp"
#include "rmtlab/parallel.hpp"

namespace rmtlab {

struct DomainParams {
  double C = 1.0;
  double xi = 0.01;
  Index N = 0;

  void validate() const {
    if (!(C >= 1.0)) throw ArgumentError("domain constant C must be >= 1");
    if (!(xi > 0.0 && xi <= 0.01)) throw ArgumentError("domain xi must lie in (0, 1/100]");
    if (N < 2) throw ArgumentError("domain N must be >= 2");
  }
};

/// Per-gate outcome of the domain predicate.
struct DomainCheck {
  bool product = false;  // N eta rho >= 100 C^2 log N
  bool ratio = false;    // eta / rho <= N^{-xi}
  bool modulus = false;  // |z| <= 1 + N^{-xi}
  double n_eta_rho = 0.0;
  double eta_over_rho = 0.0;

  [[nodiscard]] bool all() const { return product && ratio && modulus; }
  [[nodiscard]] std::string failed_gates() const {
    std::string out;
    if (!product) out += "product ";
    if (!ratio) out += "ratio ";
    if (!modulus) out += "modulus ";
    if (!out.empty()) out.pop_back();
    return out;
  }
};

/// Domain membership. N may be synthetic (no matrix involved).
inline DomainCheck in_domain(const SpectralPoint& point, const DomainParams& p) {
  p.validate();
  const auto sol = solve_mde(point);
  const double N = static_cast<double>(p.N);
  DomainCheck d;
  d.n_eta_rho = N * point.eta * sol.rho;
  d.eta_over_rho = point.eta / sol.rho;
  d.product = d.n_eta_rho >= 100.0 * p.C * p.C * std::log(N);
  d.ratio = d.eta_over_rho <= std::pow(N, -p.xi);
  d.modulus = std::abs(point.z) <= 1.0 + std::pow(N, -p.xi);
  return d;
}

struct LocalLawSample {
  SpectralPoint point;
  Index N = 0;
  double rho = 0.0;
  cplx avg_err;
  cplx iso_err;
  cplx Z1;
  cplx Z2;
  std::string B_descriptor;
  std::string x_descriptor;
  std::string y_descriptor;

  /// Z1 = N eta avg_err, Z2 = sqrt(N eta / rho) iso_err.
  [[nodiscard]] double z1_scale() const { return static_cast<double>(N) * point.eta; }
  [[nodiscard]] double z2_scale() const { return std::sqrt(static_cast<double>(N) * point.eta / rho); }
};

/// Unit probe vectors in C^{2N}, labelled for reports.
struct Probe {
  CVector v;
  std::string label;

  /// (0, e_k): coordinate vector in the lower half, the choice in the
  /// delocalization reduction.
  static Probe lower_coordinate(Index n, Index k) {
    require(k >= 0 && k < n, "coordinate probe index out of range");
    CVector v = CVector::Zero(2 * n);
    v(n + k) = 1.0;
    return {std::move(v), "lower e" + std::to_string(k)};
  }
  static Probe upper_coordinate(Index n, Index k) {
    require(k >= 0 && k < n, "coordinate probe index out of range");
    CVector v = CVector::Zero(2 * n);
    v(k) = 1.0;
    return {std::move(v), "upper e" + std::to_string(k)};
  }
  static Probe random(Index n, RngStream& rng, bool real = false) {
    CVector v(2 * n);
    for (Index i = 0; i < 2 * n; ++i) v(i) = real ? cplx(rng.normal(), 0.0) : cplx(rng.normal(), rng.normal());
    v /= v.norm();
    return {std::move(v), real ? "random real" : "random complex"};
  }
};

namespace detail {

inline cplx averaged_G_trace(const ResolventHandle& r, const Observable& b) {
  switch (b.kind()) {
    case Observable::Kind::identity: return resolvent_trace_via_gram(r.hermitization(), r.eta());
    case Observable::Kind::e1:
    case Observable::Kind::e2: return 0.5 * resolvent_trace_via_gram(r.hermitization(), r.eta());
    default: return averaged_trace(r, b);
  }
}

}  // namespace detail

/// Local-law errors at one spectral point given a factorized resolvent.
/// <G E_i> = <G>/2 holds exactly for the Hermitization, so the selector
/// observables reuse the identity trace.
inline LocalLawSample sample_errors(const ResolventHandle& r, const Observable& B, const Probe& x, const Probe& y) {
  const Hermitization& h = r.hermitization();
  const SpectralPoint point{h.z(), r.eta()};
  const auto sol = solve_mde(point);
  const auto M = build_M(sol, h.n());
  LocalLawSample s;
  s.point = point;
  s.N = h.n();
  s.rho = sol.rho;
  s.avg_err = B.kind() == Observable::Kind::zero ? cplx(0.0) : detail::averaged_G_trace(r, B) - averaged_trace_M(M, B);
  s.iso_err = iso_entry(r, x.v, y.v) - M.quadratic_form(x.v, y.v);
  s.Z1 = s.z1_scale() * s.avg_err;
  s.Z2 = s.z2_scale() * s.iso_err;
  s.B_descriptor = B.describe();
  s.x_descriptor = x.label;
  s.y_descriptor = y.label;
  return s;
}

inline LocalLawSample sample_errors(const RandomMatrix& X, const SpectralPoint& point, const Observable& B,
                                    const Probe& x, const Probe& y) {
  point.validate();
  const ResolventHandle r(std::make_shared<const Hermitization>(X.entries, point.z), point.eta);
  return sample_errors(r, B, x, y);
}

/// How eta is chosen at each z of a grid scan.
struct EtaRule {
  enum class Kind { fixed, product };
  Kind kind = Kind::fixed;
  std::vector<double> etas;  // fixed
  double c = 200.0;          // product: eta rho = c log N / N

  static EtaRule fixed(std::vector<double> e) { return {Kind::fixed, std::move(e), 0.0}; }
  static EtaRule product(double c) { return {Kind::product, {}, c}; }
};

struct GridRow {
  std::size_t z_index = 0;
  cplx z;
  double eta = 0.0;
  /// Set when the row could not be evaluated (e.g. an unattainable product).
  std::optional<std::string> skipped;
  LocalLawSample sample;
  DomainCheck domain;
};

/// One row per (z, eta) in grid order. B = I, x = y = (0, e_0).
inline std::vector<GridRow> grid_scan(const RandomMatrix& X, const DomainParams& p, const std::vector<cplx>& z_grid,
                                      const EtaRule& rule) {
  p.validate();
  require(p.N == X.n(), "grid_scan: DomainParams.N must match the matrix");
  const double N = static_cast<double>(p.N);
  std::vector<GridRow> rows;
  for (std::size_t iz = 0; iz < z_grid.size(); ++iz) {
    if (rule.kind == EtaRule::Kind::fixed) {
      for (double eta : rule.etas) rows.push_back({iz, z_grid[iz], eta, std::nullopt, {}, {}});
    } else {
      GridRow row{iz, z_grid[iz], 0.0, std::nullopt, {}, {}};
      const double A = rule.c * std::log(N) / N;
      try {
        row.eta = solve_eta_for_product(z_grid[iz], A, ProductGate::relaxed);
      } catch (const OutOfRangeError& e) {
        row.skipped = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  const Probe probe = Probe::lower_coordinate(p.N, 0);
  parallel_for(rows.size(), [&](std::size_t i) {
    GridRow& row = rows[i];
    if (row.skipped) return;
    const SpectralPoint point{row.z, row.eta};
    row.domain = in_domain(point, p);
    row.sample = sample_errors(X, point, Observable::identity(), probe, probe);
  });
  return rows;
}

/// One bound comparison |value| <= bound.
struct BoundCheck {
  std::string label;
  double value = 0.0;
  double bound = 0.0;
  bool applicable = true;

  [[nodiscard]] bool holds() const { return !applicable || value <= bound; }
  [[nodiscard]] double ratio() const { return bound > 0.0 ? value / bound : INFINITY; }
};

struct SchwarzReport {
  double rho = 0.0;
  double eta = 0.0;
  double avg_im_G = 0.0;
  /// <Im G> <= 2 rho: the averaged event.
  bool avg_event = false;
  /// max_{u,v} |(G - M)_{uv}| <= rho over u, v in {x, y}: the isotropic event.
  bool iso_event = false;
  /// (Im G)_{v-bar v-bar} <= 2 rho and likewise for u-bar, needed for (G G^t)_{uv}.
  bool conj_event = false;
  std::vector<BoundCheck> checks;

  [[nodiscard]] bool all_hold() const {
    for (const auto& c : checks)
      if (!c.holds()) return false;
    return true;
  }
  [[nodiscard]] std::size_t applicable_count() const {
    std::size_t n = 0;
    for (const auto& c : checks) n += c.applicable;
    return n;
  }
  /// Largest value/bound over applicable checks.
  [[nodiscard]] double worst_ratio() const {
    double w = 0.0;
    for (const auto& c : checks)
      if (c.applicable) w = std::max(w, c.ratio());
    return w;
  }
};

/// The Schwarz-type bounds |<G^p B E_i (G^q)^t E_j>| <= 2 rho / eta^{p+q-1} for
/// the four selector pairs, and the three isotropic bounds at (u, v), each
/// evaluated on its event. Failing events mark checks not applicable.
inline SchwarzReport schwarz_checks(const ResolventHandle& r, const Observable& B, const CVector& u,
                                    const CVector& v, int p, int q) {
  require(p >= 1 && q >= 1 && p + q <= 4, "schwarz_checks needs p, q >= 1 and p + q <= 4");
  if (B.norm() > 1.0 + 1e-12) throw ArgumentError("schwarz_checks needs ||B|| <= 1");
  require_unit(u, "u");
  require_unit(v, "v");
  const Hermitization& h = r.hermitization();
  const Index n = h.n();
  const Index d = 2 * n;
  const double eta = r.eta();
  const auto sol = solve_mde({h.z(), eta});
  const auto M = build_M(sol, n);
  const CMatrix& G = r.dense();

  SchwarzReport rep;
  rep.rho = sol.rho;
  rep.eta = eta;
  rep.avg_im_G = normalized_trace(G).imag();
  rep.avg_event = rep.avg_im_G <= 2.0 * sol.rho;

  CMatrix Gp = G;
  for (int k = 1; k < p; ++k) Gp = Gp * G;
  CMatrix Gq = G;
  for (int k = 1; k < q; ++k) Gq = Gq * G;
  const CMatrix GpB = Gp * B.materialize(d);
  const CMatrix Gqt = Gq.transpose();
  const double avg_bound = 2.0 * sol.rho / std::pow(eta, p + q - 1);
  for (auto i : {Selector::e1, Selector::e2})
    for (auto j : {Selector::e1, Selector::e2}) {
      BoundCheck c;
      c.label = "avg p=" + std::to_string(p) + " q=" + std::to_string(q) + " i=" +
                std::to_string(static_cast<int>(i)) + " j=" + std::to_string(static_cast<int>(j));
      c.value = std::abs(selector_trace(GpB, i, Gqt, j));
      c.bound = avg_bound;
      c.applicable = rep.avg_event;
      rep.checks.push_back(c);
    }

  double iso_dev = 0.0;
  for (const CVector* a : {&u, &v})
    for (const CVector* b : {&u, &v})
      iso_dev = std::max(iso_dev, std::abs(a->dot(G * *b) - M.quadratic_form(*a, *b)));
  rep.iso_event = iso_dev <= sol.rho;
  const CMatrix imG = imaginary_part(G);
  const CVector ub = u.conjugate(), vb = v.conjugate();
  rep.conj_event = ub.dot(imG * ub).real() <= 2.0 * sol.rho && vb.dot(imG * vb).real() <= 2.0 * sol.rho;

  const CVector Gv = G * v;
  rep.checks.push_back({"iso (G^2)_uv", std::abs(u.dot(G * Gv)), 2.0 * sol.rho / eta, rep.iso_event});
  rep.checks.push_back({"iso (G G^t)_uv", std::abs(u.dot(G * (G.transpose() * v))), 2.0 * sol.rho / eta,
                        rep.iso_event && rep.conj_event});
  const Eigen::VectorXd sel1 = selector_diagonal(Selector::e1, n);
  const Eigen::VectorXd sel2 = selector_diagonal(Selector::e2, n);
  for (auto i : {Selector::e1, Selector::e2})
    for (auto j : {Selector::e1, Selector::e2}) {
      const Eigen::VectorXd& di = i == Selector::e1 ? sel1 : sel2;
      const Eigen::VectorXd& dj = j == Selector::e1 ? sel1 : sel2;
      CVector w = dj.cast<cplx>().cwiseProduct(Gv);
      w = di.cast<cplx>().cwiseProduct(G.transpose() * w);
      BoundCheck c;
      c.label = "iso (G E" + std::to_string(static_cast<int>(i)) + " G^t E" + std::to_string(static_cast<int>(j)) +
                " G)_uv";
      c.value = std::abs(u.dot(G * w));
      c.bound = 2.0 * sol.rho / (eta * eta);
      c.applicable = rep.iso_event;
      rep.checks.push_back(c);
    }
  return rep;
}

}  // namespace rmtlab
