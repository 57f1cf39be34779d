#pragma once

#include <complex>
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "rmtlab/ensemble.hpp"
#include "rmtlab/hermitization.hpp"
#include "rmtlab/locallaw.hpp"
#include "rmtlab/parallel.hpp"
#include "rmtlab/stats.hpp"

namespace rmtlab {

/// Residual tolerance relative to the operator norm of X.
inline constexpr double kEigenResidualTol = 1e-8;
/// Eigenvalue gaps below this (relative to ||X||) are flagged near-degenerate.
inline constexpr double kDegenerateGap = 1e-8;

struct EigenPair {
  cplx sigma;
  CVector r;  ///< right eigenvector, unit norm
  CVector l;  ///< left eigenvector (X* l = conj(sigma) l), unit norm
  double right_residual = 0.0;
  double left_residual = 0.0;
  bool near_degenerate = false;
  std::size_t index = 0;  ///< position in the |sigma|-sorted order
};

struct EigenDecomposition {
  std::vector<EigenPair> pairs;     ///< pairs passing the residual policy
  std::vector<EigenPair> rejected;  ///< pairs failing it (defective directions)
  double norm = 0.0;                ///< ||X||_2
  double condition = 0.0;           ///< condition number of the eigenvector matrix
  [[nodiscard]] bool near_defective() const {
    return !rejected.empty() ||
           std::any_of(pairs.begin(), pairs.end(), [](const EigenPair& p) { return p.near_degenerate; });
  }
};

namespace detail {

/// Eigenvalues and unit right eigenvectors through LAPACK zgeev.
inline void zgeev_right(const CMatrix& x, CVector& values, CMatrix& vectors) {
  const Index n = x.rows();
  CMatrix a = x;
  values.resize(n);
  vectors.resize(n, n);
  cplx dummy;
  const lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'V', static_cast<lapack_int>(n), a.data(),
                                        static_cast<lapack_int>(n), values.data(), &dummy, 1, vectors.data(),
                                        static_cast<lapack_int>(n));
  if (info != 0) {
    std::string msg = "eigensolver failed (zgeev info " + std::to_string(info) + ")";
    if (info > 0) msg += "; eigenvalues " + std::to_string(info) + ".." + std::to_string(n) + " converged, 0.." +
                         std::to_string(info - 1) + " did not";
    throw NumericalError(msg);
  }
}

}  // namespace detail

/// Dense non-symmetric eigendecomposition with left vectors from the rows of
/// V^{-1}. Pairs whose residuals exceed 1e-8 ||X|| are moved to `rejected`.
inline EigenDecomposition eigen_decompose(const CMatrix& x) {
  require(x.rows() == x.cols() && x.rows() >= 1, "eigen_decompose needs a square matrix");
  require(x.rows() <= 1024, "eigen_decompose supports N <= 1024");
  const Index n = x.rows();
  CVector ev;
  CMatrix v;
  detail::zgeev_right(x, ev, v);

  EigenDecomposition out;
  out.norm = Eigen::BDCSVD<CMatrix>(x).singularValues()(0);
  const double tol = kEigenResidualTol * out.norm;

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double ma = std::abs(ev(a)), mb = std::abs(ev(b));
    return ma != mb ? ma < mb : std::arg(ev(a)) < std::arg(ev(b));
  });

  for (Index j = 0; j < n; ++j) v.col(j).normalize();
  Eigen::FullPivLU<CMatrix> lu(v);
  const bool invertible = lu.isInvertible();
  const CMatrix w = invertible ? CMatrix(lu.inverse()) : CMatrix::Constant(n, n, cplx(NAN, NAN));
  out.condition = invertible ? 1.0 / lu.rcond() : INFINITY;

  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const Index j = order[pos];
    EigenPair p;
    p.index = pos;
    p.sigma = ev(j);
    p.r = v.col(j);
    p.l = w.row(j).adjoint();
    const double ln = p.l.norm();
    if (std::isfinite(ln) && ln > 0.0) p.l /= ln;
    p.right_residual = (x * p.r - p.sigma * p.r).norm();
    p.left_residual = (x.adjoint() * p.l - std::conj(p.sigma) * p.l).norm();
    for (Index k = 0; k < n; ++k)
      if (k != j && std::abs(ev(k) - ev(j)) < kDegenerateGap * std::max(out.norm, 1e-300)) p.near_degenerate = true;
    const bool ok = std::isfinite(p.right_residual) && std::isfinite(p.left_residual) && p.right_residual <= tol &&
                    p.left_residual <= tol && std::abs(p.r.norm() - 1.0) <= 1e-12 &&
                    std::abs(p.l.norm() - 1.0) <= 1e-12;
    (ok ? out.pairs : out.rejected).push_back(std::move(p));
  }
  return out;
}

inline EigenDecomposition eigen_decompose(const RandomMatrix& x) { return eigen_decompose(x.entries); }

/// Largest |<l_i, r_j>|, i != j, over accepted pairs whose eigenvalues are
/// separated from every other eigenvalue by more than `gap` ||X||.
inline double biorthogonality_defect(const EigenDecomposition& d, double gap = 1e-4) {
  std::vector<const EigenPair*> good;
  for (const auto& p : d.pairs) {
    bool separated = true;
    for (const auto& q : d.pairs)
      if (&q != &p && std::abs(q.sigma - p.sigma) <= gap * d.norm) separated = false;
    if (separated) good.push_back(&p);
  }
  double worst = 0.0;
  for (const auto* a : good)
    for (const auto* b : good)
      if (a != b) worst = std::max(worst, std::abs(a->l.dot(b->r)));
  return worst;
}

/// Orthonormal probe basis, stored as columns. An empty matrix is the
/// coordinate basis.
struct ProbeBasis {
  enum class Kind { coordinate, haar, user };
  Kind kind = Kind::coordinate;
  CMatrix q;
  std::string descriptor = "coordinate";

  static ProbeBasis coordinate() { return {}; }

  /// Haar-distributed unitary from the QR factorization of a complex Gaussian
  /// matrix, with R's diagonal phases absorbed.
  static ProbeBasis haar(Index n, RngStream& rng) {
    CMatrix g(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) g(i, j) = cplx(rng.normal(), rng.normal());
    Eigen::HouseholderQR<CMatrix> qr(g);
    CMatrix q = qr.householderQ();
    const CMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < n; ++j) {
      const cplx d = r(j, j);
      if (std::abs(d) > 0.0) q.col(j) *= d / std::abs(d);
    }
    return {Kind::haar, std::move(q), "haar"};
  }

  static ProbeBasis user(CMatrix q, std::string label = "user") {
    const Index n = q.cols();
    require(q.rows() == n, "probe basis must be square");
    const double dev = (q.adjoint() * q - CMatrix::Identity(n, n)).cwiseAbs().maxCoeff();
    if (!(dev <= 1e-10)) throw ArgumentError("probe basis is not orthonormal (max deviation " + std::to_string(dev) + ")");
    return {Kind::user, std::move(q), std::move(label)};
  }
};

struct DelocReport {
  Index N = 0;
  std::string basis;
  std::vector<cplx> sigmas;
  std::vector<double> max_r;  ///< per pair, max over probes x of |<x, r>|
  std::vector<double> max_l;  ///< per pair, max over probes x of |<x, l>|
  double statistic = 0.0;
  std::size_t rejected = 0;
  std::uint64_t seed = 0;

  [[nodiscard]] static double scale(Index n) {
    const double nn = static_cast<double>(n);
    return std::sqrt(nn / std::log(nn));
  }
  /// sqrt(N / log N) max_i (max_r_i + max_l_i), from the stored maxima.
  [[nodiscard]] double recompute() const {
    double w = 0.0;
    for (std::size_t i = 0; i < max_r.size(); ++i) w = std::max(w, max_r[i] + max_l[i]);
    return scale(N) * w;
  }
};

/// Delocalization statistic over a probe basis. For the coordinate basis the
/// inner maxima are the sup-norms of r and l.
inline DelocReport deloc_statistic(const std::vector<EigenPair>& pairs, const ProbeBasis& basis, Index n) {
  require(n >= 2, "deloc_statistic needs N >= 2");
  if (basis.kind != ProbeBasis::Kind::coordinate) {
    require(basis.q.rows() == n && basis.q.cols() == n, "probe basis dimension mismatch");
    const double dev = (basis.q.adjoint() * basis.q - CMatrix::Identity(n, n)).cwiseAbs().maxCoeff();
    if (!(dev <= 1e-10)) throw ArgumentError("probe basis is not orthonormal (max deviation " + std::to_string(dev) + ")");
  }
  DelocReport rep;
  rep.N = n;
  rep.basis = basis.descriptor;
  const std::size_t m = pairs.size();
  if (m == 0) return rep;
  CMatrix R(n, static_cast<Index>(m)), L(n, static_cast<Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    require(pairs[i].r.size() == n && pairs[i].l.size() == n, "eigenvector dimension mismatch");
    R.col(static_cast<Index>(i)) = pairs[i].r;
    L.col(static_cast<Index>(i)) = pairs[i].l;
  }
  if (basis.kind != ProbeBasis::Kind::coordinate) {
    R = basis.q.adjoint() * R;
    L = basis.q.adjoint() * L;
  }
  for (std::size_t i = 0; i < m; ++i) {
    rep.sigmas.push_back(pairs[i].sigma);
    rep.max_r.push_back(R.col(static_cast<Index>(i)).cwiseAbs().maxCoeff());
    rep.max_l.push_back(L.col(static_cast<Index>(i)).cwiseAbs().maxCoeff());
  }
  rep.statistic = rep.recompute();
  return rep;
}

struct DelocTrials {
  std::vector<DelocReport> coordinate;
  std::vector<DelocReport> haar;
  [[nodiscard]] static std::vector<double> statistics(const std::vector<DelocReport>& r) {
    std::vector<double> out;
    for (const auto& x : r) out.push_back(x.statistic);
    return out;
  }
};

/// Trial i decomposes the matrix from substream {0, i} of the spec seed and
/// probes it in the coordinate basis and in a Haar basis from substream {1, i}.
inline DelocTrials deloc_trials(const EnsembleSpec& spec, std::size_t trials) {
  spec.validate();
  DelocTrials out;
  out.coordinate.resize(trials);
  out.haar.resize(trials);
  const RngStream root(spec.seed);
  parallel_for(trials, [&](std::size_t i) {
    const auto x = sample_iid(spec.with_seed(root.substream({0, i}).key()));
    const auto d = eigen_decompose(x);
    RngStream brng = root.substream({1, i});
    out.coordinate[i] = deloc_statistic(d.pairs, ProbeBasis::coordinate(), x.n());
    out.haar[i] = deloc_statistic(d.pairs, ProbeBasis::haar(x.n(), brng), x.n());
    out.coordinate[i].rejected = out.haar[i].rejected = d.rejected.size();
    out.coordinate[i].seed = out.haar[i].seed = x.spec.seed;
  });
  return out;
}

/// How eta is chosen in the spectral-theorem bound.
struct EtaChoice {
  enum class Kind { product_strict, product_relaxed, fixed };
  Kind kind = Kind::product_strict;
  double eta = 0.0;
  static EtaChoice strict() { return {Kind::product_strict, 0.0}; }
  static EtaChoice relaxed() { return {Kind::product_relaxed, 0.0}; }
  static EtaChoice fixed(double e) { return {Kind::fixed, e}; }
};

struct SpectralBoundReport {
  cplx sigma;
  double eta = 0.0;
  double A = 0.0;  ///< target eta rho (0 when eta was fixed)
  double lhs_right = 0.0, rhs_right = 0.0;
  double lhs_left = 0.0, rhs_left = 0.0;
  [[nodiscard]] double violation() const { return std::max(lhs_right - rhs_right, lhs_left - rhs_left); }
  [[nodiscard]] bool holds(double tol = 1e-9) const { return violation() <= tol; }
};

/// |<x1, r>|^2 / ||r||^2 <= eta <x, Im G^sigma(i eta) x> with x = (0, x1), and
/// the same for l with x = (x1, 0). eta solves N eta rho = 100 C^2 log N
/// unless fixed. Pass ||X||_2 as `x_norm` to skip recomputing it.
inline SpectralBoundReport spectral_bound_check(const CMatrix& X, const EigenPair& pair, const CVector& x1, double C,
                                                const EtaChoice& choice = EtaChoice::strict(),
                                                double x_norm = -1.0) {
  const Index n = X.rows();
  require(x1.size() == n, "probe x1 must have dimension N");
  require(std::abs(x1.norm() - 1.0) <= 1e-12, "probe x1 must be a unit vector");
  require(C >= 1.0, "spectral bound needs C >= 1");
  require(std::abs(pair.sigma) <= kMaxAbsZ, "spectral bound needs |sigma| <= 10");
  const double xnorm = x_norm >= 0.0 ? x_norm : Eigen::BDCSVD<CMatrix>(X).singularValues()(0);
  require(pair.right_residual <= kEigenResidualTol * xnorm && pair.left_residual <= kEigenResidualTol * xnorm,
          "eigenpair fails the residual policy");

  SpectralBoundReport rep;
  rep.sigma = pair.sigma;
  const double nn = static_cast<double>(n);
  if (choice.kind == EtaChoice::Kind::fixed) {
    require(choice.eta > 0.0, "fixed eta must be positive");
    rep.eta = choice.eta;
  } else {
    rep.A = 100.0 * C * C * std::log(nn) / nn;
    const auto gate = choice.kind == EtaChoice::Kind::product_strict ? ProductGate::strict : ProductGate::relaxed;
    rep.eta = solve_eta_for_product(pair.sigma, rep.A, gate);
  }
  const ResolventHandle res(hermitize(X, pair.sigma), rep.eta);
  auto side = [&](const CVector& vec, bool lower, double& lhs, double& rhs) {
    CVector x = CVector::Zero(2 * n);
    (lower ? x.tail(n) : x.head(n)) = x1;
    lhs = std::norm(x1.dot(vec)) / vec.squaredNorm();
    rhs = rep.eta * x.dot(res.solve(x)).imag();
  };
  side(pair.r, true, rep.lhs_right, rep.rhs_right);
  side(pair.l, false, rep.lhs_left, rep.rhs_left);
  return rep;
}

struct ComparisonOptions {
  cplx z = 0.0;
  /// eta rho = c log N / N, solved with the relaxed gate.
  double c = 10.0;
  /// Probe for Z2; empty means x = y = (0, e_1).
  CVector x, y;
};

struct SampleStats {
  double mean = 0.0, variance = 0.0;
};

struct ComparisonReport {
  Index N = 0;
  std::size_t trials = 0;
  SpectralPoint point;
  std::vector<double> z1_a, z1_b, z2_a, z2_b;  ///< imaginary parts
  double ks_z1 = 0.0, ks_z2 = 0.0;
  SampleStats z1a, z1b, z2a, z2b;
  [[nodiscard]] double ks() const { return std::max(ks_z1, ks_z2); }
  [[nodiscard]] bool pass(double cap = 0.2) const { return ks() <= cap; }
};

/// Two-sample comparison of Z1 (B = I) and Z2 at a common (z, eta). Z1 and Z2
/// are purely imaginary on the imaginary axis with coordinate probes, so the
/// KS distances use imaginary parts.
inline ComparisonReport ensemble_comparison(const EnsembleSpec& a, const EnsembleSpec& b, std::size_t trials,
                                            const ComparisonOptions& opt = {}) {
  a.validate();
  b.validate();
  if (a.n != b.n || a.field != b.field) throw ArgumentError("ensemble comparison needs a common N and field");
  require(trials >= 2, "ensemble comparison needs at least two trials");
  const Index n = a.n;
  const double nn = static_cast<double>(n);
  ComparisonReport rep;
  rep.N = n;
  rep.trials = trials;
  rep.point = {opt.z, solve_eta_for_product(opt.z, opt.c * std::log(nn) / nn, ProductGate::relaxed)};
  const Probe x = opt.x.size() ? Probe{opt.x, "user"} : Probe::lower_coordinate(n, 0);
  const Probe y = opt.y.size() ? Probe{opt.y, "user"} : x;
  std::vector<LocalLawSample> sa(trials), sb(trials);
  const RngStream ra(a.seed), rb(b.seed);
  parallel_for(2 * trials, [&](std::size_t k) {
    const bool first = k < trials;
    const std::size_t i = first ? k : k - trials;
    const auto& spec = first ? a : b;
    const auto seed = (first ? ra.substream({0, i}) : rb.substream({1, i})).key();
    (first ? sa : sb)[i] = sample_errors(sample_iid(spec.with_seed(seed)), rep.point, Observable::identity(), x, y);
  });
  for (std::size_t i = 0; i < trials; ++i) {
    rep.z1_a.push_back(sa[i].Z1.imag());
    rep.z1_b.push_back(sb[i].Z1.imag());
    rep.z2_a.push_back(sa[i].Z2.imag());
    rep.z2_b.push_back(sb[i].Z2.imag());
  }
  auto summarize = [](const std::vector<double>& v) { return SampleStats{stats::mean(v), stats::variance(v)}; };
  rep.z1a = summarize(rep.z1_a);
  rep.z1b = summarize(rep.z1_b);
  rep.z2a = summarize(rep.z2_a);
  rep.z2b = summarize(rep.z2_b);
  rep.ks_z1 = stats::ks_distance(rep.z1_a, rep.z1_b);
  rep.ks_z2 = stats::ks_distance(rep.z2_a, rep.z2_b);
  return rep;
}

}  // namespace rmtlab
