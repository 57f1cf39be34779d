#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "rmtlab/core.hpp"
#include "rmtlab/ensemble.hpp"

namespace rmtlab {

/// Block selectors expanded to 2N x 2N: E1 keeps the upper-left N x N block,
/// E2 the lower-right one.
enum class Selector { e1 = 1, e2 = 2 };

inline Eigen::VectorXd selector_diagonal(Selector s, Index n) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(2 * n);
  if (s == Selector::e1)
    d.head(n).setOnes();
  else
    d.tail(n).setOnes();
  return d;
}

/// H^z = [[0, X - z], [(X - z)^*, 0]].
class Hermitization {
 public:
  Hermitization(const CMatrix& x, cplx z) : z_(z), n_(x.rows()) {
    require(x.rows() == x.cols(), "hermitize needs a square matrix");
    h_ = CMatrix::Zero(2 * n_, 2 * n_);
    CMatrix shifted = x;
    shifted.diagonal().array() -= z;
    h_.topRightCorner(n_, n_) = shifted;
    h_.bottomLeftCorner(n_, n_) = shifted.adjoint();
  }

  [[nodiscard]] cplx z() const { return z_; }
  [[nodiscard]] Index n() const { return n_; }
  [[nodiscard]] Index dim() const { return 2 * n_; }
  [[nodiscard]] const CMatrix& matrix() const { return h_; }
  /// X - z, the upper-right block.
  [[nodiscard]] auto shifted() const { return h_.topRightCorner(n_, n_); }

 private:
  cplx z_;
  Index n_;
  CMatrix h_;
};

inline Hermitization hermitize(const RandomMatrix& x, cplx z) { return {x.entries, z}; }
inline Hermitization hermitize(const CMatrix& x, cplx z) { return {x, z}; }

/// Factorization of H - i eta shared by every probe at one (z, eta).
///
/// The dense resolvent is materialized lazily on first request; the handle is
/// safe to use from several threads once constructed.
class ResolventHandle {
 public:
  ResolventHandle(std::shared_ptr<const Hermitization> h, double eta)
      : h_(std::move(h)), eta_(eta), state_(std::make_shared<State>()) {
    if (!(eta > 0.0)) throw ArgumentError("resolvent needs eta > 0");
    const Index d = h_->dim();
    CMatrix shifted = h_->matrix();
    shifted.diagonal().array() -= cplx(0.0, eta);
    state_->lu.compute(shifted);
    // H is Hermitian, so |det(H - i eta)| >= eta^{2N} > 0; a zero pivot means
    // the input was not finite.
    const double rcond = state_->lu.rcond();
    if (!(rcond > 0.0) || !std::isfinite(rcond))
      throw NumericalError("factorization of H - i eta failed (dim " + std::to_string(d) + ")");
  }

  ResolventHandle(const Hermitization& h, double eta)
      : ResolventHandle(std::make_shared<const Hermitization>(h), eta) {}

  [[nodiscard]] double eta() const { return eta_; }
  [[nodiscard]] const Hermitization& hermitization() const { return *h_; }
  [[nodiscard]] Index n() const { return h_->n(); }
  [[nodiscard]] Index dim() const { return h_->dim(); }

  /// (H - i eta)^{-1} v.
  [[nodiscard]] CVector solve(const CVector& v) const {
    require(v.size() == dim(), "resolvent solve dimension mismatch");
    return state_->lu.solve(v);
  }

  /// Dense G = (H - i eta)^{-1}.
  [[nodiscard]] const CMatrix& dense() const {
    std::call_once(state_->once, [this] { state_->g = state_->lu.inverse(); });
    return state_->g;
  }

 private:
  struct State {
    Eigen::PartialPivLU<CMatrix> lu;
    std::once_flag once;
    CMatrix g;
  };
  std::shared_ptr<const Hermitization> h_;
  double eta_;
  std::shared_ptr<State> state_;
};

inline void require_unit(const CVector& v, const char* name) {
  if (std::abs(v.norm() - 1.0) > 1e-12)
    throw ArgumentError(std::string(name) + " must be a unit vector (|norm - 1| <= 1e-12)");
}

/// <x, G y> through the cached factorization.
inline cplx iso_entry(const ResolventHandle& r, const CVector& x, const CVector& y) {
  require(x.size() == r.dim() && y.size() == r.dim(), "iso_entry dimension mismatch");
  require_unit(x, "x");
  require_unit(y, "y");
  return x.dot(r.solve(y));
}

/// Deterministic observable B for averaged traces <G B>.
class Observable {
 public:
  enum class Kind { zero, identity, e1, e2, rank_one, dense };

  static Observable zero() { return Observable(Kind::zero); }
  static Observable identity() { return Observable(Kind::identity); }
  static Observable selector(Selector s) {
    return Observable(s == Selector::e1 ? Kind::e1 : Kind::e2);
  }
  /// B = x y^*.
  static Observable rank_one(CVector x, CVector y) {
    require(x.size() == y.size(), "rank-one observable needs equal-length vectors");
    Observable b(Kind::rank_one);
    b.x_ = std::move(x);
    b.y_ = std::move(y);
    return b;
  }
  static Observable dense(CMatrix m) {
    require(m.rows() == m.cols(), "dense observable must be square");
    Observable b(Kind::dense);
    b.m_ = std::move(m);
    // Operator norm once, at construction.
    if (b.m_.isApprox(b.m_.adjoint(), 0.0)) {
      Eigen::SelfAdjointEigenSolver<CMatrix> es(b.m_, Eigen::EigenvaluesOnly);
      b.norm_ = b.m_.size() ? es.eigenvalues().cwiseAbs().maxCoeff() : 0.0;
    } else {
      Eigen::BDCSVD<CMatrix> svd(b.m_);
      b.norm_ = b.m_.size() ? svd.singularValues()(0) : 0.0;
    }
    return b;
  }

  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] const CVector& x() const { return x_; }
  [[nodiscard]] const CVector& y() const { return y_; }

  /// Operator norm (exact for the structured kinds, 2-norm for dense).
  [[nodiscard]] double norm() const {
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::identity:
      case Kind::e1:
      case Kind::e2: return 1.0;
      case Kind::rank_one: return x_.norm() * y_.norm();
      case Kind::dense: return norm_;
    }
    return 0.0;
  }

  [[nodiscard]] CMatrix materialize(Index dim) const {
    switch (kind_) {
      case Kind::zero: return CMatrix::Zero(dim, dim);
      case Kind::identity: return CMatrix::Identity(dim, dim);
      case Kind::e1:
      case Kind::e2: {
        const Selector s = kind_ == Kind::e1 ? Selector::e1 : Selector::e2;
        return selector_diagonal(s, dim / 2).cast<cplx>().asDiagonal();
      }
      case Kind::rank_one: require(x_.size() == dim, "observable dimension mismatch"); return x_ * y_.adjoint();
      case Kind::dense: require(m_.rows() == dim, "observable dimension mismatch"); return m_;
    }
    return {};
  }

  [[nodiscard]] std::string describe() const {
    switch (kind_) {
      case Kind::zero: return "zero";
      case Kind::identity: return "identity";
      case Kind::e1: return "E1";
      case Kind::e2: return "E2";
      case Kind::rank_one: return "rank-one";
      case Kind::dense: return "dense";
    }
    return "?";
  }

 private:
  explicit Observable(Kind k) : kind_(k) {}
  Kind kind_;
  CVector x_, y_;
  CMatrix m_;
  double norm_ = 0.0;
};

/// Hermitian matrix with unit operator norm drawn from the given stream.
inline Observable random_hermitian_observable(Index dim, RngStream& rng) {
  CMatrix a(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) a(i, j) = cplx(rng.normal(), rng.normal());
  CMatrix h = 0.5 * (a + a.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
  const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
  return Observable::dense(h / norm);
}

/// Normalized trace (1/dim) Tr(A) for any dense matrix.
inline cplx normalized_trace(const CMatrix& a) { return a.trace() / static_cast<double>(a.rows()); }

/// <G B> = (2N)^{-1} Tr(G B).
inline cplx averaged_trace(const ResolventHandle& r, const Observable& b) {
  constexpr double kNormCap = 1e3;
  const Index d = r.dim();
  const Index n = r.n();
  const double inv_d = 1.0 / static_cast<double>(d);
  switch (b.kind()) {
    case Observable::Kind::zero: return 0.0;
    case Observable::Kind::identity: return normalized_trace(r.dense());
    case Observable::Kind::e1: return r.dense().diagonal().head(n).sum() * inv_d;
    case Observable::Kind::e2: return r.dense().diagonal().tail(n).sum() * inv_d;
    case Observable::Kind::rank_one: {
      require(b.x().size() == d, "observable dimension mismatch");
      if (b.norm() > kNormCap) throw ArgumentError("observable norm exceeds 1e3");
      // Tr(G x y^*) = <y, G x>.
      return b.y().dot(r.solve(b.x())) * inv_d;
    }
    case Observable::Kind::dense: {
      const CMatrix m = b.materialize(d);
      if (b.norm() > kNormCap) throw ArgumentError("observable norm exceeds 1e3");
      // Tr(G B) = sum_ij G_ij B_ji.
      return (r.dense().cwiseProduct(m.transpose())).sum() * inv_d;
    }
  }
  return 0.0;
}

/// <M B> for the block deterministic approximation.
template <class BlockMLike>
cplx averaged_trace_M(const BlockMLike& m, const Observable& b) {
  const Index n = m.n;
  const double inv_d = 1.0 / static_cast<double>(2 * n);
  switch (b.kind()) {
    case Observable::Kind::zero: return 0.0;
    case Observable::Kind::identity: return m.m;
    case Observable::Kind::e1:
    case Observable::Kind::e2: return 0.5 * m.m;
    case Observable::Kind::rank_one: return m.quadratic_form(b.y(), b.x()) * inv_d;
    case Observable::Kind::dense: {
      const CMatrix bm = b.materialize(2 * n);
      return (m.expand().cwiseProduct(bm.transpose())).sum() * inv_d;
    }
  }
  return 0.0;
}

/// Eigenvalues of H^z in increasing order. Index i pairs with 2N - 1 - i.
struct Spectrum {
  std::vector<double> eigenvalues;
  /// max_i |lambda_i + lambda_{2N-1-i}| / ||H||.
  double pairing_defect = 0.0;
  double norm = 0.0;

  /// The N non-negative eigenvalues lambda_1 <= ... <= lambda_N.
  [[nodiscard]] std::vector<double> nonnegative() const {
    const auto n = eigenvalues.size() / 2;
    std::vector<double> out(eigenvalues.begin() + static_cast<std::ptrdiff_t>(n), eigenvalues.end());
    for (auto& v : out) v = std::abs(v);
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline Spectrum spectrum(const Hermitization& h) {
  constexpr Index kMaxN = 2048;
  if (h.n() > kMaxN) throw ArgumentError("spectrum limited to N <= 2048");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h.matrix(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver failed");
  Spectrum s;
  const auto& ev = es.eigenvalues();
  s.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  const Index d = ev.size();
  s.norm = d > 0 ? std::max(std::abs(ev(0)), std::abs(ev(d - 1))) : 0.0;
  double defect = 0.0;
  for (Index i = 0; i < d / 2; ++i) defect = std::max(defect, std::abs(ev(i) + ev(d - 1 - i)));
  s.pairing_defect = s.norm > 0.0 ? defect / s.norm : defect;
  return s;
}

/// <G> at w = i eta from the spectrum of (X - z)(X - z)^*: the eigenvalues of
/// H are +-s_k, and 1/(s - i eta) + 1/(-s - i eta) = 2 i eta / (s^2 + eta^2),
/// so <G> = (i/N) sum_k eta / (s_k^2 + eta^2). An N x N Hermitian eigensolve
/// replaces a 2N x 2N inversion. Exact, not an approximation.
inline cplx resolvent_trace_via_gram(const Hermitization& h, double eta) {
  if (!(eta > 0.0)) throw ArgumentError("resolvent trace needs eta > 0");
  const CMatrix a = h.shifted();
  const CMatrix gram = a * a.adjoint();
  Eigen::SelfAdjointEigenSolver<CMatrix> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("Gram eigensolver failed");
  double sum = 0.0;
  for (Index k = 0; k < es.eigenvalues().size(); ++k)
    sum += eta / (std::max(0.0, es.eigenvalues()(k)) + eta * eta);
  return {0.0, sum / static_cast<double>(h.n())};
}

/// Im G = (G - G^*) / (2i).
inline CMatrix imaginary_part(const CMatrix& g) { return (g - g.adjoint()) / cplx(0.0, 2.0); }

/// Block of a 2N x 2N matrix selected by (row selector, column selector).
inline auto block(const CMatrix& a, Selector row, Selector col) {
  const Index n = a.rows() / 2;
  return a.block(row == Selector::e1 ? 0 : n, col == Selector::e1 ? 0 : n, n, n);
}

/// <A E_i C E_j> = (1/2N) Tr(A_{[j,i]} C_{[i,j]}), computed without forming
/// the products.
inline cplx selector_trace(const CMatrix& a, Selector i, const CMatrix& c, Selector j) {
  const double inv_d = 1.0 / static_cast<double>(a.rows());
  return (block(a, j, i).cwiseProduct(block(c, i, j).transpose())).sum() * inv_d;
}

}  // namespace rmtlab
