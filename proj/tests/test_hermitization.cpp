#include <gtest/gtest.h>

#include <cmath>

#include "rmtlab/hermitization.hpp"
#include "rmtlab/mde.hpp"

using namespace rmtlab;

namespace {

RandomMatrix ginibre(Index n, std::uint64_t seed, Field f = Field::complex) {
  EnsembleSpec s;
  s.n = n;
  s.field = f;
  s.seed = seed;
  return sample_iid(s);
}

CVector random_unit(Index d, RngStream& rng) {
  CVector v(d);
  for (Index i = 0; i < d; ++i) v(i) = cplx(rng.normal(), rng.normal());
  return v / v.norm();
}

CVector basis(Index d, Index k) {
  CVector v = CVector::Zero(d);
  v(k) = 1.0;
  return v;
}

}  // namespace

TEST(Hermitization, TrivialCases) {
  const auto h0 = hermitize(CMatrix::Zero(1, 1), 0.0);
  EXPECT_EQ(h0.matrix(), CMatrix::Zero(2, 2));
  const auto h1 = hermitize(CMatrix::Zero(1, 1), 1.0);
  CMatrix expect(2, 2);
  expect << 0.0, -1.0, -1.0, 0.0;
  EXPECT_EQ(h1.matrix(), expect);
  const auto sp = spectrum(h1);
  ASSERT_EQ(sp.eigenvalues.size(), 2u);
  EXPECT_NEAR(sp.eigenvalues[0], -1.0, 1e-15);
  EXPECT_NEAR(sp.eigenvalues[1], 1.0, 1e-15);
  EXPECT_THROW(hermitize(CMatrix::Zero(2, 3), 0.0), ArgumentError);
}

TEST(Hermitization, StructureAndSymmetricSpectrum) {
  const auto x = ginibre(64, 1);
  const auto h = hermitize(x, 0.5);
  EXPECT_TRUE((h.matrix().array() == h.matrix().adjoint().array()).all());
  EXPECT_EQ(block(h.matrix(), Selector::e1, Selector::e1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(block(h.matrix(), Selector::e2, Selector::e2).cwiseAbs().maxCoeff(), 0.0);
  const auto sp = spectrum(h);
  EXPECT_LE(sp.pairing_defect, 1e-10);
  EXPECT_EQ(sp.nonnegative().size(), 64u);
}

TEST(Hermitization, ZeroInSpectrumAtEigenvalue) {
  const auto x = ginibre(32, 3);
  Eigen::ComplexEigenSolver<CMatrix> es(x.entries);
  const cplx sigma = es.eigenvalues()(5);
  const auto sp = spectrum(hermitize(x, sigma));
  EXPECT_LE(sp.nonnegative().front(), 1e-8 * sp.norm);
}

TEST(Hermitization, IsoEntryOnZeroMatrix) {
  const Index n = 4;
  const double eta = 0.37;
  const ResolventHandle r(hermitize(CMatrix::Zero(n, n), 0.0), eta);
  const CVector x = basis(2 * n, 1);
  const cplx g = iso_entry(r, x, x);
  EXPECT_NEAR(std::abs(g - cplx(0.0, 1.0 / eta)), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(iso_entry(r, x, basis(2 * n, 6))), 0.0, 1e-15);
  EXPECT_THROW(iso_entry(r, 2.0 * x, x), ArgumentError);
  EXPECT_NEAR(std::abs(averaged_trace(r, Observable::identity()) - cplx(0.0, 1.0 / eta)), 0.0, 1e-14);
  EXPECT_THROW(ResolventHandle(hermitize(CMatrix::Zero(n, n), 0.0), 0.0), ArgumentError);
}

TEST(Hermitization, IsoEntryMatchesDenseOracle) {
  const auto x = ginibre(64, 5);
  const auto h = hermitize(x, 0.3);
  const ResolventHandle r(h, 0.1);
  CMatrix shifted = h.matrix();
  shifted.diagonal().array() -= cplx(0.0, 0.1);
  const CMatrix oracle = shifted.inverse();
  RngStream rng(5);
  for (int k = 0; k < 5; ++k) {
    const CVector u = random_unit(128, rng);
    const CVector v = random_unit(128, rng);
    EXPECT_NEAR(std::abs(iso_entry(r, u, u) - u.dot(oracle * u)), 0.0, 1e-8);
    // <u, G v> = conj(<v, G^* u>)
    const cplx lhs = iso_entry(r, u, v);
    const cplx rhs = std::conj(v.dot(oracle.adjoint() * u));
    EXPECT_NEAR(std::abs(lhs - rhs), 0.0, 1e-10);
    EXPECT_LE(std::abs(iso_entry(r, u, u)), 1.0 / 0.1 + 1e-12);
  }
  // Backward error of the cached solve.
  const CVector b = random_unit(128, rng);
  const CVector sol = r.solve(b);
  EXPECT_LE((shifted * sol - b).norm() / (shifted.norm() * sol.norm()), 1e-10);
}

TEST(Hermitization, AveragedTraceStructuredObservables) {
  const auto x = ginibre(48, 8);
  const ResolventHandle r(hermitize(x, cplx(0.2, 0.1)), 0.05);
  const cplx g = averaged_trace(r, Observable::identity());
  EXPECT_NEAR(std::abs(2.0 * averaged_trace(r, Observable::selector(Selector::e1)) - g), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(2.0 * averaged_trace(r, Observable::selector(Selector::e2)) - g), 0.0, 1e-12);
  EXPECT_EQ(averaged_trace(r, Observable::zero()), cplx(0.0));
  RngStream rng(3);
  const CVector u = random_unit(96, rng);
  const CVector v = random_unit(96, rng);
  const cplx rank_one = averaged_trace(r, Observable::rank_one(u, v));
  EXPECT_NEAR(std::abs(rank_one - iso_entry(r, v, u) / 96.0), 0.0, 1e-10);
  // Dense path agrees with structured path.
  const cplx dense = averaged_trace(r, Observable::dense(Observable::rank_one(u, v).materialize(96)));
  EXPECT_NEAR(std::abs(dense - rank_one), 0.0, 1e-12);
  EXPECT_THROW(averaged_trace(r, Observable::dense(CMatrix::Identity(96, 96) * 2e3)), ArgumentError);
  EXPECT_THROW(averaged_trace(r, Observable::rank_one(CVector::Ones(4), CVector::Ones(4))), ArgumentError);
}

TEST(Hermitization, WardIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = ginibre(128, 100 + seed, seed % 2 ? Field::real : Field::complex);
    const double eta = 0.02 + 0.01 * seed;
    const ResolventHandle r(hermitize(x, cplx(0.1 * seed / 20.0, 0.3)), eta);
    const CMatrix& g = r.dense();
    const double lhs = g.squaredNorm() / 256.0;
    const double rhs = normalized_trace(imaginary_part(g)).real() / eta;
    EXPECT_NEAR(lhs / rhs, 1.0, 1e-10);
  }
}

TEST(Hermitization, AveragedTraceMAndSelectorTrace) {
  const auto sol = solve_mde({cplx(0.4, 0.2), 0.03});
  const auto M = build_M(sol, 6);
  EXPECT_EQ(averaged_trace_M(M, Observable::identity()), sol.m());
  EXPECT_EQ(averaged_trace_M(M, Observable::selector(Selector::e2)), 0.5 * sol.m());
  RngStream rng(1);
  const CVector u = random_unit(12, rng);
  const CVector v = random_unit(12, rng);
  const cplx direct = (M.expand() * u * v.adjoint()).trace() / 12.0;
  EXPECT_NEAR(std::abs(averaged_trace_M(M, Observable::rank_one(u, v)) - direct), 0.0, 1e-15);

  // selector_trace against explicit products.
  const auto x = ginibre(10, 2);
  const ResolventHandle r(hermitize(x, 0.3), 0.2);
  const CMatrix& g = r.dense();
  const CMatrix gt = g.transpose();
  for (auto i : {Selector::e1, Selector::e2})
    for (auto j : {Selector::e1, Selector::e2}) {
      const CMatrix ei = selector_diagonal(i, 10).cast<cplx>().asDiagonal();
      const CMatrix ej = selector_diagonal(j, 10).cast<cplx>().asDiagonal();
      const cplx oracle = normalized_trace(g * ei * gt * ej);
      EXPECT_NEAR(std::abs(selector_trace(g, i, gt, j) - oracle), 0.0, 1e-13);
    }
}

TEST(Hermitization, RandomHermitianObservableHasUnitNorm) {
  RngStream rng(4);
  const auto b = random_hermitian_observable(20, rng);
  EXPECT_NEAR(b.norm(), 1.0, 1e-12);
  const CMatrix m = b.materialize(20);
  EXPECT_LE((m - m.adjoint()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hermitization, GramTraceMatchesDenseTrace) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto x = ginibre(96, 40 + seed, seed % 2 ? Field::real : Field::complex);
    for (double eta : {1e-3, 0.05, 0.7}) {
      const auto h = hermitize(x, cplx(0.3, -0.6));
      const ResolventHandle r(h, eta);
      const cplx dense = averaged_trace(r, Observable::identity());
      EXPECT_NEAR(std::abs(resolvent_trace_via_gram(h, eta) - dense), 0.0, 1e-10 * std::abs(dense));
    }
  }
}
