#include <gtest/gtest.h>

#include <cmath>

#include "rmtlab/deloc.hpp"

using namespace rmtlab;

namespace {

RandomMatrix iid(Index n, std::uint64_t seed, Field f = Field::complex, Distribution d = Distribution::gaussian) {
  EnsembleSpec s;
  s.n = n;
  s.field = f;
  s.distribution = d;
  s.seed = seed;
  return sample_iid(s);
}

EigenPair pair_with(const CVector& r, const CVector& l) {
  EigenPair p;
  p.r = r;
  p.l = l;
  return p;
}

}  // namespace

TEST(Deloc, DiagonalMatrix) {
  CMatrix x = CMatrix::Zero(2, 2);
  x(0, 0) = 1.0;
  x(1, 1) = 2.0;
  const auto d = eigen_decompose(x);
  ASSERT_EQ(d.pairs.size(), 2u);
  EXPECT_TRUE(d.rejected.empty());
  EXPECT_EQ(d.pairs[0].sigma, cplx(1.0));
  EXPECT_EQ(d.pairs[1].sigma, cplx(2.0));
  EXPECT_NEAR(std::abs(d.pairs[0].r(0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(d.pairs[0].l(0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(d.pairs[1].r(1)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(d.pairs[1].l(1)), 1.0, 1e-15);
  EXPECT_FALSE(d.near_defective());
}

TEST(Deloc, JordanBlockIsFlagged) {
  CMatrix x = CMatrix::Zero(2, 2);
  x(0, 1) = 1.0;
  const auto d = eigen_decompose(x);
  EXPECT_TRUE(d.near_defective());
  EXPECT_FALSE(d.rejected.empty());
  EXPECT_EQ(d.pairs.size() + d.rejected.size(), 2u);
}

TEST(Deloc, GinibreResidualsAndBiorthogonality) {
  const auto x = iid(256, 3);
  const auto d = eigen_decompose(x);
  ASSERT_EQ(d.pairs.size(), 256u);
  for (std::size_t i = 0; i < d.pairs.size(); ++i) {
    const auto& p = d.pairs[i];
    EXPECT_LE(p.right_residual, 1e-8 * d.norm);
    EXPECT_LE(p.left_residual, 1e-8 * d.norm);
    EXPECT_NEAR(p.r.norm(), 1.0, 1e-12);
    EXPECT_NEAR(p.l.norm(), 1.0, 1e-12);
    if (i > 0) EXPECT_LE(std::abs(d.pairs[i - 1].sigma), std::abs(p.sigma));
  }
  EXPECT_LE(biorthogonality_defect(d), 1e-6);
}

TEST(Deloc, StatisticTrivialVectors) {
  const Index n = 64;
  const double s = DelocReport::scale(n);
  CVector e1 = CVector::Zero(n);
  e1(0) = 1.0;
  const CVector flat = CVector::Constant(n, 1.0 / std::sqrt(double(n)));
  const auto loc = deloc_statistic({pair_with(e1, flat)}, ProbeBasis::coordinate(), n);
  EXPECT_NEAR(loc.max_r[0] * s, std::sqrt(n / std::log(double(n))), 1e-12);
  EXPECT_NEAR(loc.max_l[0] * s, 1.0 / std::sqrt(std::log(double(n))), 1e-12);
  EXPECT_EQ(loc.statistic, loc.recompute());
}

TEST(Deloc, BasisValidationAndPhaseInvariance) {
  const auto x = iid(48, 7);
  auto d = eigen_decompose(x);
  EXPECT_THROW(ProbeBasis::user(2.0 * CMatrix::Identity(48, 48)), ArgumentError);
  ProbeBasis bad = ProbeBasis::coordinate();
  bad.kind = ProbeBasis::Kind::user;
  bad.q = CMatrix::Ones(48, 48);
  EXPECT_THROW(deloc_statistic(d.pairs, bad, 48), ArgumentError);

  RngStream rng(11);
  const auto haar = ProbeBasis::haar(48, rng);
  EXPECT_LE((haar.q.adjoint() * haar.q - CMatrix::Identity(48, 48)).cwiseAbs().maxCoeff(), 1e-12);
  const auto coord = deloc_statistic(d.pairs, ProbeBasis::coordinate(), 48);
  const auto hq = deloc_statistic(d.pairs, haar, 48);

  // Coordinate statistic is sqrt(N / log N) max_i (||l_i||_inf + ||r_i||_inf).
  double direct = 0.0;
  for (const auto& p : d.pairs)
    direct = std::max(direct, p.l.cwiseAbs().maxCoeff() + p.r.cwiseAbs().maxCoeff());
  EXPECT_EQ(coord.statistic, DelocReport::scale(48) * direct);

  for (auto& p : d.pairs) {
    const double a = 2 * M_PI * rng.uniform(), b = 2 * M_PI * rng.uniform();
    p.r *= std::polar(1.0, a);
    p.l *= std::polar(1.0, b);
  }
  EXPECT_NEAR(deloc_statistic(d.pairs, ProbeBasis::coordinate(), 48).statistic, coord.statistic, 1e-14);
  EXPECT_NEAR(deloc_statistic(d.pairs, haar, 48).statistic, hq.statistic, 1e-13);
  const auto user = ProbeBasis::user(haar.q, "mine");
  EXPECT_EQ(deloc_statistic(d.pairs, user, 48).basis, "mine");
}

TEST(Deloc, StatisticBoundedAcrossN) {
  std::vector<double> medians;
  for (Index n : {128, 256}) {
    EnsembleSpec spec;
    spec.n = n;
    spec.seed = 100;
    const auto tr = deloc_trials(spec, 6);
    for (const auto* set : {&tr.coordinate, &tr.haar})
      for (const auto& r : *set) EXPECT_LE(r.statistic, 5.0);
    medians.push_back(stats::median(DelocTrials::statistics(tr.coordinate)));
  }
  EXPECT_LE(medians[1], 1.2 * medians[0]);
}

TEST(Deloc, SpectralBoundTrivialCases) {
  CMatrix x = CMatrix::Zero(1, 1);
  EigenPair p;
  p.sigma = 0.0;
  p.r = CVector::Ones(1);
  p.l = CVector::Ones(1);
  for (double eta : {1e-3, 0.5, 7.0}) {
    const auto rep = spectral_bound_check(x, p, CVector::Ones(1), 1.0, EtaChoice::fixed(eta));
    EXPECT_NEAR(rep.lhs_right, 1.0, 1e-15);
    EXPECT_NEAR(rep.rhs_right, 1.0, 1e-12);
    EXPECT_NEAR(rep.rhs_left, 1.0, 1e-12);
    EXPECT_TRUE(rep.holds());
  }
  const auto g = iid(16, 2);
  const auto d = eigen_decompose(g);
  const auto& q = d.pairs[3];
  // x1 orthogonal to r.
  CVector x1 = CVector::Random(16);
  x1 -= q.r * q.r.dot(x1);
  x1.normalize();
  const auto rep = spectral_bound_check(g.entries, q, x1, 1.0, EtaChoice::fixed(0.1));
  EXPECT_NEAR(rep.lhs_right, 0.0, 1e-25);
  EXPECT_TRUE(rep.holds());
}

TEST(Deloc, SpectralBoundGates) {
  const auto g = iid(128, 5);
  const auto d = eigen_decompose(g);
  CVector e = CVector::Zero(128);
  e(0) = 1.0;
  // 100 log N / N = 3.79 > 1 cannot be an eta rho value.
  EXPECT_THROW(spectral_bound_check(g.entries, d.pairs[0], e, 1.0, EtaChoice::strict()), OutOfRangeError);
  EXPECT_THROW(spectral_bound_check(g.entries, d.pairs[0], e, 1.0, EtaChoice::relaxed()), OutOfRangeError);
  EXPECT_THROW(spectral_bound_check(g.entries, d.pairs[0], 2.0 * e, 1.0, EtaChoice::fixed(0.1)), ArgumentError);
  EXPECT_THROW(spectral_bound_check(g.entries, d.pairs[0], e, 0.5, EtaChoice::fixed(0.1)), ArgumentError);
}

TEST(Deloc, SpectralBoundHoldsAtEveryEigenvalue) {
  const auto g = iid(128, 9);
  const auto d = eigen_decompose(g);
  RngStream rng(4);
  const auto probe = Probe::random(128, rng).v.tail(128).normalized();
  std::size_t checked = 0;
  for (const auto& p : d.pairs) {
    if (std::abs(p.sigma) > 1.1) continue;
    for (double eta : {1e-4, 1e-2, 0.3}) {
      EXPECT_TRUE(spectral_bound_check(g.entries, p, probe, 1.0, EtaChoice::fixed(eta), d.norm).holds());
      // The right vector itself is the tight case: lhs ~ rhs as eta -> 0.
      const auto tight = spectral_bound_check(g.entries, p, p.r, 1.0, EtaChoice::fixed(eta), d.norm);
      EXPECT_TRUE(tight.holds()) << tight.violation();
      EXPECT_NEAR(tight.lhs_right, 1.0, 1e-12);
    }
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Deloc, EnsembleComparisonControls) {
  EnsembleSpec a;
  a.n = 64;
  a.seed = 1;
  EnsembleSpec b = a;
  b.seed = 2;
  EXPECT_THROW(ensemble_comparison(a, [&] { auto c = a; c.n = 32; return c; }(), 10), ArgumentError);
  const auto same = ensemble_comparison(a, a, 100);
  EXPECT_GT(same.ks(), 0.0);  // disjoint streams, not identical samples
  EXPECT_LE(same.ks(), 0.2);
  EnsembleSpec v2 = b;
  v2.variance = 2.0;
  const auto mismatch = ensemble_comparison(a, v2, 100);
  EXPECT_GT(mismatch.ks_z1, 0.2);
  EXPECT_NE(mismatch.z1a.mean, mismatch.z1b.mean);
}
