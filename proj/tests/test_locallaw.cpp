#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rmtlab/locallaw.hpp"
#include "rmtlab/stats.hpp"

using namespace rmtlab;

namespace {

RandomMatrix ginibre(Index n, std::uint64_t seed, Field f = Field::complex, Distribution d = Distribution::gaussian) {
  EnsembleSpec s;
  s.n = n;
  s.field = f;
  s.distribution = d;
  s.seed = seed;
  return sample_iid(s);
}

}  // namespace

TEST(LocalLaw, DomainExamples) {
  {
    // N = 512: eta = 200 log N / N = 2.44 is macroscopic, and the ratio gate
    // eta/rho <= N^{-xi} fails.
    const double N = 512;
    const DomainParams p{1.0, 0.01, 512};
    const auto d = in_domain({0.0, 200 * std::log(N) / N}, p);
    EXPECT_FALSE(d.all());
    EXPECT_FALSE(d.ratio);
    EXPECT_TRUE(d.modulus);
    EXPECT_NE(d.failed_gates().find("ratio"), std::string::npos);
  }
  {
    const DomainParams p{1.0, 0.01, 512};
    const double r = 1.0 + 2.0 * std::pow(512.0, -0.01);
    for (double eta : {1e-4, 1e-2, 0.5}) EXPECT_FALSE(in_domain({r, eta}, p).modulus);
  }
  {
    const double N = 1e5;
    const DomainParams p{1.0, 0.01, 100000};
    const auto d = in_domain({0.0, 200 * std::log(N) / N}, p);
    EXPECT_TRUE(d.product);
    EXPECT_TRUE(d.ratio);
    EXPECT_TRUE(d.modulus);
    EXPECT_NEAR(d.eta_over_rho, 0.023, 0.001);
  }
  EXPECT_THROW(in_domain({0.0, 0.1}, {0.5, 0.01, 100}), ArgumentError);
  EXPECT_THROW(in_domain({0.0, 0.1}, {1.0, 0.2, 100}), ArgumentError);
}

TEST(LocalLaw, ZeroObservableAndNormalizationRoundTrip) {
  const auto X = ginibre(64, 3);
  const auto pr = Probe::lower_coordinate(64, 2);
  const auto s0 = sample_errors(X, {0.3, 0.1}, Observable::zero(), pr, pr);
  EXPECT_EQ(s0.avg_err, cplx(0.0));
  EXPECT_EQ(s0.Z1, cplx(0.0));
  const auto s = sample_errors(X, {cplx(0.2, 0.4), 0.05}, Observable::identity(), pr, pr);
  EXPECT_NEAR(std::abs(s.Z1 / (64.0 * 0.05) - s.avg_err), 0.0, 1e-15 * std::abs(s.avg_err));
  EXPECT_NEAR(std::abs(s.Z2 / std::sqrt(64.0 * 0.05 / s.rho) - s.iso_err), 0.0, 1e-15 * std::abs(s.iso_err));
  EXPECT_EQ(s.B_descriptor, "identity");
  EXPECT_EQ(s.x_descriptor, "lower e2");
}

TEST(LocalLaw, SelectorObservablesMatchDensePath) {
  const auto X = ginibre(48, 5);
  const ResolventHandle r(hermitize(X, 0.6), 0.03);
  const auto pr = Probe::upper_coordinate(48, 0);
  for (auto b : {Observable::identity(), Observable::selector(Selector::e1), Observable::selector(Selector::e2)}) {
    const auto s = sample_errors(r, b, pr, pr);
    const auto M = build_M(solve_mde({0.6, 0.03}), 48);
    const cplx dense = averaged_trace(r, b) - averaged_trace_M(M, b);
    EXPECT_NEAR(std::abs(s.avg_err - dense), 0.0, 1e-11);
  }
}

TEST(LocalLaw, TraceDecompositionOverBasis) {
  const auto X = ginibre(32, 9);
  const SpectralPoint pt{0.5, 0.07};
  const ResolventHandle r(hermitize(X, pt.z), pt.eta);
  cplx sum = 0.0;
  for (Index k = 0; k < 32; ++k) {
    sum += sample_errors(r, Observable::zero(), Probe::upper_coordinate(32, k), Probe::upper_coordinate(32, k)).iso_err;
    sum += sample_errors(r, Observable::zero(), Probe::lower_coordinate(32, k), Probe::lower_coordinate(32, k)).iso_err;
  }
  const cplx avg = sample_errors(r, Observable::identity(), Probe::upper_coordinate(32, 0),
                                 Probe::upper_coordinate(32, 0)).avg_err;
  EXPECT_NEAR(std::abs(sum / 64.0 - avg), 0.0, 1e-10);
}

TEST(LocalLaw, MacroscopicConcentration) {
  constexpr Index n = 256;
  const double eta = 0.5;
  int avg_ok = 0, iso_ok = 0;
  const auto pr = Probe::lower_coordinate(n, 0);
  for (int t = 0; t < 100; ++t) {
    const auto s = sample_errors(ginibre(n, 1000 + t), {0.0, eta}, Observable::identity(), pr, pr);
    avg_ok += std::abs(s.avg_err) <= 10.0 / (n * eta);
    iso_ok += std::abs(s.iso_err) <= 10.0 * std::sqrt(s.rho / (n * eta));
  }
  EXPECT_GE(avg_ok, 95);
  EXPECT_GE(iso_ok, 95);
}

TEST(LocalLaw, MedianErrorDecreasesWithEta) {
  constexpr Index n = 128;
  const std::vector<double> etas{0.02, 0.05, 0.1, 0.2};
  std::vector<double> medians;
  const auto pr = Probe::lower_coordinate(n, 0);
  for (double eta : etas) {
    std::vector<double> errs;
    for (int t = 0; t < 20; ++t)
      errs.push_back(std::abs(sample_errors(ginibre(n, 50 + t), {0.3, eta}, Observable::identity(), pr, pr).avg_err));
    medians.push_back(stats::median(errs));
  }
  int violations = 0;
  for (std::size_t k = 1; k < medians.size(); ++k) violations += medians[k] > medians[k - 1];
  EXPECT_LE(violations, 1);
}

TEST(LocalLaw, GridScanBookkeeping) {
  const auto X = ginibre(64, 11);
  const DomainParams p{1.0, 0.01, 64};
  EXPECT_TRUE(grid_scan(X, p, {}, EtaRule::product(20)).empty());

  const std::vector<cplx> radial{0.0, 0.5, 0.9, 1.0, 1.05};
  // c = 200 at N = 64 asks for eta rho = 13 > 1: every point is unattainable.
  const auto none = grid_scan(X, p, radial, EtaRule::product(200));
  ASSERT_EQ(none.size(), radial.size());
  for (const auto& row : none) {
    ASSERT_TRUE(row.skipped.has_value());
    EXPECT_NE(row.skipped->find("unattainable"), std::string::npos);
  }

  const auto rows = grid_scan(X, p, radial, EtaRule::product(2));
  ASSERT_EQ(rows.size(), radial.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_FALSE(rows[i].skipped.has_value());
    EXPECT_EQ(rows[i].z_index, i);
    const auto& s = rows[i].sample;
    EXPECT_NEAR(rows[i].eta * s.rho, 2 * std::log(64.0) / 64, 1e-12);
    EXPECT_EQ(s.Z1, s.z1_scale() * s.avg_err);
  }
  const auto again = grid_scan(X, p, radial, EtaRule::product(2));
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].sample.Z1, again[i].sample.Z1);

  const auto fixed = grid_scan(X, p, {0.1, 0.2}, EtaRule::fixed({0.1, 0.2, 0.3}));
  ASSERT_EQ(fixed.size(), 6u);
  EXPECT_EQ(fixed[4].z, cplx(0.2));
  EXPECT_EQ(fixed[4].eta, 0.2);
}

TEST(LocalLaw, GridScanZ1Percentile) {
  constexpr Index n = 256;
  const DomainParams p{1.0, 0.01, n};
  std::vector<double> z1;
  for (int t = 0; t < 20; ++t)
    for (const auto& row : grid_scan(ginibre(n, 300 + t), p, {0.0, 0.5, 0.9}, EtaRule::product(10)))
      z1.push_back(std::abs(row.sample.Z1) / std::log(double(n)));
  EXPECT_LE(stats::quantile(z1, 0.95), 10.0);
}

TEST(LocalLaw, SchwarzNullMatrixIsGated) {
  const double eta = 0.1;
  const ResolventHandle r(hermitize(CMatrix::Zero(4, 4), 0.0), eta);
  const CVector u = Probe::lower_coordinate(4, 0).v;
  const auto rep = schwarz_checks(r, Observable::identity(), u, u, 1, 1);
  EXPECT_FALSE(rep.avg_event);  // <Im G> = 1/eta = 10 > 2 rho ~ 1.9
  EXPECT_TRUE(rep.all_hold());
  // G = (i/eta) I gives <G E_i G^t E_j> = -1/(2 eta^2) for i = j and 0 otherwise.
  EXPECT_NEAR(rep.checks[0].value, 1.0 / (2 * eta * eta), 1e-9);
  EXPECT_NEAR(rep.checks[1].value, 0.0, 1e-12);
}

TEST(LocalLaw, SchwarzArgumentChecks) {
  const ResolventHandle r(hermitize(CMatrix::Zero(4, 4), 0.0), 0.1);
  const CVector u = Probe::lower_coordinate(4, 0).v;
  EXPECT_THROW(schwarz_checks(r, Observable::identity(), u, u, 0, 1), ArgumentError);
  EXPECT_THROW(schwarz_checks(r, Observable::identity(), u, u, 3, 2), ArgumentError);
  EXPECT_THROW(schwarz_checks(r, Observable::dense(2.0 * CMatrix::Identity(8, 8)), u, u, 1, 1), ArgumentError);
  EXPECT_THROW(schwarz_checks(r, Observable::identity(), 2.0 * u, u, 1, 1), ArgumentError);
}

TEST(LocalLaw, SchwarzBoundsGinibre) {
  constexpr Index n = 128;
  const double A = 10 * std::log(double(n)) / n;
  const cplx z = 0.5;
  const double eta = solve_eta_for_product(z, A, ProductGate::relaxed);
  RngStream rng(77);
  std::size_t applicable = 0;
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto X = ginibre(n, 500 + t, t % 2 ? Field::real : Field::complex);
    const ResolventHandle r(hermitize(X, z), eta);
    RngStream trial = rng.substream(t);
    const Observable B = random_hermitian_observable(2 * n, trial);
    const CVector u = Probe::lower_coordinate(n, 3).v;
    const CVector v = Probe::random(n, trial, true).v;
    for (auto [p, q] : {std::pair{1, 1}, {1, 2}, {2, 2}}) {
      for (const auto& b : {Observable::identity(), B}) {
        const auto rep = schwarz_checks(r, b, u, v, p, q);
        EXPECT_TRUE(rep.all_hold());
        applicable += rep.applicable_count();
        worst = std::max(worst, rep.worst_ratio());
      }
    }
  }
  EXPECT_GT(applicable, 0u);
  EXPECT_LE(worst, 1.0);
}
