#include <gtest/gtest.h>

#include <cmath>

#include "rmtlab/characteristics.hpp"
#include "rmtlab/rng.hpp"

using namespace rmtlab;

namespace {

SpectralPoint product_end(cplx z, double A) { return {z, solve_eta_for_product(z, A)}; }

}  // namespace

TEST(Characteristics, ZeroRayStaysAtZero) {
  const auto c = integrate_backward(product_end(0.0, 1e-4), 0.1, 64);
  for (const auto& s : c.samples) EXPECT_EQ(s.z, cplx(0.0));
}

TEST(Characteristics, ZRayIsClosedForm) {
  const cplx zT(0.6, -0.3);
  const double T = 0.08;
  const auto c = integrate_backward(product_end(zT, 1e-5), T, 100);
  const cplx z0 = zT * std::exp(T / 2);
  for (const auto& s : c.samples) EXPECT_EQ(s.z, z0 * std::exp(-s.t / 2));
  EXPECT_NEAR(std::abs(c.end().z - zT), 0.0, 1e-15);
}

TEST(Characteristics, ConservationWitness) {
  const auto c = integrate_backward(product_end(0.9, 1e-4), 0.1, 512);
  EXPECT_LE(c.conservation_defect(), 1e-8);
  const double ratio = c.start().rho / c.end().rho;
  EXPECT_GE(ratio, 1.0 / 3);
  EXPECT_LE(ratio, 3.0);
}

TEST(Characteristics, ConservationAndMonotonicityAcrossRegimes) {
  for (double r : {0.0, 0.5, 0.95, 1.0, 1.02, 1.3})
    for (double A : {1e-8, 1e-6, 1e-4}) {
      const auto c = integrate_backward(product_end(r, A), 0.1, 256);
      EXPECT_LE(c.conservation_defect(), 1e-8) << r << " " << A;
      for (std::size_t i = 1; i < c.samples.size(); ++i) ASSERT_LT(c.samples[i].eta, c.samples[i - 1].eta);
      const double ratio = c.start().rho / c.end().rho;
      EXPECT_GE(ratio, 1.0 / 3) << r << " " << A;
      EXPECT_LE(ratio, 3.0) << r << " " << A;
      // eta_t rho_t ~ eta_T rho_T + (T - t) rho_T^2, factor 10.
      const double rT = c.end().rho;
      for (const auto& s : c.samples) {
        const double model = c.end().eta * rT + (c.T - s.t) * rT * rT;
        const double q = s.eta * s.rho / model;
        ASSERT_LE(std::max(q, 1.0 / q), 10.0) << r << " " << A << " t=" << s.t;
      }
    }
}

TEST(Characteristics, InputValidation) {
  EXPECT_THROW(integrate_backward({0.0, 1e-3}, 0.0, 10), ArgumentError);
  EXPECT_THROW(integrate_backward({0.0, 1e-3}, 0.1, 0), ArgumentError);
  EXPECT_THROW(integrate_backward({9.9, 1e-3}, 1.0, 10), ArgumentError);
}

TEST(Characteristics, ExtraTimesAreSampled) {
  const double extra[] = {0.0123, 0.0456};
  const auto c = integrate_backward(product_end(0.4, 1e-5), 0.1, 10, extra);
  EXPECT_GE(c.find(0.0123), 0);
  EXPECT_GE(c.find(0.0456), 0);
  EXPECT_EQ(c.find(0.0124), -1);
  const auto mid = c.at(0.05123);
  EXPECT_GT(mid.eta, c.end().eta);
}

TEST(Characteristics, LandmarkExamples) {
  const auto inside = landmark_times(0.1, 0.5, 1e-2, 0.8, 1e4, 0.005);
  EXPECT_EQ(inside.t_star, 0.0);
  EXPECT_DOUBLE_EQ(inside.kappa0, 1e-2);
  const double delta = 1e-3;
  const auto outside = landmark_times(0.1, 1.0 + delta, 1e-2, 0.8, 1e4, 0.005);
  EXPECT_NEAR(outside.t_star, 2 * delta, 0.1 * 2 * delta);
  EXPECT_NEAR(outside.kappa0, std::pow(delta, 1.5) + 1e-2, 1e-15);
  // Clamping is flagged.
  const auto clamped = landmark_times(0.1, 0.5, 1e-2, 1e-3, 100.0, 0.005);
  EXPECT_TRUE(clamped.S1_clamped);
  EXPECT_EQ(clamped.S1, 0.0);
}

TEST(Characteristics, TStarMatchesSampledTrajectory) {
  // |z_0| > 1, so the trajectory enters the disc at t*.
  const double T = 0.05;
  const auto c = integrate_backward(product_end(0.99, 1e-5), T, 2000);
  const auto lm = landmark_times(c, 0.005, 1e6);
  ASSERT_GT(lm.t_star, 0.0);
  double crossing = -1.0;
  for (std::size_t i = 1; i < c.samples.size(); ++i)
    if (std::abs(c.samples[i - 1].z) > 1.0 && std::abs(c.samples[i].z) <= 1.0) crossing = c.samples[i].t;
  EXPECT_NEAR(lm.t_star, crossing, T / 2000 + 1e-12);
  EXPECT_THROW(landmark_times(c, 0.02, 1e6), ArgumentError);
}

TEST(Characteristics, PropagatorBasicBounds) {
  const double T = 0.05;
  const auto c = integrate_backward(product_end(0.0, 1e-4), T, 512);
  EXPECT_EQ(propagator(c, 0.01, 0.01), 1.0);
  EXPECT_THROW(propagator(c, 0.02, 0.01), ArgumentError);
  EXPECT_LE(propagator(c, 0.0, T), 2.5 * c.start().eta / c.end().eta);
  // Composition p_{s,u} p_{u,t} = p_{s,t} on sample times.
  const double s = c.samples[10].t, u = c.samples[200].t, t = c.samples[400].t;
  EXPECT_NEAR(propagator(c, s, u) * propagator(c, u, t) / propagator(c, s, t), 1.0, 1e-10);
}

TEST(Characteristics, PropagatorRandomPairs) {
  RngStream rng(2024);
  for (double r : {0.0, 0.7, 1.0, 1.2})
    for (double A : {1e-6, 1e-4}) {
      const auto c = integrate_backward(product_end(r, A), 0.1, 512);
      for (int k = 0; k < 100; ++k) {
        double s = c.T * rng.uniform(), t = c.T * rng.uniform();
        if (s > t) std::swap(s, t);
        const double bound = 2.5 * c.at(s).eta / c.at(t).eta;
        ASSERT_LE(propagator(c, s, t), bound) << r << " " << A << " " << s << " " << t;
      }
    }
}

TEST(Characteristics, PropagatorRefinedBound) {
  RngStream rng(7);
  for (double rT : {0.98, 0.995, 1.0})
    for (double A : {1e-6, 1e-5}) {
      const auto c = integrate_backward(product_end(rT, A), 0.05, 1024);
      const auto lm = landmark_times(c, 0.005, 1e6);
      ASSERT_GT(lm.t_star, 0.0);
      for (int k = 0; k < 100; ++k) {
        double s = c.T * rng.uniform(), t = c.T * rng.uniform();
        if (s > t) std::swap(s, t);
        const double bound = 10.0 * c.at(std::min(s, lm.t_star)).eta / c.at(std::min(t, lm.t_star)).eta;
        ASSERT_LE(propagator(c, s, t), bound) << rT << " " << A << " " << s << " " << t;
      }
    }
}

TEST(Characteristics, LemmaAuditSyntheticN) {
  for (double N : {1e6, 1e9}) {
    const double xi = 0.01;
    const double A = std::pow(N, -0.25);
    for (double rT : {0.9, 1.0, 1.0 + std::pow(N, -10 * xi)}) {
      const SpectralPoint end{rT, solve_eta_for_product(rT, A, ProductGate::relaxed)};
      const auto rep = check_lemma_chars(end, N, xi);
      EXPECT_TRUE(rep.item1) << N << " " << rT << " ratio " << rep.item1_ratio;
      EXPECT_TRUE(rep.item2) << N << " " << rT << " " << rep.item2_s1_ratio << " " << rep.item2_s2_ratio;
      EXPECT_TRUE(rep.item3) << N << " " << rT << " " << rep.item3_total_ratio << " " << rep.item3_s2_ratio
                             << " " << rep.item3_s1_ratio;
      // N^{5 xi} < (log N)^3 at these N, so S1 > S2: the ordering cannot hold.
      EXPECT_LT(std::pow(N, 5 * xi), std::pow(std::log(N), 3));
      EXPECT_FALSE(rep.ordering) << N << " " << rT;
    }
  }
}

TEST(Characteristics, LemmaOrderingAtAstronomicalN) {
  const double N = 1e200, xi = 0.01;
  for (double rT : {0.9, 1.0}) {
    const SpectralPoint end{rT, solve_eta_for_product(rT, std::pow(N, -0.25), ProductGate::relaxed)};
    const auto rep = check_lemma_chars(end, N, xi);
    EXPECT_TRUE(rep.ordering);
    EXPECT_TRUE(rep.all()) << rep.item1_ratio << " " << rep.item3_s2_ratio;
  }
}

TEST(Characteristics, LemmaItemOneAtZero) {
  const double N = 1e6, xi = 0.01;
  const SpectralPoint end{0.0, solve_eta_for_product(0.0, std::pow(N, -0.25), ProductGate::relaxed)};
  const auto rep = check_lemma_chars(end, N, xi);
  EXPECT_LE(rep.item1_ratio, 2.0);
}

TEST(Characteristics, LemmaHypothesisGates) {
  const double N = 1e6;
  const SpectralPoint end{0.5, solve_eta_for_product(0.5, 1e-3)};
  EXPECT_THROW(check_lemma_chars(end, N, 0.2), PreconditionError);
  EXPECT_THROW(check_lemma_chars({1.5, 1e-3}, N, 0.005), PreconditionError);
  EXPECT_THROW(check_lemma_chars({0.5, 1e-9}, N, 0.005), PreconditionError);
  EXPECT_THROW(check_lemma_chars({0.5, 0.5}, N, 0.005), PreconditionError);
}
