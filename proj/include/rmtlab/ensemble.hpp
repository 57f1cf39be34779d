#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "rmtlab/core.hpp"
#include "rmtlab/rng.hpp"

namespace rmtlab {

enum class Field { real, complex };
enum class Distribution { gaussian, rademacher, uniform };

/// 1 for real, 2 for complex.
inline int beta(Field f) { return f == Field::real ? 1 : 2; }

inline std::string_view to_string(Field f) { return f == Field::real ? "real" : "complex"; }

inline std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::gaussian: return "gaussian";
    case Distribution::rademacher: return "rademacher";
    case Distribution::uniform: return "uniform";
  }
  throw ConfigError("unsupported distribution tag");
}

inline Field parse_field(std::string_view s) {
  if (s == "real") return Field::real;
  if (s == "complex") return Field::complex;
  throw ConfigError("unsupported field '" + std::string(s) + "' (expected real|complex)");
}

inline Distribution parse_distribution(std::string_view s) {
  if (s == "gaussian") return Distribution::gaussian;
  if (s == "rademacher") return Distribution::rademacher;
  if (s == "uniform") return Distribution::uniform;
  throw ConfigError("unsupported distribution '" + std::string(s) +
                    "' (expected gaussian|rademacher|uniform)");
}

/// Reproducible description of an N x N i.i.d. matrix with entries chi/sqrt(N).
///
/// `variance` rescales the atom to E|chi|^2 = variance. It exists only to build
/// mismatched negative controls; every i.i.d. model proper uses 1.
struct EnsembleSpec {
  Index n = 2;
  Field field = Field::complex;
  Distribution distribution = Distribution::gaussian;
  std::uint64_t seed = 0;
  double variance = 1.0;

  void validate() const {
    if (n < 2) throw ConfigError("ensemble dimension N must be >= 2");
    if (!(variance > 0.0) || !std::isfinite(variance))
      throw ConfigError("atom variance must be positive and finite");
    (void)to_string(distribution);
  }

  [[nodiscard]] EnsembleSpec with_seed(std::uint64_t s) const {
    EnsembleSpec out = *this;
    out.seed = s;
    return out;
  }
};

struct RandomMatrix {
  CMatrix entries;
  EnsembleSpec spec;
  std::string label;

  [[nodiscard]] Index n() const { return entries.rows(); }
};

namespace detail {

// Stream ids inside a spec's root seed.
inline constexpr std::uint64_t kIidStream = 1;
inline constexpr std::uint64_t kGinibreComponentStream = 2;

/// Real atom with mean 0 and unit variance.
inline double real_atom(Distribution d, RngStream& rng) {
  switch (d) {
    case Distribution::gaussian: return rng.normal();
    case Distribution::rademacher: return rng.coin() ? 1.0 : -1.0;
    case Distribution::uniform: return std::sqrt(3.0) * (2.0 * rng.uniform() - 1.0);
  }
  throw ConfigError("unsupported distribution tag");
}

/// Complex atoms are (xi1 + i xi2)/sqrt(2) with independent real parts, so
/// E[chi^2] = 0 holds exactly.
inline cplx atom(Field f, Distribution d, RngStream& rng) {
  if (f == Field::real) return {real_atom(d, rng), 0.0};
  const double re = real_atom(d, rng);
  const double im = real_atom(d, rng);
  return cplx(re, im) * M_SQRT1_2;
}

inline CMatrix fill(Index n, Field f, Distribution d, double scale, RngStream& rng) {
  CMatrix x(n, n);
  // Column-major fill order is part of the reproducibility contract.
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) x(i, j) = scale * atom(f, d, rng);
  return x;
}

}  // namespace detail

/// Entries N^{-1/2} chi drawn independently; a pure function of the spec.
inline RandomMatrix sample_iid(const EnsembleSpec& spec) {
  spec.validate();
  RngStream rng = RngStream(spec.seed).substream(detail::kIidStream);
  const double scale = std::sqrt(spec.variance / static_cast<double>(spec.n));
  return {detail::fill(spec.n, spec.field, spec.distribution, scale, rng), spec, "iid"};
}

/// (1 - e^{-T})^{1/2} G + e^{-T/2} Y with G Ginibre (same field) and Y = sample_iid(spec).
inline RandomMatrix sample_gaussian_divisible(const EnsembleSpec& spec, double T) {
  if (!(T > 0.0 && T < 1.0)) throw ConfigError("Gaussian-divisible time T must lie in (0,1)");
  RandomMatrix y = sample_iid(spec);
  RngStream rng = RngStream(spec.seed).substream(detail::kGinibreComponentStream);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.n));
  CMatrix g = detail::fill(spec.n, spec.field, Distribution::gaussian, scale, rng);
  const double a = std::sqrt(-std::expm1(-T));
  const double b = std::exp(-T / 2.0);
  return {a * g + b * y.entries, spec, "gauss-divisible T=" + std::to_string(T)};
}

/// Largest step accepted by the explicit Euler-Maruyama OU update.
inline constexpr double kMaxOuStep = 1e-2;

/// Brownian increment dB over a step dt: E|dB_ab|^2 = dt, and E[dB_ab^2] = 0 for
/// the complex field.
inline CMatrix brownian_increment(Index n, Field field, double dt, RngStream& rng) {
  if (!(dt > 0.0)) throw ConfigError("OU step dt must be positive");
  return detail::fill(n, field, Distribution::gaussian, std::sqrt(dt), rng);
}

/// X' = (1 - dt/2) X + dB / sqrt(N) with a caller-supplied increment. Passing a
/// zero increment isolates the drift.
inline RandomMatrix ou_step(const RandomMatrix& x, double dt, const CMatrix& dB) {
  if (!(dt > 0.0)) throw ConfigError("OU step dt must be positive");
  if (dt > kMaxOuStep) throw ConfigError("OU step dt exceeds the Euler-Maruyama envelope 1e-2");
  require(dB.rows() == x.n() && dB.cols() == x.n(), "Brownian increment has wrong shape");
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(x.n()));
  return {(1.0 - 0.5 * dt) * x.entries + inv_sqrt_n * dB, x.spec, "ou"};
}

inline RandomMatrix ou_step(const RandomMatrix& x, double dt, RngStream& rng) {
  if (!(dt > 0.0)) throw ConfigError("OU step dt must be positive");
  return ou_step(x, dt, brownian_increment(x.n(), x.spec.field, dt, rng));
}

/// N * mean |X_ab|^2, which concentrates near 1 for the i.i.d. model.
inline double normalized_second_moment(const CMatrix& x) {
  const double n = static_cast<double>(x.rows());
  return x.squaredNorm() / n;
}

}  // namespace rmtlab
