#pragma once

// Closed-form residual distribution for inter coding.
//
// Under the additive-noise relaxation, a residual sent every g frames is the
// sum of n = g + 2 independent U[-1/2, 1/2) terms, i.e. an Irwin-Hall(n)
// variable shifted by -n/2. Residuals are entropy coded under that law, so
// no second learned model is needed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sganc/entropy_model.hpp"
#include "sganc/error.hpp"

namespace sganc {

inline constexpr unsigned kMaxIrwinHallOrder = 20;

struct IrwinHallSpec {
  unsigned n = 3;
  double shift = -1.5;

  static IrwinHallSpec for_gap(unsigned g) {
    if (g < 1) throw ConfigError("residual gap g must be >= 1");
    const unsigned n = 3 + (g - 1);
    return {n, -0.5 * static_cast<double>(n)};
  }
};

namespace detail {
inline void check_order(unsigned n) {
  if (n < 1 || n > kMaxIrwinHallOrder)
    throw ConfigError("Irwin-Hall order " + std::to_string(n) + " outside [1, " +
                      std::to_string(kMaxIrwinHallOrder) + "]");
}

inline std::uint64_t factorial(unsigned n) {
  std::uint64_t f = 1;
  for (unsigned i = 2; i <= n; ++i) f *= i;
  return f;
}

inline std::uint64_t binomial(unsigned n, unsigned k) {
  std::uint64_t c = 1;
  for (unsigned i = 1; i <= k; ++i) c = c * (n - k + i) / i;  // exact at every step
  return c;
}

/// Lower half of the CDF, x in [0, n/2].
inline long double ih_cdf_lower(long double x, unsigned n) {
  long double acc = 0;
  const auto top = static_cast<unsigned>(std::floor(x));
  for (unsigned k = 0; k <= top && k <= n; ++k) {
    const long double term = static_cast<long double>(binomial(n, k)) * std::pow(x - k, static_cast<long double>(n));
    acc += (k % 2 == 0) ? term : -term;
  }
  return acc / static_cast<long double>(factorial(n));
}
}  // namespace detail

/// CDF of the sum of n independent U[0,1) variables.
inline double ih_cdf(double x, unsigned n) {
  detail::check_order(n);
  if (x <= 0) return 0.0;
  const double nn = static_cast<double>(n);
  if (x >= nn) return 1.0;
  // evaluate on the short side of the symmetric density
  if (x > nn / 2) return static_cast<double>(1.0L - detail::ih_cdf_lower(nn - x, n));
  return static_cast<double>(detail::ih_cdf_lower(x, n));
}

/// Integer bins with positive mass under the shifted IH(n) law.
inline std::pair<std::int32_t, std::int32_t> residual_mass_bins(unsigned g) {
  const auto spec = IrwinHallSpec::for_gap(g);
  // k has mass iff (k - 1/2, k + 1/2) meets (shift, shift + n)
  const auto lo = static_cast<std::int32_t>(std::floor(spec.shift - 0.5) + 1);
  const auto hi = static_cast<std::int32_t>(std::ceil(spec.shift + spec.n + 0.5) - 1);
  return {lo, hi};
}

/// Default coding support [floor(shift), ceil(shift + n)].
inline std::pair<std::int32_t, std::int32_t> residual_support(unsigned g) {
  const auto spec = IrwinHallSpec::for_gap(g);
  return {static_cast<std::int32_t>(std::floor(spec.shift)), static_cast<std::int32_t>(std::ceil(spec.shift + spec.n))};
}

/// Exact bin probabilities p(k) = F(k + 1/2 - shift) - F(k - 1/2 - shift) for k in [lo, hi].
inline std::vector<double> residual_probabilities(unsigned g, std::int32_t lo, std::int32_t hi) {
  const auto spec = IrwinHallSpec::for_gap(g);
  detail::check_order(spec.n);
  const auto [mlo, mhi] = residual_mass_bins(g);
  if (lo > mlo || hi < mhi) {
    std::string missing;
    for (std::int32_t k = mlo; k <= mhi; ++k)
      if (k < lo || k > hi) missing += (missing.empty() ? "" : ",") + std::to_string(k);
    throw ConfigError("residual support [" + std::to_string(lo) + "," + std::to_string(hi) +
                      "] excludes bins with mass: " + missing);
  }
  std::vector<double> p;
  for (std::int32_t k = lo; k <= hi; ++k)
    p.push_back(ih_cdf(k + 0.5 - spec.shift, spec.n) - ih_cdf(k - 0.5 - spec.shift, spec.n));
  return p;
}

/// Frozen residual table for gap g.
inline PmfTable residual_pmf(unsigned g, std::int32_t lo, std::int32_t hi, std::uint32_t precision = kDefaultPrecision,
                             bool with_escape = true) {
  auto p = residual_probabilities(g, lo, hi);
  if (with_escape) p.push_back(0.0);  // reserved; gets the floor count
  return PmfTable(lo, quantize_pmf(p, precision), with_escape, precision);
}

inline PmfTable residual_pmf(unsigned g, std::uint32_t precision = kDefaultPrecision, bool with_escape = true) {
  const auto [lo, hi] = residual_support(g);
  return residual_pmf(g, lo, hi, precision, with_escape);
}

/// Shannon entropy (bits) of the discretized residual law for gap g.
inline double residual_entropy_bits(unsigned g) {
  const auto [lo, hi] = residual_support(g);
  double h = 0;
  for (double p : residual_probabilities(g, lo, hi))
    if (p > 0) h -= p * std::log2(p);
  return h;
}

/// Monte Carlo of the noise-relaxed inter pipeline: one residual per scalar
/// trajectory, taken at frame t = g.
///
/// w_0 ~ N(0,1), w_t = w_{t-1} + N(0,1); the first frame is relaxed-coded,
/// each difference is relaxed-quantized, and the residual at t = g is
/// (w_g - w_bar_g) + noise.
inline std::vector<double> simulate_relaxed_residuals(unsigned g, std::size_t samples, std::uint64_t seed) {
  if (g < 1) throw ConfigError("residual gap g must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-0.5, 0.5);
  std::normal_distribution<double> step(0.0, 1.0);
  std::vector<double> out;
  out.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    double w_prev = step(rng);
    double w_hat = w_prev + noise(rng);
    double w = w_prev;
    for (unsigned t = 1; t <= g; ++t) {
      w = w_prev + step(rng);
      const double v_hat = (w - w_prev) + noise(rng);
      w_hat = w_hat + v_hat;  // estimate; becomes the reconstruction between residuals
      w_prev = w;
    }
    out.push_back((w - w_hat) + noise(rng));
  }
  return out;
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and `cdf`.
template <class Cdf>
double ks_statistic(std::vector<double> samples, Cdf cdf) {
  if (samples.empty()) throw ConfigError("KS statistic of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, std::abs(static_cast<double>(i + 1) / n - f), std::abs(f - static_cast<double>(i) / n)});
  }
  return d;
}

/// KS distance of relaxed-pipeline residuals from the shifted IH(g + 2) law.
inline double verify_residual_law(unsigned g, std::size_t samples, std::uint64_t seed) {
  const auto spec = IrwinHallSpec::for_gap(g);
  return ks_statistic(simulate_relaxed_residuals(g, samples, seed),
                      [&](double x) { return ih_cdf(x - spec.shift, spec.n); });
}

}  // namespace sganc
