#ifndef PREPOST_TESTS_SUPPORT_HPP
#define PREPOST_TESTS_SUPPORT_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <vector>

#include "prepost/errors.hpp"
#include "prepost/prepost_model.hpp"
#include "prepost/rng.hpp"
#include "prepost/stats.hpp"

namespace test_support {

inline bool throws_code(prepost::errc expected,
                        const std::function<void()>& fn) {
  try {
    fn();
  } catch (const prepost::Error& e) {
    return e.code() == expected;
  }
  return false;
}

inline bool bit_equal(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

// One draw from a location-scale t via normal over scaled chi-square.
inline double draw_t(prepost::SplitMix64& rng, const prepost::StudentT& d) {
  const double z = rng.next_normal();
  const double chi2 = 2.0 * rng.next_gamma(0.5 * d.df);
  return d.location + d.scale * z / std::sqrt(chi2 / d.df);
}

// Monte Carlo standard error of the p-quantile estimate from a sorted
// sample, using the quantile-slope estimate of 1/density.
inline double quantile_se(const std::vector<double>& sorted, double p,
                          std::size_t n) {
  const double delta = 0.002;
  const double slope =
      (prepost::equal_weight_quantile_sorted(sorted, p + delta) -
       prepost::equal_weight_quantile_sorted(sorted, p - delta)) /
      (2.0 * delta);
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n)) * slope;
}

// n values whose sample mean and sd equal the requested ones up to roundoff.
inline std::vector<double> synth(std::size_t n, double mean, double sd,
                                 std::uint64_t seed) {
  prepost::SplitMix64 rng(seed);
  std::vector<double> z(n);
  for (auto& v : z) v = rng.next_normal();
  const auto s = prepost::summarize(z);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = mean + sd * (z[i] - s.mean) / s.sd;
  return out;
}

// Correlated pre/post generator: x ~ N(mu0, sigma0^2), y | x through the
// regression slope rho * sigma / sigma0 with residual sd
// sigma * sqrt(1 - rho^2).
inline prepost::PrePostSample gen_sample(std::uint64_t seed, std::size_t n,
                                         double mu0, double sigma0,
                                         double mu_c, double mu_t,
                                         double sigma, double rho) {
  prepost::SplitMix64 rng(seed);
  const double beta = rho * sigma / sigma0;
  const double tau = sigma * std::sqrt(1.0 - rho * rho);
  prepost::PrePostSample s;
  const auto fill = [&](std::vector<double>& xs, std::vector<double>& ys,
                        double mu) {
    xs.resize(n);
    ys.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = mu0 + sigma0 * rng.next_normal();
      ys[i] = mu + beta * (xs[i] - mu0) + tau * rng.next_normal();
    }
  };
  fill(s.x_c, s.y_c, mu_c);
  fill(s.x_t, s.y_t, mu_t);
  return s;
}

}  // namespace test_support

#endif
