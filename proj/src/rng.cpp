#include "prepost/rng.hpp"

#include <cmath>

#include "prepost/errors.hpp"
#include "prepost/stats.hpp"

namespace prepost {

double SplitMix64::next_normal() {
  return detail::norm_quantile(next_open());
}

double SplitMix64::next_gamma(double shape) {
  if (!(shape > 0.0))
    throw Error(errc::invalid_input, "next_gamma: shape must be > 0");
  // Boost small shapes up by one, then scale back down.
  if (shape < 1.0) {
    const double u = next_open();
    return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = next_normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = next_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::uint64_t SplitMix64::next_below(std::uint64_t bound) {
  if (bound == 0)
    throw Error(errc::invalid_input, "next_below: bound must be > 0");
  unsigned __int128 m =
      static_cast<unsigned __int128>(next()) * bound;
  auto lo = static_cast<std::uint64_t>(m);
  if (lo < bound) {
    const std::uint64_t threshold = -bound % bound;
    while (lo < threshold) {
      m = static_cast<unsigned __int128>(next()) * bound;
      lo = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

}  // namespace prepost
