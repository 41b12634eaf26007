#ifndef PREPOST_RNG_HPP
#define PREPOST_RNG_HPP

#include <cstdint>

namespace prepost {

// SplitMix64 finalizer (Vigna's public-domain mixer).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
  z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
  return z ^ (z >> 31);
}

// Stream seed for (master seed, stream index). Streams are decorrelated by
// mixing, so replicate results do not depend on execution order.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::uint64_t stream) noexcept {
  return mix64(seed ^ mix64(stream + UINT64_C(0xD1B54A32D192ED03)));
}

// SplitMix64 generator: 64-bit state, golden-ratio increment. All variate
// transforms below are branch-deterministic functions of the raw stream, so
// output is bit-identical across platforms for a given seed.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += UINT64_C(0x9E3779B97F4A7C15);
    return mix64(state_);
  }

  // Uniform on the open interval (0,1): 53-bit mantissa, half-step offset.
  double next_open() noexcept {
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal by inverse-CDF transform (one uniform per draw).
  double next_normal();

  // Gamma(shape, 1) by Marsaglia-Tsang squeeze; shape > 0.
  double next_gamma(double shape);

  // Unbiased uniform on [0, bound) by Lemire's multiply-shift rejection.
  std::uint64_t next_below(std::uint64_t bound);

private:
  std::uint64_t state_;
};

}  // namespace prepost

#endif
