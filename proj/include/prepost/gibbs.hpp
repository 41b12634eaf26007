#ifndef PREPOST_GIBBS_HPP
#define PREPOST_GIBBS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "prepost/post_model.hpp"
#include "prepost/prepost_model.hpp"
#include "prepost/rng.hpp"

namespace prepost {

struct GibbsConfig {
  std::size_t iterations = 2000;  // kept draws per chain, after burn-in
  std::size_t burnin = 100;
  std::uint64_t seed = 0;
  std::size_t chains = 1;
};

// Kept draws, chain-major: index = chain * iterations + iteration.
struct GibbsTrace {
  std::size_t chains = 0;
  std::size_t iterations = 0;
  std::vector<double> mu0;
  std::vector<double> sigma0_sq;
  std::vector<double> mu_c;
  std::vector<double> beta_c;
  std::vector<double> tau_c_sq;
  std::vector<double> mu_t;
  std::vector<double> beta_t;
  std::vector<double> tau_t_sq;
  std::vector<double> percent_change;
};

struct GibbsResult {
  PercentChangeEstimate estimate;
  GibbsTrace trace;
};

// Posterior percent change by Gibbs sampling of the shared-covariate
// regression model. Chains run from seeds derived deterministically from
// config.seed; draws from all chains pool into one quantile pass, so the
// result depends only on (sample, config, level).
GibbsResult gibbs_percent_change(const PrePostSample& sample,
                                 const GibbsConfig& config,
                                 double level = 0.95);

// Running percent-change quantiles after each kept iteration of one chain.
struct QuantileTrajectory {
  std::vector<double> q_lower;   // 2.5%
  std::vector<double> q_median;  // 50%
  std::vector<double> q_upper;   // 97.5%
};

// One independent chain per seed, each tracked for max_iterations kept
// draws. Output order matches seed order.
std::vector<QuantileTrajectory> chain_stability_report(
    const PrePostSample& sample, std::span<const std::uint64_t> seeds,
    std::size_t max_iterations);

namespace gibbs_detail {

struct State {
  double mu0;
  double sigma0_sq;
  double mu_c;
  double beta_c;
  double tau_c_sq;
  double mu_t;
  double beta_t;
  double tau_t_sq;
};

struct NormalParams {
  double mean;
  double sd;
};

struct InvGammaParams {
  double shape;
  double rate;
};

// Full-conditional parameters, each computed by direct accumulation over
// the data so the sampler stays an independent check on the grid path.
NormalParams mu0_conditional(const PrePostSample& sample, const State& st);
InvGammaParams sigma0_conditional(const PrePostSample& sample,
                                  const State& st);
NormalParams mu_conditional(std::span<const double> x,
                            std::span<const double> y, double mu0,
                            double beta, double tau_sq);
NormalParams beta_conditional(std::span<const double> x,
                              std::span<const double> y, double mu0,
                              double mu, double tau_sq);
InvGammaParams tau_conditional(std::span<const double> x,
                               std::span<const double> y, double mu0,
                               double mu, double beta);

State init_state(const PrePostSample& sample);

double draw_inv_gamma(SplitMix64& rng, const InvGammaParams& p);

}  // namespace gibbs_detail

}  // namespace prepost

#endif
