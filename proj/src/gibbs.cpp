#include "prepost/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "prepost/errors.hpp"
#include "prepost/stats.hpp"

namespace prepost {

namespace gibbs_detail {

NormalParams mu0_conditional(const PrePostSample& sample, const State& st) {
  const auto n_c = static_cast<double>(sample.x_c.size());
  const auto n_t = static_cast<double>(sample.x_t.size());

  double precision = (n_c + n_t) / st.sigma0_sq;
  double weighted = 0.0;
  for (const double x : sample.x_c) weighted += x;
  for (const double x : sample.x_t) weighted += x;
  weighted /= st.sigma0_sq;

  // Post-period observations see mu0 through the slope: each residual
  // y - mu - beta*(x - mu0) is normal, so a group with nonzero beta adds
  // n * beta^2 / tau^2 of precision about mu0.
  const auto add_group = [&](std::span<const double> x,
                             std::span<const double> y, double mu,
                             double beta, double tau_sq) {
    const auto n = static_cast<double>(x.size());
    precision += n * beta * beta / tau_sq;
    double resid_sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      resid_sum += y[i] - mu - beta * x[i];
    weighted -= beta / tau_sq * resid_sum;
  };
  add_group(sample.x_c, sample.y_c, st.mu_c, st.beta_c, st.tau_c_sq);
  add_group(sample.x_t, sample.y_t, st.mu_t, st.beta_t, st.tau_t_sq);

  return {weighted / precision, 1.0 / std::sqrt(precision)};
}

InvGammaParams sigma0_conditional(const PrePostSample& sample,
                                  const State& st) {
  double ss = 0.0;
  for (const double x : sample.x_c) ss += (x - st.mu0) * (x - st.mu0);
  for (const double x : sample.x_t) ss += (x - st.mu0) * (x - st.mu0);
  const auto n = static_cast<double>(sample.x_c.size() + sample.x_t.size());
  return {0.5 * n, 0.5 * ss};
}

NormalParams mu_conditional(std::span<const double> x,
                            std::span<const double> y, double mu0,
                            double beta, double tau_sq) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    sum += y[i] - beta * (x[i] - mu0);
  const auto n = static_cast<double>(x.size());
  return {sum / n, std::sqrt(tau_sq / n)};
}

NormalParams beta_conditional(std::span<const double> x,
                              std::span<const double> y, double mu0,
                              double mu, double tau_sq) {
  double suu = 0.0;
  double suv = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = x[i] - mu0;
    suu += u * u;
    suv += u * (y[i] - mu);
  }
  if (suu <= 0.0)
    throw Error(errc::degenerate_covariate,
                "slope update needs pre-period spread around mu0");
  return {suv / suu, std::sqrt(tau_sq / suu)};
}

InvGammaParams tau_conditional(std::span<const double> x,
                               std::span<const double> y, double mu0,
                               double mu, double beta) {
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - mu - beta * (x[i] - mu0);
    ss += e * e;
  }
  return {0.5 * static_cast<double>(x.size()), 0.5 * ss};
}

State init_state(const PrePostSample& sample) {
  std::vector<double> pre(sample.x_c.begin(), sample.x_c.end());
  pre.insert(pre.end(), sample.x_t.begin(), sample.x_t.end());
  const SampleStats pre_stats = summarize(pre);
  if (pre_stats.sd <= 0.0)
    throw Error(errc::degenerate_covariate,
                "pre-period values are constant across both groups");

  State st;
  st.mu0 = pre_stats.mean;
  st.sigma0_sq = pre_stats.sd * pre_stats.sd;

  const OlsFit fit_c = ols_fit(sample.x_c, sample.y_c, st.mu0);
  const OlsFit fit_t = ols_fit(sample.x_t, sample.y_t, st.mu0);
  st.mu_c = fit_c.intercept;
  st.beta_c = fit_c.slope;
  st.tau_c_sq = fit_c.resid_sd * fit_c.resid_sd;
  st.mu_t = fit_t.intercept;
  st.beta_t = fit_t.slope;
  st.tau_t_sq = fit_t.resid_sd * fit_t.resid_sd;
  return st;
}

double draw_inv_gamma(SplitMix64& rng, const InvGammaParams& p) {
  return p.rate / rng.next_gamma(p.shape);
}

}  // namespace gibbs_detail

namespace {

using gibbs_detail::State;

void validate_sample(const PrePostSample& sample) {
  if (sample.x_c.size() != sample.y_c.size() ||
      sample.x_t.size() != sample.y_t.size())
    throw Error(errc::invalid_input,
                "pre/post streams must pair up within each group");
  if (sample.x_c.size() < 3 || sample.x_t.size() < 3)
    throw Error(errc::insufficient_data,
                "need at least 3 paired buckets per group");
}

double draw_normal(SplitMix64& rng, const gibbs_detail::NormalParams& p) {
  return p.mean + p.sd * rng.next_normal();
}

// One systematic-scan update of every parameter, in a fixed order so a
// seed pins the whole trajectory.
void sweep(const PrePostSample& sample, State& st, SplitMix64& rng) {
  st.mu0 = draw_normal(rng, gibbs_detail::mu0_conditional(sample, st));
  st.sigma0_sq =
      gibbs_detail::draw_inv_gamma(rng, gibbs_detail::sigma0_conditional(sample, st));

  st.mu_c = draw_normal(rng, gibbs_detail::mu_conditional(
                                 sample.x_c, sample.y_c, st.mu0, st.beta_c,
                                 st.tau_c_sq));
  st.beta_c = draw_normal(rng, gibbs_detail::beta_conditional(
                                   sample.x_c, sample.y_c, st.mu0, st.mu_c,
                                   st.tau_c_sq));
  st.tau_c_sq = gibbs_detail::draw_inv_gamma(
      rng, gibbs_detail::tau_conditional(sample.x_c, sample.y_c, st.mu0,
                                         st.mu_c, st.beta_c));

  st.mu_t = draw_normal(rng, gibbs_detail::mu_conditional(
                                 sample.x_t, sample.y_t, st.mu0, st.beta_t,
                                 st.tau_t_sq));
  st.beta_t = draw_normal(rng, gibbs_detail::beta_conditional(
                                   sample.x_t, sample.y_t, st.mu0, st.mu_t,
                                   st.tau_t_sq));
  st.tau_t_sq = gibbs_detail::draw_inv_gamma(
      rng, gibbs_detail::tau_conditional(sample.x_t, sample.y_t, st.mu0,
                                         st.mu_t, st.beta_t));
}

bool state_finite(const State& st) {
  return std::isfinite(st.mu0) && std::isfinite(st.sigma0_sq) &&
         std::isfinite(st.mu_c) && std::isfinite(st.beta_c) &&
         std::isfinite(st.tau_c_sq) && std::isfinite(st.mu_t) &&
         std::isfinite(st.beta_t) && std::isfinite(st.tau_t_sq);
}

[[noreturn]] void throw_non_finite(std::size_t chain, std::size_t iteration) {
  throw Error(errc::numerical_failure,
              "non-finite draw in chain " + std::to_string(chain) +
                  " at iteration " + std::to_string(iteration));
}

// Runs one chain and hands every kept (state, percent change) pair to the
// sink. Iteration indices in errors count sweeps from 1, burn-in included.
template <class Sink>
void run_chain(const PrePostSample& sample, std::uint64_t chain_seed,
               std::size_t chain_index, std::size_t burnin,
               std::size_t iterations, const Sink& keep) {
  State st = gibbs_detail::init_state(sample);
  SplitMix64 rng(chain_seed);
  const std::size_t total = burnin + iterations;
  for (std::size_t iter = 1; iter <= total; ++iter) {
    sweep(sample, st, rng);
    if (!state_finite(st)) throw_non_finite(chain_index, iter);
    if (iter <= burnin) continue;
    const double pc = detail::percent_change_atom(st.mu_t, st.mu_c);
    if (!std::isfinite(pc)) throw_non_finite(chain_index, iter);
    keep(st, pc);
  }
}

}  // namespace

GibbsResult gibbs_percent_change(const PrePostSample& sample,
                                 const GibbsConfig& config, double level) {
  if (config.iterations == 0)
    throw Error(errc::config_error, "need at least 1 kept iteration");
  if (config.chains == 0)
    throw Error(errc::config_error, "need at least 1 chain");
  if (!(level > 0.0 && level < 1.0))
    throw Error(errc::invalid_input,
                "gibbs_percent_change: level must be in (0,1)");
  validate_sample(sample);

  const std::size_t kept = config.chains * config.iterations;
  GibbsTrace trace;
  trace.chains = config.chains;
  trace.iterations = config.iterations;
  for (auto* series :
       {&trace.mu0, &trace.sigma0_sq, &trace.mu_c, &trace.beta_c,
        &trace.tau_c_sq, &trace.mu_t, &trace.beta_t, &trace.tau_t_sq,
        &trace.percent_change})
    series->reserve(kept);

  for (std::size_t chain = 0; chain < config.chains; ++chain) {
    run_chain(sample, derive_seed(config.seed, chain), chain, config.burnin,
              config.iterations, [&](const State& st, double pc) {
                trace.mu0.push_back(st.mu0);
                trace.sigma0_sq.push_back(st.sigma0_sq);
                trace.mu_c.push_back(st.mu_c);
                trace.beta_c.push_back(st.beta_c);
                trace.tau_c_sq.push_back(st.tau_c_sq);
                trace.mu_t.push_back(st.mu_t);
                trace.beta_t.push_back(st.beta_t);
                trace.tau_t_sq.push_back(st.tau_t_sq);
                trace.percent_change.push_back(pc);
              });
  }

  std::vector<double> sorted = trace.percent_change;
  std::sort(sorted.begin(), sorted.end());

  GibbsResult result;
  result.estimate.median = equal_weight_quantile_sorted(sorted, 0.5);
  result.estimate.ci_lower =
      equal_weight_quantile_sorted(sorted, 0.5 * (1.0 - level));
  result.estimate.ci_upper =
      equal_weight_quantile_sorted(sorted, 0.5 * (1.0 + level));
  result.estimate.level = level;
  result.estimate.method = Method::gibbs;
  result.estimate.nodes_or_iterations = kept;
  result.estimate.positivity_ok = check_positivity(summarize(sample.y_c));
  result.trace = std::move(trace);
  return result;
}

std::vector<QuantileTrajectory> chain_stability_report(
    const PrePostSample& sample, std::span<const std::uint64_t> seeds,
    std::size_t max_iterations) {
  if (seeds.size() < 2)
    throw Error(errc::invalid_input,
                "stability report needs at least 2 chain seeds");
  if (max_iterations == 0)
    throw Error(errc::invalid_input,
                "stability report needs at least 1 iteration");
  validate_sample(sample);

  const GibbsConfig defaults;
  // Same probability expressions as the estimate path, so a trajectory's
  // last point reproduces the full-run quantiles bit for bit.
  const double level = 0.95;
  const double p_lower = 0.5 * (1.0 - level);
  const double p_upper = 0.5 * (1.0 + level);
  std::vector<QuantileTrajectory> report(seeds.size());
  for (std::size_t c = 0; c < seeds.size(); ++c) {
    QuantileTrajectory& traj = report[c];
    traj.q_lower.reserve(max_iterations);
    traj.q_median.reserve(max_iterations);
    traj.q_upper.reserve(max_iterations);

    std::vector<double> sorted;
    sorted.reserve(max_iterations);
    run_chain(sample, derive_seed(seeds[c], 0), c, defaults.burnin,
              max_iterations, [&](const State&, double pc) {
                sorted.insert(
                    std::upper_bound(sorted.begin(), sorted.end(), pc), pc);
                traj.q_lower.push_back(
                    equal_weight_quantile_sorted(sorted, p_lower));
                traj.q_median.push_back(
                    equal_weight_quantile_sorted(sorted, 0.5));
                traj.q_upper.push_back(
                    equal_weight_quantile_sorted(sorted, p_upper));
              });
  }
  return report;
}

}  // namespace prepost
