#ifndef PREPOST_PREPOST_MODEL_HPP
#define PREPOST_PREPOST_MODEL_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "prepost/post_model.hpp"
#include "prepost/stats.hpp"

namespace prepost {

// Paired pre/post observations for both groups. Pairing is by index:
// (x_c[i], y_c[i]) belong to the same bucket.
struct PrePostSample {
  std::vector<double> x_c;
  std::vector<double> y_c;
  std::vector<double> x_t;
  std::vector<double> y_t;
};

// Pseudo-posterior of the shared pre-period mean, computed from the pooled
// pre-period only: T_{N-1}(pooled mean, pooled sd/sqrt(N)).
StudentT mu0_pseudo_posterior(std::span<const double> x_c,
                              std::span<const double> x_t);

// Conditional posterior of a group's post-period mean given mu0:
// T_{n-2}(intercept, resid_sd * intercept_scale) from the regression of y
// on (x - mu0).
StudentT conditional_mu_posterior(std::span<const double> x,
                                  std::span<const double> y, double mu0);

// Largest D for which the D^3 atom multiset is materialized. Above this,
// prepost_percent_change switches to streaming selection and grid_dump
// refuses.
inline constexpr std::size_t kMaxMaterializedNodes = 200;

struct GridConditionals {
  StudentT control;
  StudentT treatment;
  std::vector<double> control_nodes;    // D, increasing
  std::vector<double> treatment_nodes;  // D, increasing
};

// The full discrete approximation, exported for figures and audits. Atom
// order is (d0 outer, d_t middle, d_c inner), so atoms grouped by mu0 node
// form D blocks of D^2, each block exactly the cross product of the two
// conditional node sets.
struct GridApproximation {
  std::size_t nodes = 0;
  StudentT mu0_posterior{1.0, 0.0, 1.0};
  std::vector<double> mu0_nodes;
  std::vector<GridConditionals> conditionals;
  std::vector<double> percent_change_atoms;  // D^3
};

// Pre-Post estimate over the D^3 grid: discretize the mu0 pseudo-posterior,
// condition each group's regression posterior on every mu0 node, cross the
// conditional discretizations, and read quantiles off the equal-weight atom
// multiset. Deterministic; bit-identical for identical input regardless of
// the materialized/streaming path taken.
PercentChangeEstimate prepost_percent_change(const PrePostSample& sample,
                                             std::size_t nodes = 50,
                                             double level = 0.95);

GridApproximation grid_dump(const PrePostSample& sample, std::size_t nodes);

}  // namespace prepost

#endif
