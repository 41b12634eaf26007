#ifndef PREPOST_POST_MODEL_HPP
#define PREPOST_POST_MODEL_HPP

#include <cstddef>
#include <vector>

#include "prepost/stats.hpp"

namespace prepost {

enum class Group { control, treatment };

// One group's post-period observations. Percent change is only meaningful
// for positive-mean metrics; see check_positivity.
struct GroupSample {
  Group label;
  std::vector<double> values;
};

enum class Method { post, prepost, gibbs };

const char* method_name(Method m) noexcept;

struct PercentChangeEstimate {
  double median = 0.0;      // percent
  double ci_lower = 0.0;    // percent
  double ci_upper = 0.0;    // percent
  double level = 0.95;
  Method method = Method::post;
  std::size_t nodes_or_iterations = 0;
  bool positivity_ok = false;
};

// Posterior of the group mean under the reference prior:
// T_{n-1}(mean, sd/sqrt(n)).
StudentT post_posterior(const GroupSample& group);

// Rule of thumb gating percent-change interpretation: control mean must
// exceed five standard errors.
bool check_positivity(const SampleStats& control);

// 100 * mu_t / mu_c - 100.
double percent_change(double mu_t, double mu_c);

// Post-only estimate: cross the D-node discretizations of the two group
// posteriors, evaluate percent change on all D^2 equal-weight pairs, read
// median and CI off the atom multiset. Control nodes that land at or below
// zero are kept (a node exactly at zero yields an infinite atom at the
// extreme of the multiset); positivity_ok reports whether the result is
// interpretable. Deterministic: identical input gives bit-identical output.
PercentChangeEstimate post_percent_change(const GroupSample& control,
                                          const GroupSample& treatment,
                                          std::size_t nodes = 50,
                                          double level = 0.95);

namespace detail {

// Resolves an atom whose control node is exactly zero: an infinite atom of
// the sign of mu_t, or an error when mu_t is zero as well.
double atom_with_zero_control(double mu_t);

// Grid-atom variant of percent_change: a control node exactly at zero maps
// to an infinite atom instead of throwing, so no atom is ever dropped.
// Inline because selection engines evaluate it in inner loops.
inline double percent_change_atom(double mu_t, double mu_c) {
  if (mu_c == 0.0) return atom_with_zero_control(mu_t);
  return 100.0 * (mu_t / mu_c) - 100.0;
}

}  // namespace detail

}  // namespace prepost

#endif
