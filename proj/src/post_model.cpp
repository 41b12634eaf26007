#include "prepost/post_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prepost/errors.hpp"

namespace prepost {

const char* method_name(Method m) noexcept {
  switch (m) {
    case Method::post: return "post";
    case Method::prepost: return "prepost";
    case Method::gibbs: return "gibbs";
  }
  return "unknown";
}

StudentT post_posterior(const GroupSample& group) {
  const SampleStats s = summarize(group.values);
  if (!(s.sd > 0.0))
    throw Error(errc::degenerate_variance,
                "post_posterior: constant group values");
  const double n = static_cast<double>(s.n);
  return StudentT{n - 1.0, s.mean, s.sd / std::sqrt(n)};
}

bool check_positivity(const SampleStats& control) {
  return control.mean >
         5.0 * control.sd / std::sqrt(static_cast<double>(control.n));
}

double percent_change(double mu_t, double mu_c) {
  if (mu_c == 0.0)
    throw Error(errc::division_by_zero, "percent_change: mu_c is zero");
  // Ratio first: equal means give exactly zero, and rescaling both means
  // by a power of two cannot move the result.
  return 100.0 * (mu_t / mu_c) - 100.0;
}

namespace detail {

double atom_with_zero_control(double mu_t) {
  if (mu_t == 0.0)
    throw Error(errc::division_by_zero,
                "percent change undefined: both grid nodes are zero");
  return mu_t > 0.0 ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

PercentChangeEstimate post_percent_change(const GroupSample& control,
                                          const GroupSample& treatment,
                                          std::size_t nodes, double level) {
  if (nodes < 2)
    throw Error(errc::invalid_input,
                "post_percent_change: need at least 2 nodes");
  if (!(level > 0.0 && level < 1.0))
    throw Error(errc::invalid_input,
                "post_percent_change: level must be in (0,1)");

  const StudentT post_c = post_posterior(control);
  const StudentT post_t = post_posterior(treatment);
  const auto nodes_c = discretize(post_c, nodes);
  const auto nodes_t = discretize(post_t, nodes);

  std::vector<double> atoms;
  atoms.reserve(nodes * nodes);
  for (const double t : nodes_t)
    for (const double c : nodes_c)
      atoms.push_back(detail::percent_change_atom(t, c));
  std::sort(atoms.begin(), atoms.end());

  PercentChangeEstimate est;
  est.median = equal_weight_quantile_sorted(atoms, 0.5);
  est.ci_lower = equal_weight_quantile_sorted(atoms, 0.5 * (1.0 - level));
  est.ci_upper = equal_weight_quantile_sorted(atoms, 0.5 * (1.0 + level));
  est.level = level;
  est.method = Method::post;
  est.nodes_or_iterations = nodes;
  est.positivity_ok = check_positivity(summarize(control.values));
  return est;
}

}  // namespace prepost
