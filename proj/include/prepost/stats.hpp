#ifndef PREPOST_STATS_HPP
#define PREPOST_STATS_HPP

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace prepost {

// Sufficient statistics of one group's observations. sd uses the n-1
// denominator, so n >= 2 is required.
struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
};

SampleStats summarize(std::span<const double> values);

// Location-scale Student-t distribution. df > 0, scale > 0.
struct StudentT {
  double df;
  double location;
  double scale;
};

double t_cdf(const StudentT& dist, double x);

// p-quantile of the location-scale t distribution. Newton inversion of the
// incomplete-beta CDF; relative accuracy well below 1e-10.
double t_quantile(const StudentT& dist, double p);

// Equal-weight quantile discretization: node d (1-indexed) sits at the
// (2d-1)/(2D) quantile. Strictly increasing, symmetric about the location.
std::vector<double> discretize(const StudentT& dist, std::size_t nodes);

// Least-squares fit of y on (x - center). resid_sd uses the n-2 denominator;
// intercept_scale * resid_sd is the classical standard error of the
// intercept.
struct OlsFit {
  double intercept;
  double slope;
  double resid_sd;
  double intercept_scale;
  std::size_t n;
};

OlsFit ols_fit(std::span<const double> x, std::span<const double> y,
               double center);

// mean +- t_{n-1,(1+level)/2} * sd/sqrt(n)
std::pair<double, double> classical_t_interval(const SampleStats& stats,
                                               double level);

// p-quantile of the equal-weight atom multiset: inverse empirical CDF with
// midpoint interpolation (h = p*n + 1/2 on the order statistics), so a
// size-D grid reproduces its own generating quantiles.
double equal_weight_quantile(std::span<const double> values, double p);

// Same convention on already-sorted values.
double equal_weight_quantile_sorted(std::span<const double> sorted, double p);

// Same convention via selection; reorders v instead of sorting it.
double equal_weight_quantile_partial(std::span<double> v, double p);

namespace detail {

// Regularized incomplete beta I_x(a, b) by continued fraction.
double ibeta(double a, double b, double x);

// Quantile of the standard normal; Acklam's rational approximation polished
// with one Halley step, good to machine precision.
double norm_quantile(double p);

double std_t_pdf(double df, double t);
double std_t_cdf(double df, double t);
double std_t_quantile(double df, double p);

// The D standard-t nodes at probabilities (2d-1)/(2D), exactly antisymmetric.
std::vector<double> standard_t_nodes(double df, std::size_t nodes);

// loc + scale * node, shared by discretize() and the grid estimators so the
// two paths are bit-identical.
std::vector<double> affine_nodes(double location, double scale,
                                 std::span<const double> std_nodes);

}  // namespace detail

}  // namespace prepost

#endif
