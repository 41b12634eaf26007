#include "prepost/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "doctest.h"
#include "prepost/errors.hpp"
#include "prepost/rng.hpp"

using namespace prepost;

namespace {

bool throws_code(errc expected, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code() == expected;
  }
  return false;
}

}  // namespace

TEST_CASE("summarize computes n-1 denominator moments") {
  const std::vector<double> a{1.0, 2.0, 3.0};
  const auto sa = summarize(a);
  CHECK(sa.n == 3);
  CHECK(sa.mean == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(sa.sd == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<double> b{5.0, 5.0, 5.0, 5.0};
  const auto sb = summarize(b);
  CHECK(sb.n == 4);
  CHECK(sb.mean == 5.0);
  CHECK(sb.sd == 0.0);

  // Pooled two-group vector used by the pre-period pseudo-posterior.
  const std::vector<double> pooled{1.0, 3.0, 2.0, 4.0};
  const auto sp = summarize(pooled);
  CHECK(sp.mean == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(sp.sd == doctest::Approx(1.2909944487358056284).epsilon(1e-15));
}

TEST_CASE("summarize rejects degenerate input") {
  const std::vector<double> one{42.0};
  CHECK(throws_code(errc::insufficient_data, [&] { summarize(one); }));
  const std::vector<double> bad{1.0, std::nan("")};
  CHECK(throws_code(errc::invalid_input, [&] { summarize(bad); }));
}

TEST_CASE("t_quantile closed-form cases") {
  CHECK(t_quantile({1.0, 0.0, 1.0}, 0.75) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t_quantile({7.0, 10.0, 2.0}, 0.5) == 10.0);
  // Frozen high-precision inversions of the incomplete-beta CDF.
  CHECK(t_quantile({5.0, 0.0, 1.0}, 0.975) ==
        doctest::Approx(2.5705818356363155147).epsilon(1e-12));
  CHECK(t_quantile({3.0, 0.0, 1.0}, 0.975) ==
        doctest::Approx(3.1824463052837095927).epsilon(1e-12));
  CHECK(t_quantile({7.0, 0.0, 1.0}, 0.6) ==
        doctest::Approx(0.26316686135202281214).epsilon(1e-12));
  CHECK(t_quantile({30.0, 0.0, 1.0}, 0.01) ==
        doctest::Approx(-2.4572615424005913725).epsilon(1e-12));
  CHECK(t_quantile({200.0, 0.0, 1.0}, 0.99) ==
        doctest::Approx(2.3451370822594684448).epsilon(1e-12));
  CHECK(t_quantile({2.0, 0.0, 1.0}, 0.9) ==
        doctest::Approx(1.8856180831641267317).epsilon(1e-12));
}

TEST_CASE("t_quantile location-scale transform and input checks") {
  const StudentT d{5.0, 3.0, 2.0};
  CHECK(t_quantile(d, 0.975) ==
        doctest::Approx(3.0 + 2.0 * 2.5705818356363155147).epsilon(1e-12));
  CHECK(throws_code(errc::invalid_input, [&] { t_quantile(d, 0.0); }));
  CHECK(throws_code(errc::invalid_input, [&] { t_quantile(d, 1.0); }));
  CHECK(throws_code(errc::invalid_input,
                    [] { t_quantile({0.0, 0.0, 1.0}, 0.5); }));
  CHECK(throws_code(errc::invalid_input,
                    [] { t_quantile({5.0, 0.0, 0.0}, 0.5); }));
}

TEST_CASE("t_quantile and t_cdf agree with an independent reference") {
  for (double df : {1.0, 2.0, 5.0, 30.0, 200.0}) {
    const boost::math::students_t ref(df);
    for (int i = 1; i <= 99; ++i) {
      const double p = i / 100.0;
      const double q = t_quantile({df, 0.0, 1.0}, p);
      const double q_ref = boost::math::quantile(ref, p);
      CHECK(std::fabs(q - q_ref) <=
            1e-10 * std::max(1.0, std::fabs(q_ref)));
      // Roundtrip: cdf(quantile(p)) = p.
      CHECK(t_cdf({df, 0.0, 1.0}, q) == doctest::Approx(p).epsilon(1e-9));
    }
  }
}

TEST_CASE("t_quantile is monotone in p") {
  for (double df : {1.0, 4.0, 19.0, 38.0}) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 1; i < 200; ++i) {
      const double q = t_quantile({df, 0.0, 1.0}, i / 200.0);
      CHECK(q > prev);
      prev = q;
    }
  }
}

TEST_CASE("discretize hits the (2d-1)/(2D) quantiles") {
  const StudentT cauchy{1.0, 0.0, 1.0};
  const auto two = discretize(cauchy, 2);
  REQUIRE(two.size() == 2);
  CHECK(two[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-12));

  const auto one = discretize({9.0, 42.0, 3.0}, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 42.0);

  const StudentT d{30.0, 100.0, 0.5};
  const auto nodes = discretize(d, 20);
  REQUIRE(nodes.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(nodes[i] ==
          doctest::Approx(t_quantile(d, (2.0 * (i + 1) - 1.0) / 40.0))
              .epsilon(1e-12));
    // Symmetry around the location is exact by construction.
    CHECK(nodes[i] + nodes[19 - i] == 200.0);
  }
  CHECK(std::is_sorted(nodes.begin(), nodes.end()));
  CHECK(throws_code(errc::invalid_input, [&] { discretize(d, 0); }));
}

TEST_CASE("discretize symmetry across df and D") {
  for (double df : {1.0, 3.0, 19.0, 199.0}) {
    for (std::size_t D : {2u, 5u, 50u, 201u}) {
      const auto nodes = discretize({df, 7.0, 1.25}, D);
      for (std::size_t d = 0; d < D; ++d)
        CHECK(std::fabs(nodes[d] + nodes[D - 1 - d] - 14.0) <= 1e-9);
    }
  }
}

TEST_CASE("ols_fit recovers exact lines and matches the normal equations") {
  const std::vector<double> x1{1, 2, 3, 4}, y1{3, 5, 7, 9};
  const auto f1 = ols_fit(x1, y1, 0.0);
  CHECK(f1.intercept == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f1.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f1.resid_sd == doctest::Approx(0.0).epsilon(1e-12));

  const std::vector<double> x2{1, 2, 3}, y2{7, 7, 7};
  const auto f2 = ols_fit(x2, y2, 2.0);
  CHECK(f2.intercept == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(f2.slope == doctest::Approx(0.0).epsilon(1e-12));

  // Normal-equations oracle, solved at 40-digit precision.
  const std::vector<double> x3{0.8, 1.1, 2.2, 2.9, 4.0};
  const std::vector<double> y3{1.2, 2.3, 3.1, 4.8, 5.1};
  const auto f3 = ols_fit(x3, y3, 0.0);
  CHECK(f3.slope == doctest::Approx(1.2072463768115942029).epsilon(1e-10));
  CHECK(f3.intercept == doctest::Approx(0.64405797101449275362).epsilon(1e-10));
  CHECK(f3.resid_sd == doctest::Approx(0.54272082484441921706).epsilon(1e-10));
  CHECK(f3.intercept_scale ==
        doctest::Approx(0.94944682597937986923).epsilon(1e-10));
  CHECK(f3.n == 5);
}

TEST_CASE("ols_fit center shift equals pre-shifted covariate") {
  SplitMix64 rng(11);
  std::vector<double> x(30), y(30), x_shift(30);
  const double c = 17.25;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 100.0 + rng.next_normal();
    y[i] = 50.0 + 0.7 * x[i] + 0.3 * rng.next_normal();
    x_shift[i] = x[i] - c;
  }
  const auto a = ols_fit(x, y, c);
  const auto b = ols_fit(x_shift, y, 0.0);
  CHECK(a.intercept == doctest::Approx(b.intercept).epsilon(1e-12));
  CHECK(a.slope == doctest::Approx(b.slope).epsilon(1e-12));
  CHECK(a.resid_sd == doctest::Approx(b.resid_sd).epsilon(1e-12));
  CHECK(a.intercept_scale == doctest::Approx(b.intercept_scale).epsilon(1e-12));
}

TEST_CASE("ols_fit error paths") {
  const std::vector<double> xc{2, 2, 2}, y{1, 2, 3};
  CHECK(throws_code(errc::degenerate_covariate, [&] { ols_fit(xc, y, 0.0); }));
  const std::vector<double> x2{1, 2}, y2{1, 2};
  CHECK(throws_code(errc::insufficient_data, [&] { ols_fit(x2, y2, 0.0); }));
  const std::vector<double> x3{1, 2, 3}, y3{1, 2};
  CHECK(throws_code(errc::invalid_input, [&] { ols_fit(x3, y3, 0.0); }));
}

TEST_CASE("classical_t_interval matches the frozen t quantile") {
  const auto [lo, hi] = classical_t_interval({4, 10.0, 2.0}, 0.95);
  CHECK(lo == doctest::Approx(6.8175536947162904073).epsilon(1e-12));
  CHECK(hi == doctest::Approx(13.182446305283709593).epsilon(1e-12));

  const auto [lo2, hi2] = classical_t_interval({100, 0.0, 1.0}, 0.95);
  CHECK(lo2 == doctest::Approx(-hi2).epsilon(1e-12));

  CHECK(throws_code(errc::invalid_input,
                    [] { classical_t_interval({4, 10.0, 2.0}, 1.0); }));
  CHECK(throws_code(errc::degenerate_variance,
                    [] { classical_t_interval({4, 10.0, 0.0}, 0.95); }));
}

TEST_CASE("classical_t_interval endpoints are posterior quantiles") {
  // The posterior T_{n-1}(mean, sd/sqrt(n)) reproduces the classical
  // interval exactly at (1 +- level)/2.
  const SampleStats s{17, 3.25, 0.8};
  const StudentT post{16.0, 3.25, 0.8 / std::sqrt(17.0)};
  for (double level : {0.5, 0.9, 0.95, 0.99}) {
    const auto [lo, hi] = classical_t_interval(s, level);
    CHECK(lo == doctest::Approx(t_quantile(post, 0.5 * (1.0 - level)))
                    .epsilon(1e-13));
    CHECK(hi == doctest::Approx(t_quantile(post, 0.5 * (1.0 + level)))
                    .epsilon(1e-13));
  }
}

TEST_CASE("equal_weight_quantile follows the midpoint convention") {
  const std::vector<double> odd{1, 2, 3, 4, 5};
  CHECK(equal_weight_quantile(odd, 0.5) == 3.0);
  const std::vector<double> even{1, 2, 3, 4};
  CHECK(equal_weight_quantile(even, 0.5) == 2.5);

  // A grid reproduces its own generating quantiles.
  const StudentT d{9.0, 5.0, 2.0};
  const auto nodes = discretize(d, 51);
  for (std::size_t k = 1; k <= 51; ++k) {
    const double p = (2.0 * k - 1.0) / 102.0;
    CHECK(equal_weight_quantile(nodes, p) ==
          doctest::Approx(nodes[k - 1]).epsilon(1e-13));
  }

  const std::vector<double> empty;
  CHECK(throws_code(errc::invalid_input,
                    [&] { equal_weight_quantile(empty, 0.5); }));
  CHECK(throws_code(errc::invalid_input,
                    [&] { equal_weight_quantile(odd, 1.0); }));
}

TEST_CASE("equal_weight_quantile near 1.96 on normal atoms") {
  SplitMix64 rng(2026);
  std::vector<double> atoms(10000);
  for (auto& a : atoms) a = rng.next_normal();
  CHECK(std::fabs(equal_weight_quantile(atoms, 0.975) - 1.96) < 0.05);
}

TEST_CASE("equal_weight_quantile is monotone and permutation invariant") {
  SplitMix64 rng(7);
  std::vector<double> atoms(501);
  for (auto& a : atoms) a = rng.next_normal();

  double prev = -std::numeric_limits<double>::infinity();
  for (int i = 1; i < 40; ++i) {
    const double q = equal_weight_quantile(atoms, i / 40.0);
    CHECK(q >= prev);
    prev = q;
  }

  auto shuffled = atoms;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937(3));
  for (double p : {0.025, 0.31, 0.5, 0.77, 0.975})
    CHECK(equal_weight_quantile(shuffled, p) ==
          equal_weight_quantile(atoms, p));
}

TEST_CASE("sorted and partial selection variants agree with the full sort") {
  SplitMix64 rng(99);
  std::vector<double> atoms(1000);
  for (auto& a : atoms) a = rng.next_normal();

  auto sorted = atoms;
  std::sort(sorted.begin(), sorted.end());
  for (double p : {0.001, 0.025, 0.5, 0.975, 0.999}) {
    const double q = equal_weight_quantile(atoms, p);
    CHECK(equal_weight_quantile_sorted(sorted, p) == q);
    auto scratch = atoms;
    CHECK(equal_weight_quantile_partial(scratch, p) == q);
  }
}
