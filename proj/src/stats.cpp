#include "prepost/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <unordered_map>

#include "prepost/errors.hpp"

namespace prepost {

const char* errc_name(errc code) noexcept {
  switch (code) {
    case errc::invalid_input: return "invalid_input";
    case errc::insufficient_data: return "insufficient_data";
    case errc::degenerate_variance: return "degenerate_variance";
    case errc::degenerate_covariate: return "degenerate_covariate";
    case errc::zero_residual: return "zero_residual";
    case errc::division_by_zero: return "division_by_zero";
    case errc::refused_size: return "refused_size";
    case errc::numerical_failure: return "numerical_failure";
    case errc::schema_error: return "schema_error";
    case errc::config_error: return "config_error";
    case errc::io_error: return "io_error";
  }
  return "unknown";
}

SampleStats summarize(std::span<const double> values) {
  if (values.size() < 2)
    throw Error(errc::insufficient_data,
                "summarize: need at least 2 values, got " +
                    std::to_string(values.size()));
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v))
      throw Error(errc::invalid_input, "summarize: non-finite value");
    sum += v;
  }
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  return SampleStats{values.size(), mean, std::sqrt(ss / (n - 1.0))};
}

namespace detail {

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  const double kFpMin = std::numeric_limits<double>::min() / kEps;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw Error(errc::numerical_failure, "incomplete beta did not converge");
}

}  // namespace

double ibeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw Error(errc::invalid_input, "norm_quantile: p must be in (0,1)");

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // One Halley step against the exact CDF.
  static const double kSqrt2Pi = std::sqrt(2.0 * M_PI);
  const double e = 0.5 * std::erfc(-x / M_SQRT2) - p;
  const double u = e * kSqrt2Pi * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double std_t_pdf(double df, double t) {
  const double ln = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                    0.5 * std::log(df * M_PI) -
                    0.5 * (df + 1.0) * std::log1p(t * t / df);
  return std::exp(ln);
}

double std_t_cdf(double df, double t) {
  const double x = df / (df + t * t);
  const double tail = 0.5 * ibeta(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

namespace {

// Upper tail P(T > t) for t >= 0, kept unsubtracted for precision.
double std_t_upper_tail(double df, double t) {
  return 0.5 * ibeta(0.5 * df, 0.5, df / (df + t * t));
}

}  // namespace

double std_t_quantile(double df, double p) {
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -std_t_quantile(df, 1.0 - p);

  // Solve tail(t) = 1 - p on t > 0. Initial guess: Cornish-Fisher around
  // the normal quantile (exact closed forms for df 1 and 2).
  const double q = 1.0 - p;
  double t0;
  if (df == 1.0) {
    t0 = std::tan(M_PI * (p - 0.5));
  } else if (df == 2.0) {
    const double u = 2.0 * p - 1.0;
    t0 = u * std::sqrt(2.0 / (1.0 - u * u));
  } else {
    const double z = norm_quantile(p);
    const double z3 = z * z * z;
    const double z5 = z3 * z * z;
    t0 = z + (z3 + z) / (4.0 * df) +
         (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * df * df);
  }

  double lo = 0.0;
  double hi = std::max(2.0 * t0, 1.0);
  while (std_t_upper_tail(df, hi) > q) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi))
      throw Error(errc::numerical_failure, "t quantile bracket overflow");
  }

  double t = std::clamp(t0, lo, hi);
  for (int iter = 0; iter < 100; ++iter) {
    const double f = std_t_upper_tail(df, t) - q;
    if (f > 0.0)
      lo = t;
    else
      hi = t;
    const double dens = std_t_pdf(df, t);
    double step = f / dens;  // tail' = -pdf, so Newton moves by +f/pdf
    double next = t + step;
    if (!(next > lo && next < hi) || !std::isfinite(next))
      next = 0.5 * (lo + hi);
    if (std::fabs(next - t) <= 1e-15 * (1.0 + std::fabs(next))) return next;
    t = next;
  }
  return t;
}

namespace {

std::vector<double> compute_standard_t_nodes(double df, std::size_t nodes) {
  const std::size_t D = nodes;
  std::vector<double> out(D);
  const double denom = 2.0 * static_cast<double>(D);
  // Upper half by inversion, lower half mirrored so symmetry is exact.
  for (std::size_t d = D / 2; d < D; ++d) {
    const double p = (2.0 * static_cast<double>(d + 1) - 1.0) / denom;
    out[d] = p == 0.5 ? 0.0 : std_t_quantile(df, p);
    out[D - 1 - d] = -out[d];
  }
  return out;
}

}  // namespace

std::vector<double> standard_t_nodes(double df, std::size_t nodes) {
  // Node sets depend only on (df, D) and quantile inversion dominates grid
  // setup, so repeated same-shape datasets share one computation. The cache
  // is tiny: one entry per distinct degrees-of-freedom/size pair.
  struct Key {
    std::uint64_t df_bits;
    std::size_t nodes;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<std::uint64_t>{}(k.df_bits * 1000003u + k.nodes);
    }
  };
  static std::mutex cache_mutex;
  static std::unordered_map<Key, std::vector<double>, KeyHash> cache;

  const Key key{std::bit_cast<std::uint64_t>(df), nodes};
  {
    const std::lock_guard<std::mutex> lock(cache_mutex);
    const auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  std::vector<double> fresh = compute_standard_t_nodes(df, nodes);
  const std::lock_guard<std::mutex> lock(cache_mutex);
  return cache.try_emplace(key, std::move(fresh)).first->second;
}

std::vector<double> affine_nodes(double location, double scale,
                                 std::span<const double> std_nodes) {
  std::vector<double> out(std_nodes.size());
  for (std::size_t i = 0; i < std_nodes.size(); ++i)
    out[i] = location + scale * std_nodes[i];
  return out;
}

}  // namespace detail

namespace {

void check_student_t(const StudentT& dist) {
  if (!(dist.df > 0.0) || !(dist.scale > 0.0) || !std::isfinite(dist.location))
    throw Error(errc::invalid_input, "StudentT requires df > 0 and scale > 0");
}

}  // namespace

double t_cdf(const StudentT& dist, double x) {
  check_student_t(dist);
  return detail::std_t_cdf(dist.df, (x - dist.location) / dist.scale);
}

double t_quantile(const StudentT& dist, double p) {
  check_student_t(dist);
  if (!(p > 0.0 && p < 1.0))
    throw Error(errc::invalid_input, "t_quantile: p must be in (0,1)");
  return dist.location + dist.scale * detail::std_t_quantile(dist.df, p);
}

std::vector<double> discretize(const StudentT& dist, std::size_t nodes) {
  check_student_t(dist);
  if (nodes == 0)
    throw Error(errc::invalid_input, "discretize: node count must be >= 1");
  return detail::affine_nodes(dist.location, dist.scale,
                              detail::standard_t_nodes(dist.df, nodes));
}

OlsFit ols_fit(std::span<const double> x, std::span<const double> y,
               double center) {
  if (x.size() != y.size())
    throw Error(errc::invalid_input, "ols_fit: length mismatch");
  if (x.size() < 3)
    throw Error(errc::insufficient_data,
                "ols_fit: need at least 3 points, got " +
                    std::to_string(x.size()));
  const std::size_t n = x.size();
  const double nd = static_cast<double>(n);

  double sum_u = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw Error(errc::invalid_input, "ols_fit: non-finite value");
    sum_u += x[i] - center;
    sum_y += y[i];
  }
  const double ubar = sum_u / nd;
  const double ybar = sum_y / nd;

  double suu = 0.0, suy = 0.0, sum_u2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[i] - center;
    const double du = u - ubar;
    suu += du * du;
    suy += du * (y[i] - ybar);
    sum_u2 += u * u;
  }
  if (suu <= 0.0)
    throw Error(errc::degenerate_covariate, "ols_fit: constant covariate");

  const double slope = suy / suu;
  const double intercept = ybar - slope * ubar;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - intercept - slope * (x[i] - center);
    ssr += r * r;
  }
  const double resid_sd = std::sqrt(std::max(ssr, 0.0) / (nd - 2.0));
  const double intercept_scale = std::sqrt(sum_u2 / (nd * suu));
  return OlsFit{intercept, slope, resid_sd, intercept_scale, n};
}

std::pair<double, double> classical_t_interval(const SampleStats& stats,
                                               double level) {
  if (!(level > 0.0 && level < 1.0))
    throw Error(errc::invalid_input,
                "classical_t_interval: level must be in (0,1)");
  if (stats.n < 2)
    throw Error(errc::insufficient_data,
                "classical_t_interval: need n >= 2");
  if (!(stats.sd > 0.0))
    throw Error(errc::degenerate_variance,
                "classical_t_interval: sd must be > 0");
  const double se = stats.sd / std::sqrt(static_cast<double>(stats.n));
  const double q = detail::std_t_quantile(static_cast<double>(stats.n) - 1.0,
                                          0.5 * (1.0 + level));
  return {stats.mean - q * se, stats.mean + q * se};
}

namespace {

double quantile_of_sorted(std::span<const double> sorted, double p) {
  const double nd = static_cast<double>(sorted.size());
  const double h = p * nd + 0.5;
  if (h <= 1.0) return sorted.front();
  if (h >= nd) return sorted.back();
  const std::size_t k = static_cast<std::size_t>(h);  // 1-based lower rank
  const double frac = h - static_cast<double>(k);
  const double vk = sorted[k - 1];
  // Equal neighbors short-circuit so tied (or infinite) atoms interpolate
  // to themselves.
  if (frac == 0.0 || sorted[k] == vk) return vk;
  return vk + frac * (sorted[k] - vk);
}

}  // namespace

double equal_weight_quantile(std::span<const double> values, double p) {
  if (values.empty())
    throw Error(errc::invalid_input, "equal_weight_quantile: empty input");
  if (!(p > 0.0 && p < 1.0))
    throw Error(errc::invalid_input,
                "equal_weight_quantile: p must be in (0,1)");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_of_sorted(sorted, p);
}

double equal_weight_quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty())
    throw Error(errc::invalid_input, "equal_weight_quantile: empty input");
  if (!(p > 0.0 && p < 1.0))
    throw Error(errc::invalid_input,
                "equal_weight_quantile: p must be in (0,1)");
  return quantile_of_sorted(sorted, p);
}

double equal_weight_quantile_partial(std::span<double> v, double p) {
  if (v.empty())
    throw Error(errc::invalid_input, "equal_weight_quantile: empty input");
  if (!(p > 0.0 && p < 1.0))
    throw Error(errc::invalid_input,
                "equal_weight_quantile: p must be in (0,1)");
  const double nd = static_cast<double>(v.size());
  const double h = p * nd + 0.5;
  if (h <= 1.0) return *std::min_element(v.begin(), v.end());
  if (h >= nd) return *std::max_element(v.begin(), v.end());
  const std::size_t k = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(k);
  auto kth = v.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(v.begin(), kth, v.end());
  const double vk = *kth;
  if (frac == 0.0) return vk;
  const double vk1 = *std::min_element(kth + 1, v.end());
  if (vk1 == vk) return vk;
  return vk + frac * (vk1 - vk);
}

}  // namespace prepost
