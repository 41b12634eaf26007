#include "prepost/prepost_model.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#if defined(__AVX512F__) || defined(__AVX__)
#include <immintrin.h>
#endif
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "prepost/errors.hpp"

namespace prepost {

double g_batch_us = 0; unsigned long g_batch_calls = 0; unsigned long g_batch_values = 0;
double g_collect_us = 0; double g_sort_us = 0; double g_frame_us = 0;
double g_select_us = 0; double g_nth_us = 0; unsigned long g_rounds = 0;
unsigned long g_sort_calls = 0; unsigned long g_sub_n = 0; double g_sub_us = 0;
double g_cwalk_us = 0; double g_cemit_us = 0;

StudentT mu0_pseudo_posterior(std::span<const double> x_c,
                              std::span<const double> x_t) {
  std::vector<double> pooled;
  pooled.reserve(x_c.size() + x_t.size());
  pooled.insert(pooled.end(), x_c.begin(), x_c.end());
  pooled.insert(pooled.end(), x_t.begin(), x_t.end());
  const SampleStats s = summarize(pooled);
  if (!(s.sd > 0.0))
    throw Error(errc::degenerate_variance,
                "mu0_pseudo_posterior: constant pooled pre-period");
  const double n = static_cast<double>(s.n);
  return StudentT{n - 1.0, s.mean, s.sd / std::sqrt(n)};
}

StudentT conditional_mu_posterior(std::span<const double> x,
                                  std::span<const double> y, double mu0) {
  const OlsFit fit = ols_fit(x, y, mu0);
  if (!(fit.resid_sd > 0.0))
    throw Error(errc::zero_residual,
                "conditional_mu_posterior: zero residual variance");
  return StudentT{static_cast<double>(fit.n) - 2.0, fit.intercept,
                  fit.resid_sd * fit.intercept_scale};
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower rank, upper rank, and interpolation fraction for the p-quantile of
// a multiset of the given size, under the same midpoint convention as
// equal_weight_quantile.
struct QuantileRanks {
  std::size_t k1;
  std::size_t k2;
  double frac;
};

QuantileRanks quantile_ranks(std::size_t total, double p) {
  const double nd = static_cast<double>(total);
  const double h = p * nd + 0.5;
  if (h <= 1.0) return {1, 1, 0.0};
  if (h >= nd) return {total, total, 0.0};
  const auto k = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(k);
  if (frac == 0.0) return {k, k, 0.0};
  return {k, k + 1, frac};
}

// Exact selection of a handful of order statistics from a large multiset,
// visited by repeated passes: one pass for bounds, one to histogram, one to
// collect the few bins holding the requested ranks. Works identically over
// a materialized array or an implicit atom stream.
template <class ForEach>
std::vector<double> select_ranks(std::size_t total,
                                 const std::vector<std::size_t>& ranks,
                                 const ForEach& for_each) {
  double lo = kInf, hi = -kInf;
  std::uint64_t n_neg_inf = 0, n_pos_inf = 0;
  for_each([&](double a) {
    if (a == -kInf) {
      ++n_neg_inf;
    } else if (a == kInf) {
      ++n_pos_inf;
    } else {
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  });
  const std::uint64_t n_finite = total - n_neg_inf - n_pos_inf;

  std::vector<double> out(ranks.size());
  std::vector<std::size_t> finite_rank(ranks.size(), 0);  // 1-based, 0 = done
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const std::size_t r = ranks[i];
    if (r <= n_neg_inf)
      out[i] = -kInf;
    else if (r > n_neg_inf + n_finite)
      out[i] = kInf;
    else if (n_finite > 0 && lo == hi)
      out[i] = lo;
    else
      finite_rank[i] = r - n_neg_inf;
  }
  if (std::all_of(finite_rank.begin(), finite_rank.end(),
                  [](std::size_t r) { return r == 0; }))
    return out;

  // Halved mapping keeps hi - lo representable even across huge ranges.
  constexpr std::size_t kBins = 8192;
  const double half_lo = 0.5 * lo;
  const double inv_half_width = 1.0 / (0.5 * hi - half_lo);
  const auto bin_of = [&](double a) -> std::size_t {
    const double offset = (0.5 * a - half_lo) * inv_half_width;
    const auto b = static_cast<std::size_t>(
        std::max(0.0, offset * static_cast<double>(kBins)));
    return std::min(b, kBins - 1);
  };

  std::vector<std::uint64_t> counts(kBins, 0);
  for_each([&](double a) {
    if (a != -kInf && a != kInf) ++counts[bin_of(a)];
  });

  std::vector<std::uint64_t> cum(kBins + 1, 0);
  for (std::size_t b = 0; b < kBins; ++b) cum[b + 1] = cum[b] + counts[b];

  std::vector<std::size_t> bin_for(ranks.size(), kBins);
  std::vector<char> needed(kBins, 0);
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (finite_rank[i] == 0) continue;
    const std::uint64_t r = finite_rank[i];
    const std::size_t b = static_cast<std::size_t>(
        std::upper_bound(cum.begin() + 1, cum.end(), r - 1) -
        (cum.begin() + 1));
    bin_for[i] = b;
    needed[b] = 1;
  }

  std::vector<std::vector<double>> members(kBins);
  for_each([&](double a) {
    if (a == -kInf || a == kInf) return;
    const std::size_t b = bin_of(a);
    if (needed[b]) members[b].push_back(a);
  });

  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (finite_rank[i] == 0) continue;
    const std::size_t b = bin_for[i];
    auto& v = members[b];
    const auto local =
        static_cast<std::size_t>(finite_rank[i] - cum[b]);  // 1-based
    auto kth = v.begin() + static_cast<std::ptrdiff_t>(local - 1);
    std::nth_element(v.begin(), kth, v.end());
    out[i] = *kth;
  }
  return out;
}

// Order-preserving integer image of a finite double: negatives flip every
// bit, nonnegatives flip the sign bit, so unsigned order matches value
// order.
inline std::uint64_t rank_key(double d) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(d);
  return u ^ ((0ull - (u >> 63)) | (std::uint64_t{1} << 63));
}

inline double rank_key_value(std::uint64_t u) {
  return std::bit_cast<double>(
      u ^ ((0ull - ((u >> 63) ^ 1ull)) | (std::uint64_t{1} << 63)));
}

// Exact order statistics k and, on request, k+1 (zero-based) by counting
// byte buckets of the integer image. Every pass over the data is a
// branch-free scan, so one-shot calls on never-seen values run near the
// repeat-call cost; a partition-based selection pays heavily for cold
// branch history on exactly that pattern. cur/alt are grow-only scratch.
void radix_select_pair(const double* v, std::size_t n, std::size_t k,
                       bool want_next, double* first, double* second,
                       std::vector<std::uint64_t>& cur,
                       std::vector<std::uint64_t>& alt) {
  if (cur.size() < n) cur.resize(n);
  if (alt.size() < n) alt.resize(n);
  std::array<std::uint64_t, 4> mns, mxs;
  mns.fill(~std::uint64_t{0});
  mxs.fill(0);
  {
    const std::size_t n4 = n & ~std::size_t{3};
    for (std::size_t i = 0; i < n4; i += 4)
      for (std::size_t l = 0; l < 4; ++l) {
        const std::uint64_t u = rank_key(v[i + l]);
        cur[i + l] = u;
        mns[l] = std::min(mns[l], u);
        mxs[l] = std::max(mxs[l], u);
      }
    for (std::size_t i = n4; i < n; ++i) {
      const std::uint64_t u = rank_key(v[i]);
      cur[i] = u;
      mns[0] = std::min(mns[0], u);
      mxs[0] = std::max(mxs[0], u);
    }
  }
  std::uint64_t kmin =
      std::min(std::min(mns[0], mns[1]), std::min(mns[2], mns[3]));
  std::uint64_t kmax =
      std::max(std::max(mxs[0], mxs[1]), std::max(mxs[2], mxs[3]));
  const std::uint64_t* c = cur.data();
  std::uint64_t* o = alt.data();
  std::size_t ra = k;
  bool pending_next = want_next;
  for (;;) {
    if (kmin == kmax || n == 1) {
      *first = rank_key_value(kmin);
      if (pending_next) *second = *first;
      return;
    }
    const int lvl = (63 - std::countl_zero(kmin ^ kmax)) >> 3;
    const int sh = 8 * lvl;
    // Four interleaved counter banks; a single bank serializes on the
    // store-to-load forward when most keys share a few buckets.
    std::array<std::uint32_t, 4 * 256> c4{};
    const std::size_t n4c = n & ~std::size_t{3};
    for (std::size_t i = 0; i < n4c; i += 4) {
      ++c4[0 * 256 + ((c[i + 0] >> sh) & 255)];
      ++c4[1 * 256 + ((c[i + 1] >> sh) & 255)];
      ++c4[2 * 256 + ((c[i + 2] >> sh) & 255)];
      ++c4[3 * 256 + ((c[i + 3] >> sh) & 255)];
    }
    for (std::size_t i = n4c; i < n; ++i) ++c4[(c[i] >> sh) & 255];
    std::array<std::uint32_t, 256> cnt;
    for (std::size_t b = 0; b < 256; ++b)
      cnt[b] = c4[b] + c4[256 + b] + c4[512 + b] + c4[768 + b];
    std::size_t ba = 0, before = 0;
    while (before + cnt[ba] <= ra) {
      before += cnt[ba];
      ++ba;
    }
    if (pending_next && ra + 1 >= before + cnt[ba]) {
      // The partner rank exits this bucket; it is the least key of the
      // next nonempty one.
      std::size_t bb = ba + 1;
      while (cnt[bb] == 0) ++bb;
      std::uint64_t m2 = ~std::uint64_t{0};
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t in = 0ull - (((c[i] >> sh) & 255) == bb);
        m2 = std::min(m2, c[i] | ~in);
      }
      *second = rank_key_value(m2);
      pending_next = false;
    }
    if (cnt[ba] == 1) {
      std::uint64_t m1 = ~std::uint64_t{0};
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t in = 0ull - (((c[i] >> sh) & 255) == ba);
        m1 = std::min(m1, c[i] | ~in);
      }
      *first = rank_key_value(m1);
      return;
    }
    // Keep bucket ba. The store is unconditional and the cursor advances
    // only on matches; cnt[ba] < n here, so the trailing store stays in
    // bounds.
    std::size_t m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t u = c[i];
      o[m] = u;
      m += ((u >> sh) & 255) == ba;
    }
    // Extremes of the kept bucket from a short pass over the filtered
    // copy; folding them into the filter would chain every iteration.
    std::array<std::uint64_t, 4> bmn, bmx;
    bmn.fill(~std::uint64_t{0});
    bmx.fill(0);
    const std::size_t m4 = m & ~std::size_t{3};
    for (std::size_t i = 0; i < m4; i += 4)
      for (std::size_t l = 0; l < 4; ++l) {
        bmn[l] = std::min(bmn[l], o[i + l]);
        bmx[l] = std::max(bmx[l], o[i + l]);
      }
    for (std::size_t i = m4; i < m; ++i) {
      bmn[0] = std::min(bmn[0], o[i]);
      bmx[0] = std::max(bmx[0], o[i]);
    }
    ra -= before;
    n = m;
    kmin = std::min(std::min(bmn[0], bmn[1]), std::min(bmn[2], bmn[3]));
    kmax = std::max(std::max(bmx[0], bmx[1]), std::max(bmx[2], bmx[3]));
    c = o;
    o = (c == cur.data()) ? alt.data() : cur.data();
  }
}

struct GridFrame {
  StudentT mu0_posterior{1.0, 0.0, 1.0};
  std::vector<double> mu0_nodes;
  std::vector<GridConditionals> conditionals;
};

void validate_sample(const PrePostSample& sample) {
  if (sample.x_c.size() != sample.y_c.size() ||
      sample.x_t.size() != sample.y_t.size())
    throw Error(errc::invalid_input,
                "pre/post streams must pair up within each group");
  if (sample.x_c.size() < 3 || sample.x_t.size() < 3)
    throw Error(errc::insufficient_data,
                "need at least 3 paired buckets per group");
}

GridFrame build_frame(const PrePostSample& sample, std::size_t nodes) {
  if (nodes < 2)
    throw Error(errc::invalid_input, "grid needs at least 2 nodes");
  validate_sample(sample);

  GridFrame frame;
  frame.mu0_posterior = mu0_pseudo_posterior(sample.x_c, sample.x_t);
  const auto std_mu0 =
      detail::standard_t_nodes(frame.mu0_posterior.df, nodes);
  frame.mu0_nodes = detail::affine_nodes(frame.mu0_posterior.location,
                                         frame.mu0_posterior.scale, std_mu0);

  // One standard node set per group; every conditional posterior shares its
  // group's df, so the per-node discretization is an affine map of it.
  // Bit-identical to calling discretize() per conditional.
  const auto std_c = detail::standard_t_nodes(
      static_cast<double>(sample.x_c.size()) - 2.0, nodes);
  const auto std_t = detail::standard_t_nodes(
      static_cast<double>(sample.x_t.size()) - 2.0, nodes);

  frame.conditionals.reserve(nodes);
  for (const double mu0 : frame.mu0_nodes) {
    GridConditionals cond;
    cond.control = conditional_mu_posterior(sample.x_c, sample.y_c, mu0);
    cond.treatment = conditional_mu_posterior(sample.x_t, sample.y_t, mu0);
    cond.control_nodes = detail::affine_nodes(cond.control.location,
                                              cond.control.scale, std_c);
    cond.treatment_nodes = detail::affine_nodes(
        cond.treatment.location, cond.treatment.scale, std_t);
    frame.conditionals.push_back(std::move(cond));
  }
  return frame;
}

// Visits every atom in (d0, d_t, d_c) order.
template <class Sink>
void for_each_grid_atom(const GridFrame& frame, const Sink& sink) {
  for (const auto& cond : frame.conditionals)
    for (const double t : cond.treatment_nodes)
      for (const double c : cond.control_nodes)
        sink(detail::percent_change_atom(t, c));
}

// Structured exact selection. Within one mu0 slice, atom(i, j) <= x holds
// exactly when t_i lies below a threshold proportional to c_j, and the
// thresholds move one way as j advances, so counting atoms below a value
// takes one pointer pass per slice instead of a pass over all D^3 atoms.
// Rounding of the atom expression is confined to a margin band around each
// threshold: pairs inside the band are evaluated with the pinned atom
// expression, so counts, and therefore the selected order statistics, are
// bit-identical to brute force. The margin is ~2^-40 relative while the
// rounding ambiguity stays below 2^-48, so the band is almost always
// empty. Pointer advances are grouped four compares at a time so the loads
// stay independent and the hot branches stay predictable on fresh data.
class FastSelector {
 public:
  // Eligibility: control nodes finite, nonzero and same-signed across the
  // whole grid (an all-negative grid is negated, which leaves every atom
  // bit-identical since (-t)/(-c) rounds exactly like t/c); treatment nodes
  // finite; no overflow risk in 100 * t / c.
  static std::optional<FastSelector> make(const GridFrame& frame,
                                          std::size_t nodes) {
    if (nodes > 4096) return std::nullopt;
    FastSelector s;
    s.nodes_ = nodes;
    const std::size_t slices = frame.conditionals.size();
    double max_abs_t = 0.0;
    double min_abs_c = kInf;
    int sign = 0;
    for (const auto& cond : frame.conditionals) {
      const auto& t = cond.treatment_nodes;
      const auto& c = cond.control_nodes;
      if (!std::isfinite(t.front()) || !std::isfinite(t.back()) ||
          !std::isfinite(c.front()) || !std::isfinite(c.back()))
        return std::nullopt;
      int slice_sign;
      if (c.front() > 0.0)
        slice_sign = 1;
      else if (c.back() < 0.0)
        slice_sign = -1;
      else
        return std::nullopt;  // spans or touches zero
      if (sign == 0) sign = slice_sign;
      if (slice_sign != sign) return std::nullopt;
      max_abs_t = std::max(max_abs_t,
                           std::max(std::fabs(t.front()), std::fabs(t.back())));
      min_abs_c = std::min(min_abs_c,
                           std::min(std::fabs(c.front()), std::fabs(c.back())));
    }
    if (max_abs_t / min_abs_c > 1e290) return std::nullopt;

    // Treatment rows are copied with a tail of +inf sentinels so pointer
    // advances may read a fixed four slots ahead without bounds checks. An
    // all-negative grid is negated and reversed, which leaves every atom
    // bit-identical since (-t)/(-c) rounds exactly like t/c.
    s.t_views_.resize(slices);
    s.c_views_.resize(slices);
    s.storage_.reserve(slices * (2 * nodes + kPad));
    std::vector<std::size_t> t_off(slices), c_off(slices);
    for (std::size_t k = 0; k < slices; ++k) {
      const auto copy = [&s, sign](const std::vector<double>& v, bool pad) {
        const std::size_t base = s.storage_.size();
        if (sign > 0)
          s.storage_.insert(s.storage_.end(), v.begin(), v.end());
        else
          for (std::size_t i = v.size(); i-- > 0;) s.storage_.push_back(-v[i]);
        if (pad) s.storage_.insert(s.storage_.end(), kPad, kInf);
        return base;
      };
      t_off[k] = copy(frame.conditionals[k].treatment_nodes, true);
      c_off[k] = copy(frame.conditionals[k].control_nodes, false);
    }
    for (std::size_t k = 0; k < slices; ++k) {
      s.t_views_[k] = {s.storage_.data() + t_off[k], nodes};
      s.c_views_[k] = {s.storage_.data() + c_off[k], nodes};
    }
    s.const_rows_.assign(2 * nodes, 0);
    std::fill(s.const_rows_.begin() + static_cast<std::ptrdiff_t>(nodes),
              s.const_rows_.end(), static_cast<std::uint32_t>(nodes));
    return s;
  }

  // Values of the requested order statistics (ranks ascending, 1-based,
  // unique), or nullopt when the search degenerates and the caller should
  // use the enumeration engine instead.
  std::optional<std::vector<double>> select(
      const std::vector<std::size_t>& ranks) const {
    const std::uint64_t total = static_cast<std::uint64_t>(nodes_) * nodes_ *
                                static_cast<std::uint64_t>(nodes_);
    const std::uint64_t collect_target =
        total <= 4096 ? total : std::uint64_t{4096};
    seed_sentinels(total);
    if (total > collect_target) seed_subgrid(ranks, total);

    // One task per run of adjacent ranks; a run shares one bracket and one
    // collected window, so it refines toward its midpoint as a unit.
    struct Task {
      std::uint64_t k_first;
      std::uint64_t k_last;
      std::uint64_t k;  // midpoint, the secant target
      bool resolved = false;
      bool midpointed = false;
      double pending = 0.0;
      int stall_side = 0;
      int stall_run = 0;
    };
    std::vector<Task> tasks;
    for (std::size_t r = 0; r < ranks.size();) {
      std::size_t e = r;
      while (e + 1 < ranks.size() && ranks[e + 1] == ranks[e] + 1) ++e;
      Task task;
      task.k_first = ranks[r];
      task.k_last = ranks[e];
      task.k = ranks[r] + (ranks[e] - ranks[r]) / 2;
      tasks.push_back(task);
      r = e + 1;
    }

    std::vector<double> proposals;
    for (int round = 0;; ++round) {
      ++g_rounds;
      if (round >= 64) return std::nullopt;
      proposals.clear();
      for (Task& task : tasks) {
        if (task.resolved) continue;
        const Probe* lo;
        const Probe* hi;
        const Probe* unused;
        bracket(task.k_first, &lo, &unused);
        bracket(task.k_last, &unused, &hi);
        const std::uint64_t gap = hi->count - lo->count;
        if (std::getenv("PP_DIAG"))
          std::fprintf(stderr, "round %d k %llu lo %llu hi %llu gap %llu\n",
                       round, (unsigned long long)task.k,
                       (unsigned long long)lo->count,
                       (unsigned long long)hi->count,
                       (unsigned long long)gap);
        if (gap <= collect_target) {
          task.resolved = true;
          continue;
        }
        // Secant step on the empirical CDF; a midpoint step breaks the
        // one-sided crawl secant falls into on convex tails.
        double v = lo->value + (hi->value - lo->value) *
                                   (static_cast<double>(task.k - lo->count) /
                                    static_cast<double>(gap));
        task.midpointed =
            task.stall_run >= 2 || !(v > lo->value && v < hi->value);
        if (task.midpointed) v = std::midpoint(lo->value, hi->value);
        if (v <= lo->value || v >= hi->value) {
          // Adjacent doubles: a tie block wider than the target.
          if (gap > kCollectCap) return std::nullopt;
          task.resolved = true;
          continue;
        }
        task.pending = v;
        proposals.push_back(v);
      }
      if (proposals.empty()) break;
      std::sort(proposals.begin(), proposals.end());
      proposals.erase(std::unique(proposals.begin(), proposals.end()),
                      proposals.end());
      probe_batch(proposals);
      for (Task& task : tasks) {
        if (task.resolved) continue;
        const int side = probe_count(task.pending) < task.k ? -1 : 1;
        task.stall_run =
            (!task.midpointed && side == task.stall_side) ? task.stall_run + 1
                                                          : 1;
        task.stall_side = side;
      }
    }

    // Resolve every rank from a collected window; adjacent ranks reuse it.
    std::vector<double> out(ranks.size());
    Window w;
    for (std::size_t r = 0; r < ranks.size(); ++r) {
      const std::uint64_t k = ranks[r];
      if (!(w.lo_count < k && k <= w.hi_count)) {
        const Probe* lo;
        const Probe* hi;
        bracket(k, &lo, &hi);
        if (hi->count - lo->count > kCollectCap) return std::nullopt;
        collect(*lo, *hi, w.atoms);
        if (w.atoms.size() != hi->count - lo->count) return std::nullopt;
        w.lo_count = lo->count;
        w.hi_count = hi->count;
      }
      const auto local = static_cast<std::size_t>(k - w.lo_count) - 1;
      { const auto q0 = std::chrono::steady_clock::now();
      const bool pair_next = r + 1 < ranks.size() && ranks[r + 1] == k + 1 &&
                             k + 1 <= w.hi_count;
      double lower = 0.0, upper = 0.0;
      radix_select_pair(w.atoms.data(), w.atoms.size(), local, pair_next,
                        &lower, &upper, sel_cur_, sel_alt_);
      out[r] = lower;
      if (pair_next) {
        out[r + 1] = upper;
        ++r;
      }
        g_nth_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - q0).count(); }
    }
    return out;
  }

 private:
  static constexpr std::uint64_t kCollectCap = std::uint64_t{1} << 23;
  static constexpr std::size_t kMaxBatch = 8;
  static constexpr std::size_t kPad = 8;
  // Pseudo bounds ids for the sentinels' constant row tables.
  static constexpr std::int32_t kBoundsWalk = -1;
  static constexpr std::int32_t kBoundsEmpty = -2;
  static constexpr std::int32_t kBoundsFull = -3;
  // Bounds retention is worthwhile only while a per-value copy of the
  // column bounds stays small; above this the collect pass rebuilds them.
  static constexpr std::size_t kRetainMaxCells = std::size_t{1} << 16;

  // First index at or after l whose row value exceeds the bound. The four
  // compares per step use independent loads, and the sentinel tail keeps
  // them in bounds, so the only branch taken more than once per call is
  // the rare long jump past four rows.
  static std::size_t advance(const double* t, std::size_t l, double bound) {
    for (;;) {
      const std::size_t step = static_cast<std::size_t>(t[l] <= bound) +
                               static_cast<std::size_t>(t[l + 1] <= bound) +
                               static_cast<std::size_t>(t[l + 2] <= bound) +
                               static_cast<std::size_t>(t[l + 3] <= bound);
      l += step;
      if (step < 4) return l;
    }
  }

  struct Probe {
    double value;
    std::uint64_t count;
    std::int32_t bounds = -1;  // index into the retained walk-bounds pool
  };

  struct Window {
    std::uint64_t lo_count = 0;
    std::uint64_t hi_count = 0;
    std::vector<double> atoms;
  };

  // Counts atoms at or below each value of one batch and inserts the
  // probes. For a fixed value, the per-column thresholds move one way as
  // the column index advances (forward when the scaled value is
  // nonnegative, backward otherwise), so a single pointer pass over each
  // slice covers every column. Values must be sorted, unique, and absent
  // from the probe list. When the slice count times the column count is
  // small enough, each value's per-column walk bounds are kept so a later
  // collect over a window edged by that value can skip its own passes;
  // the kept bound is the walk's upper edge, which doubles as the lower
  // edge whenever the value's rounding band caught nothing anywhere, the
  // overwhelmingly common case. A band hit anywhere voids retention for
  // that value.
  void probe_batch(const std::vector<double>& values) const {
    ++g_batch_calls; g_batch_values += values.size();
    const auto q0 = std::chrono::steady_clock::now();
    struct G { std::chrono::steady_clock::time_point t0; double& a;
      ~G() { a += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count(); } } g{q0, g_batch_us};
    const std::size_t cells = t_views_.size() * nodes_;
    const bool retain = cells <= kRetainMaxCells;
    std::array<std::uint64_t, kMaxBatch> cnt;
    std::array<bool, kMaxBatch> dirty;
    std::array<std::uint32_t*, kMaxBatch> rec;
    for (std::size_t lead = 0; lead < values.size();) {
      const bool fwd = values[lead] >= -100.0;
      std::size_t nx = 1;
      while (lead + nx < values.size() && nx < kMaxBatch &&
             (values[lead + nx] >= -100.0) == fwd)
        ++nx;
      dirty.fill(false);
      const std::size_t pool_base = pool_slots_;
      if (retain) {
        pool_slots_ += nx;
        pool_.resize(pool_slots_ * cells);
        for (std::size_t q = 0; q < nx; ++q)
          rec[q] = pool_.data() + (pool_base + q) * cells;
        count_chunk<true>(values.data() + lead, nx, fwd, cnt.data(),
                          dirty.data(), rec);
      } else {
        count_chunk<false>(values.data() + lead, nx, fwd, cnt.data(),
                           dirty.data(), rec);
      }
      for (std::size_t q = 0; q < nx; ++q) {
        const double v = values[lead + q];
        const auto at = std::lower_bound(
            probes_.begin(), probes_.end(), v,
            [](const Probe& p, double x) { return p.value < x; });
        const auto id = retain && !dirty[q]
                            ? static_cast<std::int32_t>(pool_base + q)
                            : -1;
        if (std::getenv("PP_DIAG"))
          std::fprintf(stderr, "probe v %.9f count %llu id %d\n", v,
                       (unsigned long long)cnt[q], id);
        probes_.insert(at, Probe{v, cnt[q], id});
      }
      lead += nx;
    }
  }

  // Compile-time batch width keeps the walk positions and counters in
  // registers; the hot path per column is a threshold multiply, two
  // unconditional single-row nudges, and a rare burst loop.
  template <bool Retain, int NX>
  void count_chunk_n(const double* xs, bool fwd, std::uint64_t* out,
                     bool* dirty,
                     const std::array<std::uint32_t*, kMaxBatch>& rec) const {
    const std::size_t D = nodes_;
    std::array<double, NX> X;
    std::array<std::uint64_t, NX> cnt{};
    for (int q = 0; q < NX; ++q) X[q] = (xs[q] + 100.0) / 100.0;
    for (std::size_t s = 0; s < t_views_.size(); ++s) {
      const double* t = t_views_[s].data();
      const double* c = c_views_[s].data();
      std::array<double, NX> margin;
      std::array<std::size_t, NX> pos{};
      for (int q = 0; q < NX; ++q)
        margin[q] = 0x1p-40 * ((std::fabs(X[q]) + 1.0) * c[D - 1]) + 0x1p-1000;
      for (std::size_t step = 0; step < D; ++step) {
        const std::size_t j = fwd ? step : D - 1 - step;
        const double cj = c[j];
        for (int q = 0; q < NX; ++q) {
          const double thr = X[q] * cj;
          const double bh = thr + margin[q];
          std::size_t h = pos[q];
          h += static_cast<std::size_t>(t[h] <= bh);
          h += static_cast<std::size_t>(t[h] <= bh);
          while (t[h] <= bh) ++h;
          cnt[q] += h;
          if (h > 0 && t[h - 1] > thr - margin[q]) {
            // Rounding band around the threshold caught at least one row;
            // recount those rows against the exact atom value.
            std::size_t l = h - 1;
            while (l > 0 && t[l - 1] > thr - margin[q]) --l;
            cnt[q] -= h - l;
            for (std::size_t i = l; i < h; ++i)
              if (detail::percent_change_atom(t[i], cj) <= xs[q]) ++cnt[q];
            dirty[q] = true;
          }
          pos[q] = h;
          if constexpr (Retain)
            rec[q][s * D + j] = static_cast<std::uint32_t>(h);
        }
      }
    }
    for (int q = 0; q < NX; ++q) out[q] = cnt[q];
  }

  template <bool Retain>
  void count_chunk(const double* xs, std::size_t nx, bool fwd,
                   std::uint64_t* out, bool* dirty,
                   const std::array<std::uint32_t*, kMaxBatch>& rec) const {
    switch (nx) {
      case 1: return count_chunk_n<Retain, 1>(xs, fwd, out, dirty, rec);
      case 2: return count_chunk_n<Retain, 2>(xs, fwd, out, dirty, rec);
      case 3: return count_chunk_n<Retain, 3>(xs, fwd, out, dirty, rec);
      case 4: return count_chunk_n<Retain, 4>(xs, fwd, out, dirty, rec);
      case 5: return count_chunk_n<Retain, 5>(xs, fwd, out, dirty, rec);
      case 6: return count_chunk_n<Retain, 6>(xs, fwd, out, dirty, rec);
      case 7: return count_chunk_n<Retain, 7>(xs, fwd, out, dirty, rec);
      default: return count_chunk_n<Retain, 8>(xs, fwd, out, dirty, rec);
    }
  }

  std::uint64_t probe_count(double value) const {
    const auto at = std::lower_bound(
        probes_.begin(), probes_.end(), value,
        [](const Probe& p, double v) { return p.value < v; });
    return at->count;
  }

  // Exactly the atoms in (plo.value, phi.value]. Per column, rows
  // certainly at or below the lower value are skipped and rows certainly
  // above the upper are cut off; rows between are evaluated. The row
  // ranges come from the probes' retained counting walks when present and
  // are rebuilt with one pointer pass per side otherwise.
  void collect(const Probe& plo, const Probe& phi,
               std::vector<double>& out) const {
    const auto q0 = std::chrono::steady_clock::now();
    struct G { std::chrono::steady_clock::time_point t0; double& a;
      ~G() { a += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count(); } } g{q0, g_collect_us};
    const std::size_t D = nodes_;
    const double vlo = plo.value;
    const double vhi = phi.value;
    const double Xl = (vlo + 100.0) / 100.0;
    const double Xh = (vhi + 100.0) / 100.0;
    const std::size_t cells = t_views_.size() * D;
    // Bounds come from a probe's retained walk, from the constant rows of
    // a sentinel, or from a fresh pointer pass as the last resort. The
    // constant rows are shared across slices, flagged by stride zero.
    const std::uint32_t* lo_all = nullptr;
    const std::uint32_t* hi_all = nullptr;
    std::size_t lo_stride = D, hi_stride = D;
    if (plo.bounds >= 0) {
      lo_all = pool_.data() + static_cast<std::size_t>(plo.bounds) * cells;
    } else if (plo.bounds == kBoundsEmpty) {
      lo_all = const_rows_.data();
      lo_stride = 0;
    }
    if (phi.bounds >= 0) {
      hi_all = pool_.data() + static_cast<std::size_t>(phi.bounds) * cells;
    } else if (phi.bounds == kBoundsFull) {
      hi_all = const_rows_.data() + D;
      hi_stride = 0;
    }
    if (!lo_all) walk_lo_.resize(D);
    if (!hi_all) walk_hi_.resize(D);
    // With retained bounds on both sides the row ranges are exact, so the
    // value filter is redundant and emission is a straight scaled copy.
    const bool exact_rows = lo_all != nullptr && hi_all != nullptr;
    const std::size_t gap = static_cast<std::size_t>(phi.count - plo.count);
    out.clear();
    double* o = nullptr;
    if (exact_rows) {
      out.resize(gap);
      o = out.data();
    } else {
      out.reserve(gap + 64);
    }
    for (std::size_t s = 0; s < t_views_.size(); ++s) {
      const double* t = t_views_[s].data();
      const double* c = c_views_[s].data();
      const auto w0 = std::chrono::steady_clock::now();
      const std::uint32_t* row_lo;
      if (lo_all) {
        row_lo = lo_all + s * lo_stride;
      } else {
        const double ml =
            0x1p-40 * ((std::fabs(Xl) + 1.0) * c[D - 1]) + 0x1p-1000;
        std::size_t l = 0;
        for (std::size_t step = 0; step < D; ++step) {
          const std::size_t j = Xl >= 0.0 ? step : D - 1 - step;
          l = advance(t, l, Xl * c[j] - ml);
          walk_lo_[j] = static_cast<std::uint32_t>(l);
        }
        row_lo = walk_lo_.data();
      }
      const std::uint32_t* row_hi;
      if (hi_all) {
        row_hi = hi_all + s * hi_stride;
      } else {
        const double mh =
            0x1p-40 * ((std::fabs(Xh) + 1.0) * c[D - 1]) + 0x1p-1000;
        std::size_t h = 0;
        for (std::size_t step = 0; step < D; ++step) {
          const std::size_t j = Xh >= 0.0 ? step : D - 1 - step;
          h = advance(t, h, Xh * c[j] + mh);
          walk_hi_[j] = static_cast<std::uint32_t>(h);
        }
        row_hi = walk_hi_.data();
      }
      const auto w1 = std::chrono::steady_clock::now();
      g_cwalk_us += std::chrono::duration<double, std::micro>(w1 - w0).count();
      if (exact_rows) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < D; ++j)
          m += row_hi[j] - row_lo[j];
        if (m > static_cast<std::size_t>(out.data() + gap - o)) {
          out.clear();
          return;  // inconsistent bounds; the caller's size check rejects
        }
        for (std::size_t j = 0; j < D; ++j) {
          const double cj = c[j];
          const std::uint32_t i1 = row_hi[j];
          for (std::uint32_t i = row_lo[j]; i < i1; ++i)
            *o++ = detail::percent_change_atom(t[i], cj);
        }
      } else {
        for (std::size_t j = 0; j < D; ++j) {
          const std::uint32_t i1 = row_hi[j];
          for (std::uint32_t i = row_lo[j]; i < i1; ++i) {
            const double a = detail::percent_change_atom(t[i], c[j]);
            if (a > vlo && a <= vhi) out.push_back(a);
          }
        }
      }
      g_cemit_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - w1).count();
    }
    if (exact_rows) out.resize(static_cast<std::size_t>(o - out.data()));
  }

  // Tightest probes with lo->count < k <= hi->count; the sentinels
  // guarantee both exist.
  void bracket(std::uint64_t k, const Probe** lo, const Probe** hi) const {
    const Probe* l = &probes_.front();
    const Probe* h = &probes_.back();
    for (const Probe& p : probes_) {
      if (p.count < k && p.count >= l->count) l = &p;
      if (p.count >= k && p.value <= h->value) h = &p;
    }
    *lo = l;
    *hi = h;
  }

  // Sentinels: strictly below the smallest atom and at the corner maximum.
  // Extremes of the real-valued ratio sit at slice corners, and rounding is
  // monotone, so corner atoms bound every atom.
  void seed_sentinels(std::uint64_t total) const {
    double corner_min = kInf, corner_max = -kInf;
    for (std::size_t s = 0; s < t_views_.size(); ++s) {
      const std::span<const double> t = t_views_[s];
      const std::span<const double> c = c_views_[s];
      for (const double tv : {t.front(), t.back()})
        for (const double cv : {c.front(), c.back()}) {
          const double a = detail::percent_change_atom(tv, cv);
          corner_min = std::min(corner_min, a);
          corner_max = std::max(corner_max, a);
        }
    }
    probes_.clear();
    probes_.reserve(32);
    pool_.clear();
    pool_slots_ = 0;
    probes_.push_back(
        Probe{std::nextafter(corner_min, -kInf), 0, kBoundsEmpty});
    probes_.push_back(Probe{corner_max, total, kBoundsFull});
  }

  // Subgrid quantiles put a probe on each side of every run of adjacent
  // target ranks, so refinement usually starts from a nearly final
  // bracket. The sample covers every slice, and its values use a
  // reciprocal-multiplied stand-in for the atom expression: seed probes
  // are only threshold guesses, and the counting pass gives them exact
  // ranks, so the stand-in's last-bit wobble is harmless. Quantiles come
  // from a bucket histogram rather than a sort: a bucket edge's sample
  // rank is known exactly from the prefix counts, and the rank margin
  // below already absorbs the sample-to-grid error, so nothing is lost by
  // probing edges instead of sample order statistics.
  void seed_subgrid(const std::vector<std::size_t>& ranks,
                    std::uint64_t total) const {
    const std::size_t D = nodes_;
    const std::size_t S = t_views_.size();
    // At ~16k samples a seed quantile's three-sigma rank band usually
    // fits inside one collect window, so seeding alone brackets the rank.
    const double cells = static_cast<double>(D) * static_cast<double>(D) *
                         static_cast<double>(S);
    const auto step = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(std::sqrt(cells / 16000.0))));
    const std::size_t per_axis = std::min<std::size_t>((D + step - 1) / step,
                                                       std::size_t{128});
    const std::size_t count = S * per_axis * per_axis;
    sub_scratch_.resize(count);
    // Nodes are equal-probability points, so picks must sit at the
    // centers of equal index blocks; aligning picks to either end
    // overweights that tail of the sample and skews its quantiles.
    std::array<std::uint32_t, 128> pick;
    for (std::size_t k = 0; k < per_axis; ++k)
      pick[k] = static_cast<std::uint32_t>((2 * k + 1) * D / (2 * per_axis));
    double mn = kInf, mx = -kInf;
    { const auto qq = std::chrono::steady_clock::now();
    double* out = sub_scratch_.data();
    // The row gather is contiguous after this copy, so the scale loop and
    // its running extremes vectorize.
    std::array<double, 128> trow;
    for (std::size_t s = 0; s < S; ++s) {
      const double* t = t_views_[s].data();
      const double* c = c_views_[s].data();
      for (std::size_t k = 0; k < per_axis; ++k) trow[k] = t[pick[k]];
      for (std::size_t jk = 0; jk < per_axis; ++jk) {
        const double rc = 100.0 / c[pick[jk]];
        for (std::size_t k = 0; k < per_axis; ++k) out[k] = trow[k] * rc - 100.0;
        out += per_axis;
      }
    }
    {
      // Four independent accumulator lanes; a single running min would chain
      // every iteration through one register.
      const double* v = sub_scratch_.data();
      std::array<double, 4> mns{kInf, kInf, kInf, kInf};
      std::array<double, 4> mxs{-kInf, -kInf, -kInf, -kInf};
      const std::size_t n4 = count & ~static_cast<std::size_t>(3);
      for (std::size_t i = 0; i < n4; i += 4)
        for (std::size_t l = 0; l < 4; ++l) {
          mns[l] = std::min(mns[l], v[i + l]);
          mxs[l] = std::max(mxs[l], v[i + l]);
        }
      for (std::size_t i = n4; i < count; ++i) {
        mns[0] = std::min(mns[0], v[i]);
        mxs[0] = std::max(mxs[0], v[i]);
      }
      mn = std::min(std::min(mns[0], mns[1]), std::min(mns[2], mns[3]));
      mx = std::max(std::max(mxs[0], mxs[1]), std::max(mxs[2], mxs[3]));
    }
    g_sub_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - qq).count(); }
    ++g_sort_calls; g_sub_n += sub_scratch_.size();
    const auto q0 = std::chrono::steady_clock::now();
    const auto sub_n = static_cast<double>(count);
    if (!(mx > mn)) return;  // near-constant sample; sentinels must do
    constexpr std::size_t kBuckets = 256;
    const double inv = static_cast<double>(kBuckets) / (mx - mn);
    // Four interleaved counter sets keep repeated hits on a popular
    // bucket from serializing on one memory cell.
    std::array<std::array<std::uint16_t, kBuckets>, 4> h4{};
    const double* v = sub_scratch_.data();
    const auto slot = [&](double x) {
      return std::min(static_cast<std::size_t>((x - mn) * inv), kBuckets - 1);
    };
    std::size_t i = 0;
    for (; i + 4 <= count; i += 4) {
      ++h4[0][slot(v[i])];
      ++h4[1][slot(v[i + 1])];
      ++h4[2][slot(v[i + 2])];
      ++h4[3][slot(v[i + 3])];
    }
    for (; i < count; ++i) ++h4[0][slot(v[i])];
    std::array<double, kBuckets + 1> edge_rank;
    edge_rank[0] = 0.0;
    for (std::size_t b = 0; b < kBuckets; ++b)
      edge_rank[b + 1] = edge_rank[b] + h4[0][b] + h4[1][b] + h4[2][b] +
                         h4[3][b];
    std::vector<double> seeds;
    const auto seed_at = [&](std::uint64_t kt, bool low) {
      const double target =
          static_cast<double>(kt) / static_cast<double>(total) * sub_n;
      std::size_t b;
      if (low) {
        b = 0;
        while (b < kBuckets && edge_rank[b + 1] <= target) ++b;
      } else {
        b = kBuckets;
        while (b > 0 && edge_rank[b - 1] >= target) --b;
      }
      const double v = mn + (mx - mn) * (static_cast<double>(b) / kBuckets);
      if (std::getenv("PP_DIAG"))
        std::fprintf(stderr,
                     "seed_at kt %llu low %d target %.1f b %zu edge_rank %.0f "
                     "v %.9f mn %.9f mx %.9f\n",
                     (unsigned long long)kt, (int)low, target, b,
                     edge_rank[b], v, mn, mx);
      if (v > probes_.front().value && v < probes_.back().value)
        seeds.push_back(v);
    };
    for (std::size_t r = 0; r < ranks.size();) {
      std::size_t e = r;
      while (e + 1 < ranks.size() && ranks[e + 1] == ranks[e] + 1) ++e;
      const std::uint64_t k_first = ranks[r];
      const std::uint64_t k_last = ranks[e];
      // Margin beyond three and a half sigmas of the subgrid quantile's
      // rank error at this p. The floor absorbs the systematic part of
      // that error: block-centered picks still carry a within-block bias
      // that the binomial term underestimates near the tails. A pair of
      // edges this far out straddles its ranks almost surely, and the
      // window stays within one collect.
      const double p =
          static_cast<double>(k_first) / static_cast<double>(total);
      const auto off = std::max<std::uint64_t>(
          1024, static_cast<std::uint64_t>(
                    3.5 * static_cast<double>(total) *
                    std::sqrt(p * (1.0 - p) / sub_n)));
      seed_at(k_first > off ? k_first - off : 1, true);
      seed_at(std::min(total, k_last + off), false);
      r = e + 1;
    }
    g_sort_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - q0).count();
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    if (!seeds.empty()) probe_batch(seeds);
  }

  std::size_t nodes_ = 0;
  std::vector<std::span<const double>> t_views_;
  std::vector<std::span<const double>> c_views_;
  std::vector<double> storage_;
  mutable std::vector<Probe> probes_;
  mutable std::vector<std::uint32_t> pool_;
  mutable std::size_t pool_slots_ = 0;
  mutable std::vector<std::uint32_t> walk_lo_, walk_hi_;
  std::vector<std::uint32_t> const_rows_;
  mutable std::vector<double> sub_scratch_;
  mutable std::vector<std::uint64_t> sel_cur_, sel_alt_;
};

std::optional<std::vector<double>> fast_select_ranks(
    const GridFrame& frame, std::size_t nodes,
    const std::vector<std::size_t>& ranks) {
  const auto selector = FastSelector::make(frame, nodes);
  if (!selector) return std::nullopt;
  return selector->select(ranks);
}


}  // namespace

PercentChangeEstimate prepost_percent_change(const PrePostSample& sample,
                                             std::size_t nodes,
                                             double level) {
  if (!(level > 0.0 && level < 1.0))
    throw Error(errc::invalid_input,
                "prepost_percent_change: level must be in (0,1)");
  if (nodes > 2000000)
    throw Error(errc::refused_size,
                "prepost_percent_change: atom count would overflow");

  const auto q0 = std::chrono::steady_clock::now();
  const GridFrame frame = build_frame(sample, nodes);
  g_frame_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - q0).count();
  const std::size_t total = nodes * nodes * nodes;

  const QuantileRanks med = quantile_ranks(total, 0.5);
  const QuantileRanks lo = quantile_ranks(total, 0.5 * (1.0 - level));
  const QuantileRanks hi = quantile_ranks(total, 0.5 * (1.0 + level));

  std::vector<std::size_t> ranks{med.k1, med.k2, lo.k1, lo.k2, hi.k1, hi.k2};
  std::sort(ranks.begin(), ranks.end());
  ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());

  std::vector<double> selected;
  const auto q1 = std::chrono::steady_clock::now();
  if (auto fast = fast_select_ranks(frame, nodes, ranks)) {
    g_select_us += std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - q1).count();
    selected = std::move(*fast);
  } else if (nodes <= kMaxMaterializedNodes) {
    std::vector<double> atoms;
    atoms.reserve(total);
    for_each_grid_atom(frame, [&](double a) { atoms.push_back(a); });
    selected = select_ranks(total, ranks, [&](const auto& sink) {
      for (const double a : atoms) sink(a);
    });
  } else {
    selected = select_ranks(total, ranks, [&](const auto& sink) {
      for_each_grid_atom(frame, sink);
    });
  }

  const auto value_at = [&](std::size_t rank) {
    const auto it = std::lower_bound(ranks.begin(), ranks.end(), rank);
    return selected[static_cast<std::size_t>(it - ranks.begin())];
  };
  const auto interpolate = [&](const QuantileRanks& q) {
    const double v1 = value_at(q.k1);
    if (q.k2 == q.k1) return v1;
    const double v2 = value_at(q.k2);
    if (v2 == v1) return v1;
    return v1 + q.frac * (v2 - v1);
  };

  PercentChangeEstimate est;
  est.median = interpolate(med);
  est.ci_lower = interpolate(lo);
  est.ci_upper = interpolate(hi);
  est.level = level;
  est.method = Method::prepost;
  est.nodes_or_iterations = nodes;
  est.positivity_ok = check_positivity(summarize(sample.y_c));
  return est;
}

GridApproximation grid_dump(const PrePostSample& sample, std::size_t nodes) {
  if (nodes > kMaxMaterializedNodes)
    throw Error(errc::refused_size,
                "grid_dump: D > 200 would materialize more than 8M atoms; "
                "use the streaming estimator");
  GridFrame frame = build_frame(sample, nodes);

  GridApproximation grid;
  grid.nodes = nodes;
  grid.mu0_posterior = frame.mu0_posterior;
  grid.percent_change_atoms.reserve(nodes * nodes * nodes);
  for_each_grid_atom(frame,
                     [&](double a) { grid.percent_change_atoms.push_back(a); });
  grid.mu0_nodes = std::move(frame.mu0_nodes);
  grid.conditionals = std::move(frame.conditionals);
  return grid;
}

}  // namespace prepost
