#include "sprobe/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "sprobe/rng.hpp"

namespace sprobe {

namespace {

void require_size(std::span<const double> xs, std::size_t min_n, const char* what) {
  if (xs.size() < min_n)
    throw DegenerateDataError(fmt::format("{} needs at least {} values, got {}", what, min_n, xs.size()));
}

bool all_equal(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
}

struct Ranked {
  std::vector<double> ranks;  // aligned with nonzero diffs
  std::vector<double> nonzero;
  bool ties = false;
  double tie_term = 0.0;  // sum of (t^3 - t) over tie groups
};

Ranked rank_nonzero(std::span<const double> diffs) {
  Ranked r;
  for (double d : diffs)
    if (d != 0.0) r.nonzero.push_back(d);
  const std::size_t m = r.nonzero.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(r.nonzero[a]) < std::abs(r.nonzero[b]);
  });
  r.ranks.assign(m, 0.0);
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j + 1 < m && std::abs(r.nonzero[order[j + 1]]) == std::abs(r.nonzero[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) r.ranks[order[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) {
      r.ties = true;
      r.tie_term += t * t * t - t;
    }
    i = j + 1;
  }
  return r;
}

double wilcoxon_exact_p(std::size_t m, double w) {
  // Number of sign patterns per positive-rank sum; counts stay exact in
  // double up to 2^53.
  const std::size_t max_sum = m * (m + 1) / 2;
  std::vector<double> count(max_sum + 1, 0.0);
  count[0] = 1.0;
  for (std::size_t r = 1; r <= m; ++r)
    for (std::size_t s = max_sum; s >= r; --s) count[s] += count[s - r];
  const auto wi = static_cast<std::size_t>(std::llround(w));
  double lower = 0.0, upper = 0.0;
  for (std::size_t s = 0; s <= max_sum; ++s) {
    if (s <= wi) lower += count[s];
    if (s >= wi) upper += count[s];
  }
  const double total = std::ldexp(1.0, static_cast<int>(m));
  return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

double wilcoxon_normal_p(std::size_t m, double w, double tie_term) {
  const double md = static_cast<double>(m);
  const double mu = md * (md + 1) / 4.0;
  const double var = md * (md + 1) * (2 * md + 1) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double z = std::max(0.0, std::abs(w - mu) - 0.5) / std::sqrt(var);
  const boost::math::normal_distribution<double> nd;
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(nd, z)));
}

}  // namespace

double mean(std::span<const double> xs) {
  if (xs.empty()) throw DegenerateDataError("mean of an empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_sd(std::span<const double> xs) {
  require_size(xs, 2, "sample standard deviation");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

Interval paired_bootstrap_ci(std::span<const double> diffs, std::size_t n_boot, double level,
                             std::uint64_t seed) {
  require_size(diffs, 2, "bootstrap");
  if (n_boot == 0) throw DegenerateDataError("bootstrap needs n_boot >= 1");
  if (!(level > 0.0 && level < 1.0)) throw DegenerateDataError("bootstrap level must lie in (0, 1)");
  if (all_equal(diffs)) return {diffs.front(), diffs.front()};

  const std::size_t n = diffs.size();
  Rng rng(seed);
  std::vector<double> means(n_boot);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += diffs[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double alpha = 1.0 - level;
  const double b = static_cast<double>(n_boot);
  auto lo = static_cast<std::size_t>(std::floor(alpha / 2.0 * b));
  auto hi_count = static_cast<std::size_t>(std::ceil((1.0 - alpha / 2.0) * b));
  lo = std::min(lo, n_boot - 1);
  const std::size_t hi = std::clamp<std::size_t>(hi_count, 1, n_boot) - 1;
  return {means[lo], means[hi]};
}

double cohens_d_paired(std::span<const double> diffs) {
  if (all_equal(diffs)) throw DegenerateDataError("degenerate-variance: differences have zero variance");
  return mean(diffs) / sample_sd(diffs);
}

TTest paired_t(std::span<const double> diffs) {
  if (all_equal(diffs)) throw DegenerateDataError("degenerate-variance: differences have zero variance");
  const double sd = sample_sd(diffs);
  const double n = static_cast<double>(diffs.size());
  TTest r;
  r.df = n - 1;
  r.t = mean(diffs) / (sd / std::sqrt(n));
  const boost::math::students_t_distribution<double> dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs, WilcoxonMethod method) {
  const Ranked r = rank_nonzero(diffs);
  if (r.nonzero.empty()) throw DegenerateDataError("wilcoxon-degenerate: all differences are zero");
  WilcoxonResult out;
  out.m = r.nonzero.size();
  for (std::size_t i = 0; i < out.m; ++i)
    if (r.nonzero[i] > 0) out.w += r.ranks[i];

  const bool exact_ok = out.m <= 25 && !r.ties;
  if (method == WilcoxonMethod::exact && !exact_ok)
    throw DegenerateDataError("exact Wilcoxon requires m <= 25 and no tied magnitudes");
  out.exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && exact_ok);
  out.p = out.exact ? wilcoxon_exact_p(out.m, out.w) : wilcoxon_normal_p(out.m, out.w, r.tie_term);
  return out;
}

double sign_flip_permutation(std::span<const double> diffs, std::size_t n_perm, std::uint64_t seed,
                             bool force_monte_carlo) {
  const std::size_t n = diffs.size();
  if (n == 0) return 1.0;
  double abs_total = 0.0, obs = 0.0;
  for (double d : diffs) {
    abs_total += std::abs(d);
    obs += d;
  }
  const double threshold = std::abs(obs) - 1e-9 * abs_total;

  if (n <= kExactSignFlipMax && !force_monte_carlo) {
    // Gray-code walk: each step flips exactly one sign.
    std::vector<int> sign(n, 1);
    double s = obs;
    std::uint64_t hits = std::abs(s) >= threshold ? 1 : 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t k = 1; k < total; ++k) {
      const auto bit = static_cast<std::size_t>(std::countr_zero(k));
      s -= 2.0 * sign[bit] * diffs[bit];
      sign[bit] = -sign[bit];
      if (std::abs(s) >= threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }

  if (n_perm == 0) throw DegenerateDataError("sign-flip Monte Carlo needs n_perm >= 1");
  Rng rng(seed);
  std::uint64_t hits = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    double s = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 64 == 0) bits = rng.next_u64();
      s += (bits & 1) ? diffs[i] : -diffs[i];
      bits >>= 1;
    }
    if (std::abs(s) >= threshold) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(n_perm + 1);
}

FTest ols_interaction_f(std::span<const double> values, std::span<const std::string> factor_a,
                        std::span<const std::string> factor_b) {
  const std::size_t n = values.size();
  if (factor_a.size() != n || factor_b.size() != n)
    throw DegenerateDataError("interaction F: values and factor labels differ in length");
  std::map<std::string, std::size_t> la, lb;
  for (const auto& s : factor_a) la.emplace(s, 0);
  for (const auto& s : factor_b) lb.emplace(s, 0);
  if (la.size() < 2 || lb.size() < 2) throw DegenerateDataError("interaction F needs >= 2 levels per factor");
  std::size_t k = 0;
  for (auto& [_, v] : la) v = k++;
  k = 0;
  for (auto& [_, v] : lb) v = k++;
  const std::size_t a = la.size(), b = lb.size();
  const std::size_t p_add = 1 + (a - 1) + (b - 1);
  const std::size_t p_full = a * b;
  if (n <= p_full) throw DegenerateDataError(fmt::format("interaction F: df2 = {} <= 0", static_cast<long>(n) - static_cast<long>(p_full)));

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p_full));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const std::size_t ia = la.at(factor_a[i]), ib = lb.at(factor_b[i]);
    y(r) = values[i];
    x(r, 0) = 1.0;
    if (ia > 0) x(r, static_cast<Eigen::Index>(ia)) = 1.0;
    if (ib > 0) x(r, static_cast<Eigen::Index>(a - 1 + ib)) = 1.0;
    if (ia > 0 && ib > 0) x(r, static_cast<Eigen::Index>(p_add + (ia - 1) * (b - 1) + (ib - 1))) = 1.0;
  }

  auto rss = [&](Eigen::Index cols) {
    const Eigen::MatrixXd xs = x.leftCols(cols);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    if (qr.rank() < cols) throw DegenerateDataError("interaction F: rank-deficient design");
    const Eigen::VectorXd beta = qr.solve(y);
    return (y - xs * beta).squaredNorm();
  };

  FTest out;
  out.rss_additive = rss(static_cast<Eigen::Index>(p_add));
  out.rss_full = rss(static_cast<Eigen::Index>(p_full));
  out.df1 = static_cast<double>((a - 1) * (b - 1));
  out.df2 = static_cast<double>(n - p_full);
  const double gain = std::max(0.0, out.rss_additive - out.rss_full);
  const double tss = (y.array() - y.mean()).matrix().squaredNorm();
  const double eps = 1e-12 * std::max(1.0, tss);
  if (out.rss_full <= eps) {
    if (gain <= eps) {
      out.f = 0.0;
      out.p = 1.0;
    } else {
      out.f = std::numeric_limits<double>::infinity();
      out.p = 0.0;
    }
    return out;
  }
  out.f = (gain / out.df1) / (out.rss_full / out.df2);
  const boost::math::fisher_f_distribution<double> dist(out.df1, out.df2);
  out.p = boost::math::cdf(boost::math::complement(dist, out.f));
  return out;
}

bool PairedResult::has_flag(std::string_view f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

PairedResult paired_compare(std::span<const double> a, std::span<const double> b,
                            const PairedOptions& opts) {
  if (a.size() != b.size())
    throw DegenerateDataError(fmt::format("paired arrays differ in length ({} vs {})", a.size(), b.size()));
  if (a.size() < 2) throw DegenerateDataError(fmt::format("paired comparison needs n >= 2, got {}", a.size()));

  std::vector<double> diffs(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];

  PairedResult r;
  r.n = a.size();
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  r.delta = mean(diffs);
  const Interval ci = paired_bootstrap_ci(diffs, opts.n_boot, opts.level, opts.seed);
  r.ci_low = ci.low;
  r.ci_high = ci.high;

  if (!all_equal(diffs)) {
    r.cohens_d = cohens_d_paired(diffs);
    const TTest t = paired_t(diffs);
    r.t_stat = t.t;
    r.t_p = t.p;
  } else {
    r.flags.emplace_back("degenerate-variance");
  }
  if (std::any_of(diffs.begin(), diffs.end(), [](double d) { return d != 0.0; })) {
    const WilcoxonResult w = wilcoxon_signed_rank(diffs);
    r.wilcoxon_stat = w.w;
    r.wilcoxon_p = w.p;
  } else {
    r.flags.emplace_back("wilcoxon-degenerate");
  }
  if (opts.permutation) r.perm_p = sign_flip_permutation(diffs, opts.n_perm, opts.seed);
  return r;
}

}  // namespace sprobe
