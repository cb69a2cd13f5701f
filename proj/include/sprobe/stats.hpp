#pragma once

// Paired-comparison statistics: percentile bootstrap, Cohen's d, paired t,
// Wilcoxon signed-rank, sign-flip permutation and the OLS interaction F test.
// Every p-value is two-sided.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sprobe/error.hpp"

namespace sprobe {

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> xs);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile interval of the resampled mean. With sorted resample means
// m[0..B), low = m[floor(a/2 * B)] and high = m[ceil((1 - a/2) * B) - 1].
Interval paired_bootstrap_ci(std::span<const double> diffs, std::size_t n_boot = 10000,
                             double level = 0.95, std::uint64_t seed = 0);

// Throws DegenerateDataError("degenerate-variance") when sd == 0.
double cohens_d_paired(std::span<const double> diffs);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};
TTest paired_t(std::span<const double> diffs);

enum class WilcoxonMethod { automatic, exact, normal };

struct WilcoxonResult {
  double w = 0.0;       // sum of positive-signed ranks
  double p = 1.0;
  std::size_t m = 0;    // nonzero differences
  bool exact = false;
};

// Zeros are dropped. The exact null distribution (equal to full 2^m sign
// enumeration) is used for m <= 25 without tied magnitudes; otherwise the
// normal approximation with tie and continuity corrections. Forcing the
// exact method on tied data throws.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs,
                                    WilcoxonMethod method = WilcoxonMethod::automatic);

inline constexpr std::size_t kExactSignFlipMax = 20;

// Two-sided p for the mean against the sign-flip null. Exact over all 2^n
// flips for n <= 20, otherwise (1 + hits) / (n_perm + 1) from seeded draws.
double sign_flip_permutation(std::span<const double> diffs, std::size_t n_perm = 10000,
                             std::uint64_t seed = 0, bool force_monte_carlo = false);

struct FTest {
  double f = 0.0;
  double df1 = 0.0;
  double df2 = 0.0;
  double p = 1.0;
  double rss_full = 0.0;
  double rss_additive = 0.0;
};

// Full (a + b + a:b) against additive (a + b) two-way model, dummy coded.
// Throws DegenerateDataError on fewer than two levels, a rank-deficient
// design or df2 <= 0.
FTest ols_interaction_f(std::span<const double> values, std::span<const std::string> factor_a,
                        std::span<const std::string> factor_b);

struct PairedOptions {
  std::size_t n_boot = 10000;
  std::size_t n_perm = 10000;
  double level = 0.95;
  std::uint64_t seed = 0;
  bool permutation = false;
};

struct PairedResult {
  std::size_t n = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double delta = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::optional<double> cohens_d;
  std::optional<double> t_stat;
  std::optional<double> t_p;
  std::optional<double> wilcoxon_stat;
  std::optional<double> wilcoxon_p;
  std::optional<double> perm_p;
  std::vector<std::string> flags;  // "degenerate-variance", "wilcoxon-degenerate"

  bool has_flag(std::string_view f) const;
};

// a and b are paired element-wise. Degenerate tests leave their fields empty
// and add a flag instead of throwing. Throws DegenerateDataError for n < 2 or
// mismatched lengths.
PairedResult paired_compare(std::span<const double> a, std::span<const double> b,
                            const PairedOptions& opts = {});

}  // namespace sprobe
