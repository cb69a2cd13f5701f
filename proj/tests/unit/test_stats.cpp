#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "oracles.hpp"
#include "sprobe/rng.hpp"
#include "sprobe/stats.hpp"

using namespace sprobe;

namespace {

// Distinct magnitudes so ranks never tie.
std::vector<double> tie_free(Rng& rng, std::size_t m) {
  std::vector<double> d(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double mag = static_cast<double>(i + 1) + 0.5 * rng.uniform();
    d[i] = rng.bernoulli(0.6) ? mag : -mag;
  }
  rng.shuffle(d.begin(), d.end());
  return d;
}

}  // namespace

TEST_CASE("bootstrap interval") {
  const std::vector<double> constant(20, 0.3);
  const auto c = paired_bootstrap_ci(constant);
  CHECK(c.low == doctest::Approx(0.3));
  CHECK(c.high == doctest::Approx(0.3));

  // Resample means of {-1, 1} can only be -1, 0 or 1.
  const std::vector<double> two = {-1.0, 1.0};
  const auto t = paired_bootstrap_ci(two, 2000, 0.95, 3);
  const std::set<double> grid = {-1.0, 0.0, 1.0};
  CHECK(grid.count(t.low) == 1);
  CHECK(grid.count(t.high) == 1);
  CHECK(t.low == -1.0);
  CHECK(t.high == 1.0);

  const std::vector<double> xs = {0.1, 0.4, -0.2, 0.7, 0.3};
  const auto a = paired_bootstrap_ci(xs, 1000, 0.95, 9);
  const auto b = paired_bootstrap_ci(xs, 1000, 0.95, 9);
  CHECK(a.low == b.low);
  CHECK(a.high == b.high);
  CHECK(a.low <= mean(xs));
  CHECK(a.high >= mean(xs));
}

TEST_CASE("cohen's d") {
  const std::vector<double> d = {0.0, 2.0};
  CHECK(cohens_d_paired(d) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  const std::vector<double> sym = {-1.0, 1.0, -2.0, 2.0};
  CHECK(cohens_d_paired(sym) == doctest::Approx(0.0));
  const std::vector<double> flat = {0.4, 0.4, 0.4};
  CHECK_THROWS_AS(cohens_d_paired(flat), DegenerateDataError);
}

TEST_CASE("paired t") {
  const std::vector<double> zero = {1.0, -1.0};
  const auto z = paired_t(zero);
  CHECK(z.t == doctest::Approx(0.0));
  CHECK(z.p == doctest::Approx(1.0));

  const std::vector<double> d = {1.0, 2.0, 3.0};
  const auto r = paired_t(d);
  CHECK(std::abs(r.t - 2.0 * std::sqrt(3.0)) < 1e-9);
  CHECK(r.df == 2.0);
  // t with 2 df has CDF 1/2 + t / (2 sqrt(2 + t^2)).
  const double tt = 2.0 * std::sqrt(3.0);
  const double p_closed = 2.0 * (0.5 - tt / (2.0 * std::sqrt(2.0 + tt * tt)));
  CHECK(r.p == doctest::Approx(p_closed).epsilon(1e-10));
  CHECK(r.p == doctest::Approx(0.0742).epsilon(1e-3));
}

TEST_CASE("paired t p-values are uniform under the null") {
  Rng rng(11);
  std::vector<double> ps;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> x(10000);
    for (auto& v : x) v = rng.normal();
    ps.push_back(paired_t(x).p);
  }
  std::sort(ps.begin(), ps.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double n = static_cast<double>(ps.size());
    ks = std::max({ks, std::abs(ps[i] - i / n), std::abs(ps[i] - (i + 1) / n)});
  }
  // 1% critical value for n = 200 is about 1.63 / sqrt(200).
  CHECK(ks < 1.63 / std::sqrt(200.0));
}

TEST_CASE("wilcoxon small cases") {
  const std::vector<double> d = {1, 2, 3, 4, 5};
  const auto r = wilcoxon_signed_rank(d);
  CHECK(r.w == 15.0);
  CHECK(r.exact);
  CHECK(r.p == doctest::Approx(0.0625).epsilon(1e-12));

  const std::vector<double> sym = {-1.0, 1.0};
  CHECK(wilcoxon_signed_rank(sym, WilcoxonMethod::normal).p == doctest::Approx(1.0));

  const std::vector<double> zeros = {0.0, 0.0};
  CHECK_THROWS_AS(wilcoxon_signed_rank(zeros), DegenerateDataError);

  const std::vector<double> tied = {1.0, 1.0, 2.0, -3.0};
  CHECK_FALSE(wilcoxon_signed_rank(tied).exact);
  CHECK_THROWS(wilcoxon_signed_rank(tied, WilcoxonMethod::exact));
}

TEST_CASE("wilcoxon exact path equals full enumeration") {
  Rng rng(21);
  for (std::size_t m = 1; m <= 12; ++m) {
    for (int rep = 0; rep < 20; ++rep) {
      const auto d = tie_free(rng, m);
      const auto r = wilcoxon_signed_rank(d, WilcoxonMethod::exact);
      CHECK(std::abs(r.p - oracle::wilcoxon_enumerate(d)) <= 1e-12);
    }
  }
}

TEST_CASE("wilcoxon normal approximation tracks the exact path") {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const auto d = tie_free(rng, 12);
    const double exact = oracle::wilcoxon_enumerate(d);
    const double approx = wilcoxon_signed_rank(d, WilcoxonMethod::normal).p;
    // Worst case over every attainable W at m = 12 is 0.01371.
    CHECK(std::abs(exact - approx) < 0.0138);
  }
  const auto big = tie_free(rng, 30);
  CHECK_FALSE(wilcoxon_signed_rank(big).exact);
}

TEST_CASE("sign-flip permutation") {
  const std::vector<double> d = {1, 2, 3};
  CHECK(sign_flip_permutation(d) == doctest::Approx(2.0 / 8.0).epsilon(1e-15));
  const std::vector<double> zeros = {0, 0, 0};
  CHECK(sign_flip_permutation(zeros) == 1.0);

  Rng rng(33);
  for (std::size_t n = 1; n <= 15; ++n) {
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<double> x(n);
      for (auto& v : x) v = rng.normal(0.3, 1.0);
      CHECK(sign_flip_permutation(x) == oracle::sign_flip_enumerate(x));
    }
  }
}

TEST_CASE("sign-flip Monte Carlo agrees with the exact path") {
  Rng rng(8);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> x(15);
    for (auto& v : x) v = rng.normal(0.4, 1.0);
    const double exact = sign_flip_permutation(x);
    const std::size_t n_perm = 20000;
    const double mc = sign_flip_permutation(x, n_perm, 100 + rep, true);
    const double se = std::sqrt(exact * (1.0 - exact) / n_perm) + 1.0 / n_perm;
    CHECK(std::abs(mc - exact) <= 3.0 * se);
  }
  std::vector<double> x(25);
  for (auto& v : x) v = rng.normal(0.0, 1.0);
  const double p = sign_flip_permutation(x, 5000, 1);
  CHECK(p > 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("interaction F") {
  // Additive cell means with noise-free replicates: no interaction.
  std::vector<double> y;
  std::vector<std::string> a, b;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int r = 0; r < 4; ++r) {
        y.push_back(1.0 * i + 2.0 * j + (r % 2 ? 0.1 : -0.1));
        a.push_back("m" + std::to_string(i));
        b.push_back("r" + std::to_string(j));
      }
  const auto add = ols_interaction_f(y, a, b);
  CHECK(add.f == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(add.p == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(add.df1 == 4.0);
  CHECK(add.df2 == 27.0);

  // Planted interaction on a balanced design with 100 observations.
  Rng rng(4);
  std::vector<double> y2;
  std::vector<std::string> a2, b2;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int r = 0; r < 25; ++r) {
        y2.push_back(0.5 * i + 0.3 * j + (i == 1 && j == 1 ? 0.8 : 0.0) + rng.normal(0.0, 0.5));
        a2.push_back(i ? "b" : "a");
        b2.push_back(j ? "y" : "x");
      }
  const auto f = ols_interaction_f(y2, a2, b2);
  CHECK(f.f == doctest::Approx(oracle::balanced_interaction_f(y2, a2, b2)).epsilon(1e-9));
  CHECK(f.df1 == 1.0);
  CHECK(f.df2 == 96.0);
  const boost::math::fisher_f dist(f.df1, f.df2);
  CHECK(f.p == doctest::Approx(boost::math::cdf(boost::math::complement(dist, f.f))).epsilon(1e-9));

  const std::vector<double> one = {1, 2};
  const std::vector<std::string> same = {"a", "a"}, other = {"x", "y"};
  CHECK_THROWS_AS(ols_interaction_f(one, same, other), DegenerateDataError);
}

TEST_CASE("paired compare flags degenerate tests") {
  const std::vector<double> a = {0.5, 0.6, 0.7}, b = {0.5, 0.6, 0.7};
  const auto r = paired_compare(a, b);
  CHECK(r.delta == 0.0);
  CHECK(r.has_flag("wilcoxon-degenerate"));
  CHECK(r.has_flag("degenerate-variance"));
  CHECK_FALSE(r.cohens_d);
  CHECK_FALSE(r.wilcoxon_p);

  const std::vector<double> c = {1.0, 2.0, 4.0}, z = {0.0, 0.0, 0.0};
  PairedOptions opts;
  opts.permutation = true;
  const auto s = paired_compare(c, z, opts);
  CHECK(s.delta == doctest::Approx(7.0 / 3.0));
  CHECK(s.mean_a == doctest::Approx(7.0 / 3.0));
  CHECK(s.perm_p);
  CHECK(s.t_stat);
  CHECK(s.flags.empty());

  const std::vector<double> single = {1.0};
  CHECK_THROWS_AS(paired_compare(single, single), DegenerateDataError);
}
