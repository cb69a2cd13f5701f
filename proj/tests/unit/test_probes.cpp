#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "sprobe/probes.hpp"
#include "sprobe/rng.hpp"

using namespace sprobe;

namespace {

ProbeModel identity_model(std::vector<double> w, double b) {
  ProbeModel m;
  m.feature_mean.assign(w.size(), 0.0);
  m.feature_scale.assign(w.size(), 1.0);
  m.w = std::move(w);
  m.b = b;
  return m;
}

}  // namespace

TEST_CASE("probe_score") {
  const std::vector<double> h = {0.3, -7.0};
  CHECK(probe_score(identity_model({0, 0}, 0), h) == 0.5);
  CHECK(std::abs(probe_score(identity_model({0, 0}, 20), h) - 1.0) < 1e-8);
  const std::vector<double> h3 = {std::log(3.0), 7.0};
  CHECK(probe_score(identity_model({1, 0}, 0), h3) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(probe_score(identity_model({1, 0}, 0), std::vector<double>{1.0}), ProbeError);
}

TEST_CASE("evaluate") {
  const auto perfect = evaluate({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.auc == 1.0);
  CHECK(perfect.f1 == 1.0);

  const auto ties = evaluate({{0.5, 1}, {0.5, 1}, {0.5, 0}, {0.5, 0}});
  CHECK(ties.auc == 0.5);

  const auto mixed = evaluate({{0.9, 1}, {0.4, 1}, {0.6, 0}, {0.1, 0}});
  CHECK(mixed.auc == 0.75);
  CHECK(mixed.accuracy == 0.5);

  const auto none = evaluate({{0.1, 1}, {0.2, 0}});
  CHECK(none.f1_undefined);
  CHECK(none.f1 == 0.0);

  CHECK_THROWS_AS(evaluate({{0.1, 1}, {0.2, 1}}), ProbeError);
}

TEST_CASE("stratified split") {
  const auto s = stratified_split(10, 4, 3, 0.65);
  CHECK(s.train_pos.size() == 7);
  CHECK(s.test_pos.size() == 3);
  CHECK(s.train_neg.size() == 3);
  CHECK(s.test_neg.size() == 1);
  const auto tiny = stratified_split(2, 2, 0, 0.65);
  CHECK(tiny.train_pos.size() == 1);
  CHECK(tiny.test_pos.size() == 1);
  CHECK_THROWS_AS(stratified_split(1, 5, 0, 0.65), ProbeError);
}

TEST_CASE("held-out predictions match a grid-search oracle on the hand dataset") {
  const Matrix pos = {{2, 0}, {3, 1}}, neg = {{0, 0}, {-1, 1}};
  ProbeOptions opts;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto fit = train_probe(pos, neg, seed, opts);
    const auto split = stratified_split(2, 2, seed, opts.split_fraction);

    // Standardize the two training rows by hand.
    const auto& p = pos[split.train_pos[0]];
    const auto& n = neg[split.train_neg[0]];
    double mu[2], sc[2];
    for (int j = 0; j < 2; ++j) {
      mu[j] = 0.5 * (p[j] + n[j]);
      const double sd = 0.5 * std::abs(p[j] - n[j]);
      sc[j] = sd > 0 ? sd : 1.0;
    }
    auto z = [&](const std::vector<double>& r) {
      return std::pair<double, double>{(r[0] - mu[0]) / sc[0], (r[1] - mu[1]) / sc[1]};
    };
    const auto best = oracle::grid_search_logistic_2d({z(p), z(n)}, {1, 0}, opts.l2);
    auto oracle_score = [&](const std::vector<double>& r) {
      const auto [a, b] = z(r);
      return 1.0 / (1.0 + std::exp(-(best.w0 * a + best.w1 * b + best.b)));
    };

    const std::vector<double> expected = {oracle_score(pos[split.test_pos[0]]), oracle_score(neg[split.test_neg[0]])};
    REQUIRE(fit.held_out.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK((fit.held_out[i].score >= 0.5) == (expected[i] >= 0.5));
      CHECK(fit.held_out[i].score == doctest::Approx(expected[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("solver reaches the loss minimum") {
  Rng rng(2);
  Matrix x;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    const int label = i % 2;
    x.push_back({rng.normal(label ? 0.8 : -0.8, 1.0), rng.normal(0.0, 1.0), rng.normal(label ? 0.3 : 0.0, 1.0)});
    y.push_back(label);
  }
  const auto fit = fit_logistic(x, y, 1e-2, 1e-10, 10000);
  CHECK(fit.grad_max <= 1e-10);
  const double at = logistic_loss(x, y, fit.w, fit.b, 1e-2);
  // Any small step away increases the loss.
  for (std::size_t j = 0; j < 3; ++j)
    for (double eps : {-1e-3, 1e-3}) {
      auto w = fit.w;
      w[j] += eps;
      CHECK(logistic_loss(x, y, w, fit.b, 1e-2) > at);
    }
  CHECK_THROWS_AS(fit_logistic(x, y, 1e-2, 1e-14, 2), ProbeError);
}

TEST_CASE("noise-free separable data and seed determinism") {
  Rng rng(1);
  Matrix pos, neg;
  for (int i = 0; i < 12; ++i) {
    pos.push_back({1.0, 0.0, 0.0, 0.0});
    neg.push_back({0.0, 0.0, 0.0, 0.0});
  }
  const auto fit = train_probe(pos, neg, 5);
  CHECK(fit.metrics.auc == 1.0);
  CHECK(fit.metrics.accuracy == 1.0);

  Matrix p2, n2;
  for (int i = 0; i < 30; ++i) {
    p2.push_back({rng.normal(1, 1), rng.normal(0, 1), rng.normal(0, 1)});
    n2.push_back({rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)});
  }
  const auto a = train_probe(p2, n2, 9), b = train_probe(p2, n2, 9);
  CHECK(a.model.w == b.model.w);
  CHECK(a.model.b == b.model.b);
  CHECK(probe_to_json(a.model).dump() == probe_to_json(b.model).dump());

  // The same point set under both labels.
  std::vector<ScoredExample> both;
  for (const auto& r : p2) {
    both.push_back({probe_score(a.model, r), 1});
    both.push_back({probe_score(a.model, r), 0});
  }
  CHECK(evaluate(both).auc == 0.5);
}

TEST_CASE("probe json round-trip") {
  Matrix pos = {{1, 2}, {2, 3}, {3, 1}}, neg = {{-1, 0}, {0, -2}, {-2, -1}};
  auto fit = train_probe(pos, neg, 1);
  fit.model.concept_id = "white_bear";
  fit.model.layer = 4;
  const auto back = probe_from_json(probe_to_json(fit.model));
  CHECK(back.concept_id == "white_bear");
  CHECK(back.layer == 4);
  CHECK(back.w == fit.model.w);
  CHECK(back.b == fit.model.b);
  CHECK(back.feature_scale == fit.model.feature_scale);
}
