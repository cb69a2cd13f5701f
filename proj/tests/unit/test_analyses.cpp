#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sprobe/analyses.hpp"
#include "sprobe/synth_backend.hpp"

using namespace sprobe;

namespace {

// n values with the given mean and a zero-sum spread.
std::vector<double> with_mean(double mu, std::size_t n, double spread) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = mu + spread * (i % 2 ? 1.0 : -1.0) * static_cast<double>(i / 2 + 1) / n;
  if (n % 2) v.back() = mu;
  return v;
}

AnalysisOptions quick() {
  AnalysisOptions o;
  o.seeds = {0};
  o.paired.n_boot = 500;
  return o;
}

}  // namespace

TEST_CASE("salience row replays reported means") {
  const auto sup = with_mean(0.883, 136, 0.1), abs = with_mean(0.073, 136, 0.05);
  const auto row = make_salience_row(4, Pooling::target_tokens, {Condition::sup, Condition::abs}, sup, abs, {});
  CHECK(row.comparison == "sup-abs");
  CHECK(std::abs(row.result.delta - 0.810) <= 1e-9);
  CHECK(row.mu.at(Condition::sup) == doctest::Approx(0.883));
  CHECK(row.mu.at(Condition::abs) == doctest::Approx(0.073));

  const auto same = make_salience_row(0, Pooling::target_tokens, {Condition::sup, Condition::abs}, sup, sup, {});
  CHECK(same.result.delta == 0.0);
  CHECK(same.result.has_flag("wilcoxon-degenerate"));
}

TEST_CASE("peaks prefer the lower layer on ties") {
  std::vector<SalienceRow> rows;
  for (std::size_t l = 0; l < 4; ++l) {
    SalienceRow r;
    r.layer = l;
    r.comparison = "sup-abs";
    r.result.delta = (l == 1 || l == 3) ? 0.5 : 0.1;
    rows.push_back(r);
  }
  const auto peaks = find_peaks(rows);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].layer == 1);
  CHECK(peaks[0].delta == 0.5);
}

TEST_CASE("region partition") {
  CHECK(region_partition(33) == RegionCounts{11, 11, 11});
  CHECK(region_partition(29) == RegionCounts{10, 9, 10});
  CHECK(region_partition(3) == RegionCounts{1, 1, 1});
  CHECK(region_partition(4) == RegionCounts{1, 2, 1});
  CHECK(region_partition(5) == RegionCounts{2, 1, 2});
  CHECK_THROWS_AS(region_partition(2), ValidationError);
}

TEST_CASE("region summary on a U-shaped profile") {
  const std::vector<double> d = {1.0, 0.95, 0.9, 0.3, 0.25, 0.3, 0.9, 0.95, 1.0};
  const auto regions = region_summary(d, "m", {});
  REQUIRE(regions.size() == 3);
  CHECK(regions[1].region == "middle");
  CHECK(regions[1].mean_delta < regions[0].mean_delta);
  CHECK(regions[1].mean_delta < regions[2].mean_delta);
  CHECK(regions[1].ci.high < regions[0].ci.low);
  CHECK(regions[1].ci.high < regions[2].ci.low);
  CHECK(regions[0].range_low == 0.9);
  CHECK(regions[0].range_high == 1.0);

  const std::vector<double> flat(9, 0.4);
  for (const auto& r : region_summary(flat, "m", {})) CHECK(r.mean_delta == doctest::Approx(0.4));
}

TEST_CASE("salience table on a synthetic bundle") {
  const auto lib = synthetic_library({4, 4, 12});
  SynthConfig cfg;
  cfg.D = 16;
  cfg.L_states = 3;
  cfg.leak_rate[Condition::sup] = 0.25;
  const auto bundle = generate_bundle(lib, instantiate_prompts(lib), cfg);
  const auto opts = quick();
  const auto scored = score_bundle(bundle, lib, opts);
  CHECK(scored.quality.size() == 4 * 3);
  CHECK(scored.scores.size() == 80);

  const auto table = salience_table(scored, lib, opts);
  CHECK(table.rows.size() == 3 * kSalienceComparisons.size());
  const auto& excl = scored.exclusions;
  CHECK(excl.by_condition.at(Condition::sup).excluded > 0);

  for (const auto& row : table.rows) {
    // Recompute the paired deltas independently from the scores.
    const auto cmp = parse_comparison(row.comparison);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : lib.sorted_ids())
      for (std::size_t k = 0; k < 4; ++k) {
        const auto ia = make_instance_id(c, k, cmp.a), ib = make_instance_id(c, k, cmp.b);
        if (excl.is_excluded(ia) || excl.is_excluded(ib)) continue;
        sum += scored.scores.at(ia)[row.layer] - scored.scores.at(ib)[row.layer];
        ++n;
      }
    CHECK(row.result.n == n);
    CHECK(row.result.delta == doctest::Approx(sum / n).epsilon(1e-12));
  }
  CHECK(layer_deltas(table, "sup-abs").size() == 3);
  CHECK(table.peaks.size() == kSalienceComparisons.size());
}

TEST_CASE("uniform attention gives zero deltas") {
  const auto lib = synthetic_library({3, 2, 6});
  SynthConfig cfg;
  cfg.D = 8;
  cfg.L_states = 2;
  cfg.L_attn = 2;
  cfg.H = 2;
  cfg.planted_head = {1, 1};
  cfg.leak_rate = {{Condition::abs, 0.0}, {Condition::men, 0.0}, {Condition::sup, 0.0},
                   {Condition::ind, 0.0}, {Condition::ctrl, 0.0}};
  const auto src = generate_bundle(lib, instantiate_prompts(lib), cfg);

  // Every prompt record gets the men record's tokens and uniform attention.
  ActivationBundle b;
  b.manifest = src.manifest;
  for (const auto& [id, rec] : src.records) {
    PromptActivations r = rec;
    if (const auto key = parse_instance_id(id)) {
      const auto& men = src.at(make_instance_id(key->concept_id, key->context_index, Condition::men));
      r.tokens = men.tokens;
      r.pad_mask = men.pad_mask;
      r.response_start = men.response_start;
      r.hidden = men.hidden;
      const std::size_t T = r.num_tokens();
      r.attention.assign(cfg.L_attn * cfg.H * T * T, 0.0f);
      const double real = static_cast<double>(std::count(r.pad_mask.begin(), r.pad_mask.end(), true));
      for (std::size_t l = 0; l < cfg.L_attn; ++l)
        for (std::size_t h = 0; h < cfg.H; ++h)
          for (std::size_t q = 0; q < T; ++q)
            for (std::size_t k = 0; k < T; ++k) r.attn(l, h, q, k) = r.pad_mask[k] ? static_cast<float>(1.0 / real) : 0.0f;
    }
    b.add(std::move(r));
  }
  const auto table = attention_table(b, lib, quick());
  for (const auto& row : table.rows)
    if (row.comparison == "sup-men") CHECK(row.result.delta == 0.0);
}

TEST_CASE("planted head has the largest sup-men delta") {
  const auto lib = synthetic_library({4, 5, 6});
  SynthConfig cfg;
  cfg.D = 8;
  cfg.L_states = 2;
  cfg.L_attn = 4;
  cfg.H = 3;
  cfg.planted_head = {2, 1};
  cfg.planted_head_boost = 0.2;
  const auto table = attention_table(generate_bundle(lib, instantiate_prompts(lib), cfg), lib, quick());
  const auto& top = table.top_heads;
  const auto it = std::find_if(top.begin(), top.end(),
                               [](const TopHead& t) { return t.comparison == "sup-men" && t.layer == 2; });
  REQUIRE(it != top.end());
  REQUIRE(it->head);
  CHECK(*it->head == 1);
  double best = -1.0;
  std::pair<std::size_t, std::size_t> where;
  for (const auto& row : table.rows)
    if (row.comparison == "sup-men" && row.scope == AttentionScope::head && row.result.delta > best) {
      best = row.result.delta;
      where = {row.layer, *row.head};
    }
  CHECK(where == std::pair<std::size_t, std::size_t>{2, 1});
  CHECK(table.n_units.at("sup-men") == 20);

  AnalysisOptions per_concept = quick();
  per_concept.attention_granularity = Granularity::per_concept;
  const auto coarse = attention_table(generate_bundle(lib, instantiate_prompts(lib), cfg), lib, per_concept);
  CHECK(coarse.n_units.at("sup-men") == 4);
}

TEST_CASE("attention mass") {
  PromptActivations r;
  r.tokens = {"a", " b", " c", " d"};
  r.pad_mask = {true, true, true, true};
  r.response_start = 2;
  r.attn_layers = 1;
  r.heads = 1;
  r.attention = {1, 0, 0, 0, .5, .5, 0, 0, .2, .3, .5, 0, .1, .1, .4, .4};
  const TokenSpan s{1, 2};
  const auto m = attention_mass(r, 0, 0, std::span<const TokenSpan>(&s, 1));
  REQUIRE(m);
  CHECK(*m == doctest::Approx((0.3 + 0.1) / 2.0));
  r.response_start = 4;
  CHECK_FALSE(attention_mass(r, 0, 0, std::span<const TokenSpan>(&s, 1)));
}

TEST_CASE("leakage table counts and rates") {
  const auto lib = synthetic_library({4, 5, 10});
  SynthConfig cfg;
  cfg.D = 8;
  cfg.L_states = 2;
  cfg.leak_rate[Condition::sup] = 0.3;
  const auto bundle = generate_bundle(lib, instantiate_prompts(lib), cfg);
  FallbackEmbedder emb;
  const auto t = leakage_table(bundle, lib, emb, quick());
  REQUIRE(t.rows.size() == 5);
  for (const auto& row : t.rows) {
    CHECK(row.n_total == 20);
    CHECK(row.n_retained <= row.n_total);
    if (row.condition == Condition::sup) CHECK(row.n_leaked == 0);
    if (row.n_retained) CHECK(row.explicit_leak_rate == doctest::Approx(double(row.n_leaked) / row.n_retained));
  }
  const auto& men = t.rows[1];
  CHECK(men.condition == Condition::men);
  const auto& abs = t.rows[0];
  // Leaking generations are positive texts, so men sits closer to the centroid.
  CHECK(men.mean_similarity > abs.mean_similarity);
  CHECK(t.pairwise.size() == kLeakageComparisons.size());
  CHECK(t.embedder == "fallback:trigram-fnv1a-512");
}

TEST_CASE("ordering and cross-model interaction") {
  const auto lib = synthetic_library({3, 4, 10});
  SynthConfig cfg;
  cfg.D = 16;
  cfg.L_states = 3;
  cfg.noise_sigma = 0.2;
  const auto scored = score_bundle(generate_bundle(lib, instantiate_prompts(lib), cfg), lib, quick());
  const auto o = condition_ordering(scored, lib, quick());
  CHECK(o.mean_score.at(Condition::men) > o.mean_score.at(Condition::sup));
  CHECK(o.mean_score.at(Condition::sup) > o.mean_score.at(Condition::ind));
  CHECK(o.mean_score.at(Condition::ind) > o.mean_score.at(Condition::abs));
  REQUIRE(o.pairs.size() == kOrderingComparisons.size());
  for (const auto& p : o.pairs) CHECK(p.result.perm_p.has_value());

  const std::vector<double> u = {1.0, 0.98, 1.0, 0.2, 0.22, 0.21, 0.99, 1.0, 0.97};
  const std::vector<double> flat = {0.5, 0.52, 0.5, 0.49, 0.51, 0.5, 0.5, 0.48, 0.5};
  const auto x = crossmodel({{"u", u}, {"flat", flat}}, {});
  CHECK(x.regions.size() == 6);
  REQUIRE(x.interaction);
  CHECK(x.interaction->df2 == 12.0);
  CHECK(x.interaction->df1 == 2.0);
  CHECK(x.interaction->p < 0.05);
  CHECK_FALSE(crossmodel({{"u", u}}, {}).interaction);
}
