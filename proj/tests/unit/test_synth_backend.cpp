#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "sprobe/analyses.hpp"
#include "sprobe/synth_backend.hpp"
#include "sprobe/util.hpp"

using namespace sprobe;
namespace fs = std::filesystem;

namespace {

SyntheticLibrarySpec small_spec() { return {3, 2, 8}; }

double dot(std::span<const float> a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("synthetic library is valid and disjoint") {
  const auto lib = synthetic_library({8, 10, 24});
  CHECK(validate_library(lib).ok());
  CHECK(lib.size() == 8);
  CHECK(lib.counts().contexts == 80);
  CHECK(instantiate_prompts(lib).size() == 400);
}

TEST_CASE("tokenizer keeps leading spaces") {
  const auto t = synth_tokenize("Do not  mention it.");
  CHECK(t == std::vector<std::string>{"Do", " not", " mention", " it."});
}

TEST_CASE("concept directions are orthonormal") {
  const auto lib = synthetic_library(small_spec());
  const auto dirs = concept_directions(lib, 16, 3);
  REQUIRE(dirs.size() == 3);
  for (const auto& [a, u] : dirs)
    for (const auto& [b, v] : dirs) {
      const double d = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
      CHECK(d == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("noise-free hidden states equal the closed-form projection") {
  const auto lib = synthetic_library(small_spec());
  SynthConfig cfg;
  cfg.D = 16;
  cfg.L_states = 4;
  cfg.noise_sigma = 0.0;
  cfg.layer_profile = {1.0, 0.5, 0.25, 1.0};
  const auto prompts = instantiate_prompts(lib);
  const auto bundle = generate_bundle(lib, prompts, cfg);
  const auto dirs = concept_directions(lib, cfg.D, cfg.seed);

  std::map<Condition, std::vector<double>> proj;  // per layer, one record per condition
  for (const auto& p : prompts) {
    const auto& rec = bundle.at(p.instance_id);
    const auto& u = dirs.at(p.concept_id);
    for (std::size_t l = 0; l < cfg.L_states; ++l) {
      const double expected = cfg.strength.at(p.condition) * cfg.profile(l);
      for (std::size_t t = 0; t < rec.num_tokens(); ++t) {
        if (!rec.pad_mask[t]) continue;
        CHECK(dot(rec.hidden_row(l, t), u) == doctest::Approx(expected).epsilon(1e-6));
      }
    }
  }

  // Probes trained on noise-free data order conditions like the projection.
  AnalysisOptions opts;
  opts.seeds = {0};
  const auto scored = score_bundle(bundle, lib, opts);
  for (const auto& q : scored.quality) {
    CHECK(q.metrics.auc == 1.0);
    CHECK(q.metrics.accuracy == 1.0);
  }
  for (std::size_t l = 0; l < cfg.L_states; ++l) {
    std::map<Condition, double> m;
    std::map<Condition, int> n;
    for (const auto& p : prompts) {
      m[p.condition] += scored.scores.at(p.instance_id)[l];
      ++n[p.condition];
    }
    for (auto& [c, v] : m) v /= n[c];
    CHECK(m[Condition::men] > m[Condition::sup]);
    CHECK(m[Condition::sup] > m[Condition::ind]);
    CHECK(m[Condition::ind] > m[Condition::ctrl]);
    CHECK(m[Condition::ctrl] > m[Condition::abs]);
  }
}

TEST_CASE("leak rate zero keeps every suppressed record") {
  const auto lib = synthetic_library(small_spec());
  SynthConfig cfg;
  cfg.D = 8;
  cfg.L_states = 2;
  cfg.leak_rate[Condition::sup] = 0.0;
  cfg.leak_rate[Condition::men] = 1.0;
  const auto bundle = generate_bundle(lib, instantiate_prompts(lib), cfg);
  const auto excl = summarize_exclusions(bundle, lib);
  CHECK(excl.by_condition.at(Condition::sup).excluded == 0);
  CHECK(excl.by_condition.at(Condition::sup).retained == 6);
  for (const auto& [id, rec] : bundle.records) {
    const auto key = parse_instance_id(id);
    if (key && key->condition == Condition::men) CHECK(detect_leak(rec.generation_text, lib.at(key->concept_id).aliases));
  }
}

TEST_CASE("attention tensors are causal and normalized") {
  const auto lib = synthetic_library(small_spec());
  SynthConfig cfg;
  cfg.D = 8;
  cfg.L_states = 2;
  cfg.L_attn = 3;
  cfg.H = 2;
  cfg.planted_head = {1, 1};
  const auto bundle = generate_bundle(lib, instantiate_prompts(lib), cfg);
  CHECK(check_bundle(bundle).empty());
  for (const auto& [id, rec] : bundle.records) {
    if (!parse_instance_id(id)) {
      CHECK_FALSE(rec.has_attention());
      continue;
    }
    REQUIRE(rec.has_attention());
    for (std::size_t q = 0; q < rec.num_tokens(); ++q)
      for (std::size_t k = q + 1; k < rec.num_tokens(); ++k)
        if (rec.pad_mask[q]) CHECK(rec.attn(0, 0, q, k) == 0.0f);
  }
}

TEST_CASE("same seed gives byte-identical bundles") {
  const auto lib = synthetic_library(small_spec());
  SynthConfig cfg;
  cfg.D = 8;
  cfg.L_states = 2;
  cfg.L_attn = 2;
  cfg.H = 2;
  cfg.planted_head = {1, 0};
  const auto prompts = instantiate_prompts(lib);
  const auto a = fs::temp_directory_path() / "sprobe_synth_a", b = fs::temp_directory_path() / "sprobe_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_bundle(generate_bundle(lib, prompts, cfg), a);
  write_bundle(generate_bundle(lib, prompts, cfg), b);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    CHECK(sha256_file(e.path()) == sha256_file(b / rel));
    ++files;
  }
  CHECK(files > 1);

  cfg.seed = 1;
  const auto c = generate_bundle(lib, prompts, cfg);
  CHECK(c.at(prompts[0].instance_id).hidden != read_bundle(a).at(prompts[0].instance_id).hidden);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config validation and json") {
  SynthConfig cfg;
  CHECK_NOTHROW(validate_config(cfg));
  auto bad = cfg;
  bad.noise_sigma = -1.0;
  CHECK_THROWS_AS(validate_config(bad), ValidationError);
  bad = cfg;
  bad.layer_profile = {1.0, 2.0};
  CHECK_THROWS_AS(validate_config(bad), ValidationError);
  bad = cfg;
  bad.leak_rate[Condition::men] = 1.5;
  CHECK_THROWS_AS(validate_config(bad), ValidationError);

  cfg.layer_profile = {1, .9, .8, .7, .6, .5, .4, .3, .2};
  cfg.seed = 42;
  const auto back = synth_config_from_json(synth_config_to_json(cfg));
  CHECK(back.layer_profile == cfg.layer_profile);
  CHECK(back.seed == 42);
  CHECK(back.strength == cfg.strength);
  CHECK_THROWS(synth_config_from_json(nlohmann::json::parse(R"({"nosie_sigma": 1})")));

  const auto lib = synthetic_library(small_spec());
  SynthConfig narrow;
  narrow.D = 2;
  CHECK_THROWS_AS(generate_bundle(lib, instantiate_prompts(lib), narrow), ValidationError);
}
