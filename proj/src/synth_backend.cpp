#include "sprobe/synth_backend.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "sprobe/error.hpp"
#include "sprobe/rng.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

namespace {

using json = nlohmann::json;

constexpr std::array<const char*, 10> kSyllables = {"bo", "ka", "lu", "mi", "ne", "po", "ri", "sa", "tu", "ve"};

std::string nonce_word(std::size_t k) {
  return fmt::format("zy{}{}{}n", kSyllables[k % 10], kSyllables[(k / 10) % 10], kSyllables[(k / 100) % 10]);
}

void set_map(std::map<Condition, double>& dst, const json& src, const char* name) {
  if (!src.is_object()) throw ParseError(fmt::format("synth config: '{}' must be an object", name));
  for (const auto& [k, v] : src.items()) dst[parse_condition(k)] = v.get<double>();
}

json map_to_json(const std::map<Condition, double>& m) {
  json j = json::object();
  for (const auto& [c, v] : m) j[std::string(to_string(c))] = v;
  return j;
}

struct Task {
  const PromptInstance* prompt = nullptr;
  const ProbeText* text = nullptr;
};

std::vector<std::string> concat_tokens(std::vector<std::string> a, std::string_view generation) {
  auto gen = synth_tokenize(generation);
  if (!gen.empty() && !a.empty()) gen.front().insert(0, " ");
  a.insert(a.end(), gen.begin(), gen.end());
  return a;
}

void fill_hidden(PromptActivations& rec, std::size_t real, double strength, const std::vector<double>& u,
                 const SynthConfig& cfg, Rng& rng) {
  const std::size_t t = rec.num_tokens();
  rec.hidden.assign(cfg.L_states * t * cfg.D, kPadHidden);
  for (std::size_t l = 0; l < cfg.L_states; ++l) {
    const double amp = strength * cfg.profile(l);
    for (std::size_t i = 0; i < real; ++i) {
      auto row = rec.hidden_row(l, i);
      for (std::size_t d = 0; d < cfg.D; ++d) {
        const double noise = cfg.noise_sigma > 0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
        row[d] = static_cast<float>(amp * u[d] + noise);
      }
    }
  }
}

void fill_attention(PromptActivations& rec, std::size_t real, Condition cond, const std::vector<TokenSpan>& spans,
                    const SynthConfig& cfg, Rng& rng) {
  const std::size_t t = rec.num_tokens();
  rec.attn_layers = cfg.L_attn;
  rec.heads = cfg.H;
  rec.attention.assign(cfg.L_attn * cfg.H * t * t, 0.0f);
  std::vector<bool> target(t, false);
  for (const auto& s : spans)
    for (std::size_t i = s.begin; i < s.end && i < t; ++i) target[i] = true;

  std::vector<double> wts(t);
  for (std::size_t l = 0; l < cfg.L_attn; ++l) {
    for (std::size_t h = 0; h < cfg.H; ++h) {
      const bool planted = l == cfg.planted_head.first && h == cfg.planted_head.second;
      for (std::size_t q = 0; q < t; ++q) {
        if (q >= real) {
          for (std::size_t k = 0; k < real; ++k) rec.attn(l, h, q, k) = static_cast<float>(1.0 / static_cast<double>(real));
          continue;
        }
        double sum_t = 0.0, sum_o = 0.0;
        for (std::size_t k = 0; k <= q; ++k) {
          wts[k] = rng.uniform(0.5, 1.5);
          (target[k] ? sum_t : sum_o) += wts[k];
        }
        if (sum_t == 0.0 || sum_o == 0.0) {
          const double total = sum_t + sum_o;
          for (std::size_t k = 0; k <= q; ++k) rec.attn(l, h, q, k) = static_cast<float>(wts[k] / total);
          continue;
        }
        double mass = cfg.base_target_attention * (1.0 + cfg.attention_jitter * rng.uniform(-1.0, 1.0));
        if (planted && cond == Condition::sup) mass += cfg.planted_head_boost;
        mass = std::clamp(mass, 0.0, 1.0);
        for (std::size_t k = 0; k <= q; ++k)
          rec.attn(l, h, q, k) = static_cast<float>(target[k] ? mass * wts[k] / sum_t : (1.0 - mass) * wts[k] / sum_o);
      }
    }
  }
}

PromptActivations make_record(std::string id, std::vector<std::string> tokens, std::size_t response_start,
                              std::string generation, const SynthConfig& cfg) {
  PromptActivations rec;
  rec.instance_id = std::move(id);
  const std::size_t real = tokens.size();
  const std::size_t t = std::max(cfg.T, real);
  rec.tokens = std::move(tokens);
  rec.tokens.resize(t, kPadToken);
  rec.pad_mask.assign(t, false);
  std::fill(rec.pad_mask.begin(), rec.pad_mask.begin() + static_cast<std::ptrdiff_t>(real), true);
  rec.response_start = response_start;
  rec.num_states = cfg.L_states;
  rec.dim = cfg.D;
  rec.generation_text = std::move(generation);
  return rec;
}

}  // namespace

void validate_config(const SynthConfig& cfg) {
  auto fail = [](const std::string& what) { throw ValidationError("invalid synth config: " + what); };
  if (cfg.D == 0 || cfg.L_states == 0 || cfg.T == 0) fail("D, L_states and T must be positive");
  if ((cfg.L_attn == 0) != (cfg.H == 0)) fail("L_attn and H must both be zero or both positive");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma)) fail("noise_sigma must be finite and >= 0");
  for (Condition c : kConditions) {
    if (!cfg.strength.count(c)) fail(fmt::format("strength[{}] missing", to_string(c)));
    if (!cfg.leak_rate.count(c)) fail(fmt::format("leak_rate[{}] missing", to_string(c)));
  }
  if (cfg.strength.at(Condition::abs) != 0.0) fail("strength[abs] must be 0");
  for (const auto& [c, v] : cfg.strength)
    if (!(v >= 0.0) || !std::isfinite(v)) fail(fmt::format("strength[{}] must be finite and >= 0", to_string(c)));
  for (const auto& [c, v] : cfg.leak_rate)
    if (!(v >= 0.0 && v <= 1.0)) fail(fmt::format("leak_rate[{}] must lie in [0, 1]", to_string(c)));
  if (!cfg.layer_profile.empty()) {
    if (cfg.layer_profile.size() != cfg.L_states)
      fail(fmt::format("layer_profile has {} entries, L_states is {}", cfg.layer_profile.size(), cfg.L_states));
    for (double v : cfg.layer_profile)
      if (!(v >= 0.0 && v <= 1.0)) fail("layer_profile entries must lie in [0, 1]");
  }
  if (!(cfg.base_target_attention >= 0.0 && cfg.base_target_attention <= 1.0))
    fail("base_target_attention must lie in [0, 1]");
  if (!(cfg.attention_jitter >= 0.0 && cfg.attention_jitter <= 1.0)) fail("attention_jitter must lie in [0, 1]");
  if (!(cfg.planted_head_boost >= 0.0)) fail("planted_head_boost must be >= 0");
  if (cfg.base_target_attention * (1.0 + cfg.attention_jitter) + cfg.planted_head_boost > 1.0)
    fail("target attention mass can exceed 1");
  if (cfg.L_attn > 0 && (cfg.planted_head.first >= cfg.L_attn || cfg.planted_head.second >= cfg.H))
    fail(fmt::format("planted_head ({}, {}) outside [{}, {}]", cfg.planted_head.first, cfg.planted_head.second,
                     cfg.L_attn, cfg.H));
}

SynthConfig synth_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "D", "L_states", "L_attn", "H", "T", "noise_sigma", "strength", "layer_profile", "planted_head",
      "planted_head_boost", "base_target_attention", "attention_jitter", "leak_rate", "seed", "synthetic_library"};
  if (!j.is_object()) throw ParseError("synth config must be a JSON object");
  SynthConfig cfg;
  try {
    for (const auto& [k, _] : j.items())
      if (!known.count(k)) throw ParseError("synth config: unknown key '" + k + "'");
    if (j.contains("D")) cfg.D = j["D"].get<std::size_t>();
    if (j.contains("L_states")) cfg.L_states = j["L_states"].get<std::size_t>();
    if (j.contains("L_attn")) cfg.L_attn = j["L_attn"].get<std::size_t>();
    if (j.contains("H")) cfg.H = j["H"].get<std::size_t>();
    if (j.contains("T")) cfg.T = j["T"].get<std::size_t>();
    if (j.contains("noise_sigma")) cfg.noise_sigma = j["noise_sigma"].get<double>();
    if (j.contains("strength")) set_map(cfg.strength, j["strength"], "strength");
    if (j.contains("leak_rate")) set_map(cfg.leak_rate, j["leak_rate"], "leak_rate");
    if (j.contains("layer_profile")) cfg.layer_profile = j["layer_profile"].get<std::vector<double>>();
    if (j.contains("planted_head")) {
      const auto ph = j["planted_head"].get<std::vector<std::size_t>>();
      if (ph.size() != 2) throw ParseError("synth config: planted_head must be [layer, head]");
      cfg.planted_head = {ph[0], ph[1]};
    }
    if (j.contains("planted_head_boost")) cfg.planted_head_boost = j["planted_head_boost"].get<double>();
    if (j.contains("base_target_attention")) cfg.base_target_attention = j["base_target_attention"].get<double>();
    if (j.contains("attention_jitter")) cfg.attention_jitter = j["attention_jitter"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("synthetic_library") && !j["synthetic_library"].is_null()) {
      const auto& s = j["synthetic_library"];
      SyntheticLibrarySpec spec;
      spec.n_concepts = s.value("n_concepts", spec.n_concepts);
      spec.n_contexts = s.value("n_contexts", spec.n_contexts);
      spec.n_examples = s.value("n_examples", spec.n_examples);
      cfg.synthetic_library = spec;
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed synth config: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

json synth_config_to_json(const SynthConfig& cfg) {
  json j;
  j["D"] = cfg.D;
  j["L_states"] = cfg.L_states;
  j["L_attn"] = cfg.L_attn;
  j["H"] = cfg.H;
  j["T"] = cfg.T;
  j["noise_sigma"] = cfg.noise_sigma;
  j["strength"] = map_to_json(cfg.strength);
  j["layer_profile"] = cfg.layer_profile;
  j["planted_head"] = {cfg.planted_head.first, cfg.planted_head.second};
  j["planted_head_boost"] = cfg.planted_head_boost;
  j["base_target_attention"] = cfg.base_target_attention;
  j["attention_jitter"] = cfg.attention_jitter;
  j["leak_rate"] = map_to_json(cfg.leak_rate);
  j["seed"] = cfg.seed;
  if (cfg.synthetic_library) {
    j["synthetic_library"] = {{"n_concepts", cfg.synthetic_library->n_concepts},
                              {"n_contexts", cfg.synthetic_library->n_contexts},
                              {"n_examples", cfg.synthetic_library->n_examples}};
  } else {
    j["synthetic_library"] = nullptr;
  }
  return j;
}

ConceptLibrary synthetic_library(const SyntheticLibrarySpec& spec) {
  if (spec.n_concepts == 0 || spec.n_contexts == 0 || spec.n_examples < 2)
    throw ValidationError("synthetic library needs >= 1 concept, >= 1 context and >= 2 examples");
  if (spec.n_concepts > 1000) throw ValidationError("synthetic library supports at most 1000 concepts");
  std::vector<ConceptEntry> entries;
  for (std::size_t k = 0; k < spec.n_concepts; ++k) {
    const std::string w = nonce_word(k);
    ConceptEntry e;
    e.id = fmt::format("concept_{:03}", k);
    e.aliases = {w, w + "ling"};
    e.indirect_descriptions = {fmt::format("the strange thing from tale {}", k),
                               fmt::format("the creature of story {}", k)};
    for (std::size_t j = 0; j < spec.n_contexts; ++j)
      e.contexts.push_back(fmt::format("Describe scene {} of tale {}.", j, k));
    for (std::size_t i = 0; i < spec.n_examples; ++i) {
      e.positive.push_back(fmt::format("A {} appeared in scene {}.", w, i));
      e.negative.push_back(fmt::format("Nothing unusual appeared in scene {}.", i));
    }
    for (std::size_t i = 0; i < (spec.n_examples + 1) / 2; ++i)
      e.negative_hard.push_back(fmt::format("Something from tale {} appeared in scene {}.", k, i));
    entries.push_back(std::move(e));
  }
  return ConceptLibrary(std::move(entries));
}

std::vector<std::string> synth_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    out.push_back((out.empty() ? "" : " ") + std::string(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

std::map<std::string, std::vector<double>> concept_directions(const ConceptLibrary& lib, std::size_t dim,
                                                              std::uint64_t seed) {
  const auto ids = lib.sorted_ids();
  if (dim < ids.size())
    throw ValidationError(fmt::format("D = {} is smaller than the number of concepts ({})", dim, ids.size()));
  Rng rng(derive_seed(seed, "concept-directions"));
  std::map<std::string, std::vector<double>> out;
  std::vector<std::vector<double>> basis;
  for (const auto& id : ids) {
    std::vector<double> v;
    double norm = 0.0;
    // Gram-Schmidt; redraw in the (probability zero) dependent case.
    do {
      v.assign(dim, 0.0);
      for (auto& x : v) x = rng.normal();
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& b : basis) {
          double p = 0.0;
          for (std::size_t d = 0; d < dim; ++d) p += v[d] * b[d];
          for (std::size_t d = 0; d < dim; ++d) v[d] -= p * b[d];
        }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (auto& x : v) x /= norm;
    basis.push_back(v);
    out.emplace(id, std::move(v));
  }
  return out;
}

ActivationBundle generate_bundle(const ConceptLibrary& lib, const std::vector<PromptInstance>& prompts,
                                 const SynthConfig& cfg) {
  validate_config(cfg);
  const auto dirs = concept_directions(lib, cfg.D, cfg.seed);
  const auto texts = probe_texts(lib);

  ActivationBundle bundle;
  auto& m = bundle.manifest;
  m.model_name = "synthetic";
  m.num_states = cfg.L_states;
  m.attn_layers = cfg.L_attn;
  m.heads = cfg.H;
  m.dim = cfg.D;
  m.metadata = {{"generator", "sprobe-synth"}, {"synth_config", synth_config_to_json(cfg)}};

  std::vector<Task> tasks;
  for (const auto& p : prompts) tasks.push_back({&p, nullptr});
  for (const auto& t : texts) tasks.push_back({nullptr, &t});
  std::vector<PromptActivations> out(tasks.size());

  parallel_for(tasks.size(), [&](std::size_t i) {
    const Task& task = tasks[i];
    if (task.prompt) {
      const PromptInstance& p = *task.prompt;
      const ConceptEntry& e = lib.at(p.concept_id);
      Rng rng(derive_seed(cfg.seed, p.instance_id));
      const bool leak = rng.bernoulli(cfg.leak_rate.at(p.condition));
      const auto& pool_texts = leak ? e.positive : e.negative;
      std::string generation = pool_texts[rng.below(pool_texts.size())];
      auto prompt_tokens = synth_tokenize(p.rendered_text);
      const std::size_t response_start = prompt_tokens.size();
      auto tokens = concat_tokens(std::move(prompt_tokens), generation);
      const std::size_t real = tokens.size();
      PromptActivations rec = make_record(p.instance_id, std::move(tokens), response_start, std::move(generation), cfg);
      fill_hidden(rec, real, cfg.strength.at(p.condition), dirs.at(p.concept_id), cfg, rng);
      if (cfg.L_attn > 0) {
        const auto spans = find_target_spans(rec.tokens, e.aliases);
        fill_attention(rec, real, p.condition, spans, cfg, rng);
      }
      out[i] = std::move(rec);
    } else {
      const ProbeText& t = *task.text;
      Rng rng(derive_seed(cfg.seed, t.instance_id));
      auto tokens = synth_tokenize(t.text);
      const std::size_t real = tokens.size();
      PromptActivations rec = make_record(t.instance_id, std::move(tokens), real, "", cfg);
      const double strength = t.kind == ExampleKind::positive ? 1.0 : 0.0;
      fill_hidden(rec, real, strength, dirs.at(t.concept_id), cfg, rng);
      out[i] = std::move(rec);
    }
  });
  for (auto& rec : out) bundle.add(std::move(rec));
  return bundle;
}

}  // namespace sprobe
