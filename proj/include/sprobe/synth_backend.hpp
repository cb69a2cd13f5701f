#pragma once

// Synthetic activation bundles with planted concept directions.
//
// Texts are split on whitespace; every token after the first keeps its
// leading space, so concatenating tokens restores the text. Records are
// right-padded with "<pad>" up to T.
//
// Every real token of a record for concept c carries
//   strength * layer_profile[l] * u_c + N(0, noise_sigma^2) per dimension,
// where u_c are orthonormal directions. Prompt records use strength[condition];
// probe-training texts use 1 (positive) or 0 (negative, negative_hard).
//
// Attention (prompt records only, when L_attn and H are positive) is causal.
// A query row that can see target-alias keys puts mass
//   base_target_attention * (1 + attention_jitter * U(-1, 1))
// on them, plus planted_head_boost in the planted head under sup; the rest
// goes to the other visible keys. Pad query rows are uniform over real keys.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sprobe/activation_store.hpp"
#include "sprobe/concept_library.hpp"
#include "sprobe/prompt_factory.hpp"

namespace sprobe {

inline constexpr const char* kPadToken = "<pad>";
inline constexpr float kPadHidden = 1000.0f;

struct SyntheticLibrarySpec {
  std::size_t n_concepts = 8;
  std::size_t n_contexts = 10;
  std::size_t n_examples = 24;  // positives per concept (negatives match)
};

struct SynthConfig {
  std::size_t D = 64;
  std::size_t L_states = 9;
  std::size_t L_attn = 0;
  std::size_t H = 0;
  std::size_t T = 16;
  double noise_sigma = 0.5;
  std::map<Condition, double> strength = {{Condition::abs, 0.0},
                                          {Condition::ctrl, 0.1},
                                          {Condition::ind, 0.55},
                                          {Condition::sup, 0.7},
                                          {Condition::men, 1.0}};
  std::vector<double> layer_profile;  // empty means all ones
  std::pair<std::size_t, std::size_t> planted_head = {14, 4};
  double planted_head_boost = 0.05;
  double base_target_attention = 0.1;
  double attention_jitter = 0.5;
  std::map<Condition, double> leak_rate = {{Condition::abs, 0.1},
                                           {Condition::men, 0.483},
                                           {Condition::sup, 0.0},
                                           {Condition::ind, 0.0},
                                           {Condition::ctrl, 0.123}};
  std::uint64_t seed = 0;
  // Used by the CLI when no --library is given.
  std::optional<SyntheticLibrarySpec> synthetic_library;

  double profile(std::size_t layer) const {
    return layer_profile.empty() ? 1.0 : layer_profile.at(layer);
  }
};

// Throws ValidationError naming the first broken constraint.
void validate_config(const SynthConfig& cfg);

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& cfg);

// Nonce-word concepts with disjoint vocabularies; valid under validate_library.
ConceptLibrary synthetic_library(const SyntheticLibrarySpec& spec);

// Whitespace tokenization with leading-space tokens.
std::vector<std::string> synth_tokenize(std::string_view text);

// Orthonormal concept directions keyed by concept id (sorted-id order of draws).
std::map<std::string, std::vector<double>> concept_directions(const ConceptLibrary& lib,
                                                              std::size_t dim, std::uint64_t seed);

// Prompt records for every instance plus one record per probe-training text.
// Throws ValidationError on D < number of concepts or an invalid config.
ActivationBundle generate_bundle(const ConceptLibrary& lib, const std::vector<PromptInstance>& prompts,
                                 const SynthConfig& cfg);

}  // namespace sprobe
