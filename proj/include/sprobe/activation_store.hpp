#pragma once

// On-disk activation bundles, token pooling and the behavioral exclusion
// filter.
//
// Bundle directory layout:
//   manifest.json
//   activations/{instance_id}.bin   float32 LE, row-major [L_states][T][D]
//   attentions/{instance_id}.bin    float32 LE, row-major [L_attn][H][T][T]
//
// Hidden state 0 is the embedding output; state l is the output of block l.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sprobe/prompt_factory.hpp"
#include "sprobe/text_match.hpp"

namespace sprobe {

inline constexpr int kBundleFormatVersion = 1;

enum class Pooling { last_nonpad, mean_nonpad, target_tokens };

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view tag);

// Half-open token index range.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct PromptActivations {
  std::string instance_id;
  std::vector<std::string> tokens;
  std::vector<bool> pad_mask;  // true = real token
  std::size_t response_start = 0;
  std::size_t num_states = 0;  // L_states
  std::size_t dim = 0;         // D
  std::vector<float> hidden;   // [num_states][T][dim]
  std::size_t attn_layers = 0;
  std::size_t heads = 0;
  std::vector<float> attention;  // [attn_layers][heads][T][T]; empty when absent
  std::string generation_text;

  std::size_t num_tokens() const { return tokens.size(); }
  bool has_attention() const { return !attention.empty(); }

  std::span<const float> hidden_row(std::size_t state, std::size_t token) const {
    return {hidden.data() + (state * num_tokens() + token) * dim, dim};
  }
  std::span<float> hidden_row(std::size_t state, std::size_t token) {
    return {hidden.data() + (state * num_tokens() + token) * dim, dim};
  }
  // Attention weight of query row q onto key k.
  float attn(std::size_t layer, std::size_t head, std::size_t q, std::size_t k) const {
    const std::size_t t = num_tokens();
    return attention[((layer * heads + head) * t + q) * t + k];
  }
  float& attn(std::size_t layer, std::size_t head, std::size_t q, std::size_t k) {
    const std::size_t t = num_tokens();
    return attention[((layer * heads + head) * t + q) * t + k];
  }
};

struct BundleManifest {
  int format_version = kBundleFormatVersion;
  std::string model_name;
  std::size_t num_states = 0;   // L_states
  std::size_t attn_layers = 0;  // L_attn
  std::size_t heads = 0;        // H
  std::size_t dim = 0;          // D
  nlohmann::json metadata = nlohmann::json::object();
};

struct ActivationBundle {
  BundleManifest manifest;
  std::map<std::string, PromptActivations> records;

  const PromptActivations* find(std::string_view id) const;
  const PromptActivations& at(std::string_view id) const;
  // Adds a record after checking it against the manifest and record invariants.
  void add(PromptActivations rec);
};

// Invariant violations of one record against its manifest (empty if clean):
// shapes, pad mask length, response_start range, finiteness, attention row
// normalization over non-pad keys (1 +/- 1e-4).
std::vector<std::string> check_record(const PromptActivations& rec, const BundleManifest& m);
std::vector<std::string> check_bundle(const ActivationBundle& bundle);

void write_bundle(const ActivationBundle& bundle, const std::filesystem::path& dir);
// Verifies per-file SHA-256, tensor sizes and record invariants. Throws
// BundleError naming the offending instance.
ActivationBundle read_bundle(const std::filesystem::path& dir);

// Target-alias regions: maximal contiguous token ranges whose detokenized
// text matches an alias. SentencePiece and byte-level BPE space markers
// ("▁", "Ġ") are read as spaces.
std::vector<TokenSpan> find_target_spans(std::span<const std::string> tokens,
                                         std::span<const std::string> aliases);

struct PoolOutput {
  std::vector<double> vector;
  bool fallback = false;  // target_tokens found no span and used mean_nonpad
};

// Throws ValidationError on a layer out of range or an all-pad record.
PoolOutput pool(const PromptActivations& rec, Pooling strategy, std::size_t layer,
                std::span<const TokenSpan> target_spans = {});

enum class Exclusion { keep, exclude };

// Applies only to sup and ind records: exclude iff the generation leaks an
// alias. Every other condition is kept.
Exclusion exclusion_filter(const PromptActivations& rec, Condition condition,
                           std::span<const std::string> aliases);

struct ExclusionCounts {
  std::size_t total = 0;
  std::size_t retained = 0;
  std::size_t excluded = 0;
};

struct ExclusionSummary {
  std::map<Condition, ExclusionCounts> by_condition;
  std::vector<std::string> excluded_ids;  // sorted
  bool is_excluded(std::string_view id) const;
};

// Runs the filter over every prompt record of the bundle.
ExclusionSummary summarize_exclusions(const ActivationBundle& bundle, const ConceptLibrary& lib);

}  // namespace sprobe
