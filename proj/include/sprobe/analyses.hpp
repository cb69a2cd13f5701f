#pragma once

// The four analyses over a bundle: probe salience, attention routing,
// behavioral leakage, and cross-model region / ordering summaries.
//
// Pairs are matched on (concept, context). A pair is dropped from a
// comparison when either side was removed by the leak filter; per-condition
// means use every retained record of that condition.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sprobe/activation_store.hpp"
#include "sprobe/concept_library.hpp"
#include "sprobe/embedding.hpp"
#include "sprobe/probes.hpp"
#include "sprobe/prompt_factory.hpp"
#include "sprobe/stats.hpp"

namespace sprobe {

enum class Granularity { pair, per_concept };
std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view tag);

struct AnalysisOptions {
  Pooling pooling = Pooling::target_tokens;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ProbeOptions probe;
  PairedOptions paired;
  Granularity attention_granularity = Granularity::pair;
};

struct Comparison {
  Condition a;
  Condition b;
  std::string name() const;  // e.g. "sup-abs"
  friend bool operator==(const Comparison&, const Comparison&) = default;
};

inline const std::vector<Comparison> kSalienceComparisons = {
    {Condition::sup, Condition::abs}, {Condition::ind, Condition::abs}, {Condition::ctrl, Condition::abs},
    {Condition::men, Condition::abs}, {Condition::sup, Condition::men}};
inline const std::vector<Comparison> kAttentionComparisons = {{Condition::sup, Condition::men},
                                                              {Condition::sup, Condition::ctrl}};
inline const std::vector<Comparison> kLeakageComparisons = {
    {Condition::sup, Condition::abs}, {Condition::men, Condition::abs}, {Condition::sup, Condition::men},
    {Condition::sup, Condition::ctrl}, {Condition::ind, Condition::abs}};
inline const std::vector<Comparison> kOrderingComparisons = {
    {Condition::men, Condition::sup}, {Condition::men, Condition::ind}, {Condition::men, Condition::abs},
    {Condition::sup, Condition::ind}, {Condition::sup, Condition::abs}, {Condition::ind, Condition::abs}};

Comparison parse_comparison(std::string_view name);

// ---- probe scoring -------------------------------------------------------

struct ProbeQualityRow {
  std::string concept_id;
  std::size_t layer = 0;
  std::uint64_t seed = 0;
  ProbeMetrics metrics;
  std::size_t iterations = 0;
};

struct ScoredBundle {
  std::size_t num_states = 0;
  Pooling pooling = Pooling::target_tokens;
  // Prompt instance id -> per-layer probe score averaged over seeds.
  std::map<std::string, std::vector<double>> scores;
  std::vector<ProbeQualityRow> quality;  // sorted by concept, layer, seed
  std::vector<ProbeModel> models;        // same order as quality
  std::vector<std::string> pooling_fallbacks;  // sorted ids pooled by the mean fallback
  ExclusionSummary exclusions;
};

// Trains one probe per (concept, layer, seed) on the bundle's probe-training
// records ("{concept}|pos|i" vs "{concept}|neg|i" and "{concept}|hard|i")
// and scores every prompt record.
ScoredBundle score_bundle(const ActivationBundle& bundle, const ConceptLibrary& lib, const AnalysisOptions& opts);

// ---- salience ------------------------------------------------------------

struct SalienceRow {
  std::size_t layer = 0;
  Pooling pooling = Pooling::target_tokens;
  std::string comparison;
  PairedResult result;
  std::map<Condition, double> mu;        // per-condition means over retained records
  std::map<Condition, std::size_t> n_mu;
};

struct SaliencePeak {
  std::string comparison;
  std::size_t layer = 0;
  double delta = 0.0;
};

struct SalienceTable {
  std::vector<SalienceRow> rows;  // layer-major, comparisons in kSalienceComparisons order
  std::vector<SaliencePeak> peaks;
};

// One row from already-paired scores; mu holds the two compared means.
SalienceRow make_salience_row(std::size_t layer, Pooling pooling, const Comparison& cmp,
                              std::span<const double> a, std::span<const double> b, const PairedOptions& opts);

// Throws DegenerateDataError when a comparison keeps fewer than 2 pairs.
SalienceTable salience_table(const ScoredBundle& scored, const ConceptLibrary& lib, const AnalysisOptions& opts,
                             const std::vector<Comparison>& comparisons = kSalienceComparisons);

// Peak = argmax delta; ties go to the lower layer.
std::vector<SaliencePeak> find_peaks(const std::vector<SalienceRow>& rows);

// Per-layer deltas of one comparison, indexed by layer.
std::vector<double> layer_deltas(const SalienceTable& table, std::string_view comparison);

// ---- attention -----------------------------------------------------------

enum class AttentionScope { aggregate, layer, head };
std::string_view to_string(AttentionScope s);

struct AttentionRow {
  AttentionScope scope = AttentionScope::aggregate;
  std::size_t layer = 0;  // unused for aggregate
  std::optional<std::size_t> head;
  std::string comparison;
  PairedResult result;
};

struct TopHead {
  std::string comparison;
  std::size_t layer = 0;
  std::optional<std::size_t> head;  // empty when no head has a positive delta
  double delta = 0.0;
  std::size_t n_ci_positive = 0;    // heads whose CI lies entirely above zero
};

struct AttentionTable {
  std::vector<AttentionRow> rows;
  std::vector<TopHead> top_heads;
  std::map<std::string, std::size_t> dropped_pairs;  // both sides without target spans
  std::map<std::string, std::size_t> n_units;
  Granularity granularity = Granularity::pair;
};

// Mean over real response query rows of the attention summed over
// target-span keys. Nullopt when the record has no real response rows.
std::optional<double> attention_mass(const PromptActivations& rec, std::size_t layer, std::size_t head,
                                     std::span<const TokenSpan> spans);

AttentionTable attention_table(const ActivationBundle& bundle, const ConceptLibrary& lib, const AnalysisOptions& opts);

// ---- leakage -------------------------------------------------------------

struct LeakageRow {
  Condition condition = Condition::abs;
  double mean_similarity = 0.0;
  double sem = 0.0;
  Interval ci;
  double explicit_leak_rate = 0.0;  // n_leaked / n_retained
  std::size_t n_total = 0;
  std::size_t n_retained = 0;
  std::size_t n_leaked = 0;
};

struct LeakagePair {
  std::string comparison;
  PairedResult result;
};

struct LeakageTable {
  std::vector<LeakageRow> rows;
  std::vector<LeakagePair> pairwise;
  std::string embedder;
};

LeakageTable leakage_table(const ActivationBundle& bundle, const ConceptLibrary& lib, const Embedder& embedder,
                           const AnalysisOptions& opts);

// ---- regions, ordering, cross-model -------------------------------------

struct RegionCounts {
  std::size_t early = 0;
  std::size_t middle = 0;
  std::size_t late = 0;
  friend bool operator==(const RegionCounts&, const RegionCounts&) = default;
};

// ceil(L/3) layers at each end, reduced until the middle keeps >= 1.
RegionCounts region_partition(std::size_t num_layers);

inline constexpr std::array<const char*, 3> kRegionNames = {"early", "middle", "late"};

struct RegionSummary {
  std::string model;
  std::string region;
  std::size_t first_layer = 0;
  std::size_t n_layers = 0;
  double mean_delta = 0.0;
  Interval ci;  // percentile bootstrap over the region's layer deltas
  double range_low = 0.0;
  double range_high = 0.0;
};

std::vector<RegionSummary> region_summary(std::span<const double> layer_deltas, std::string_view model,
                                          const PairedOptions& opts);

struct OrderingPair {
  std::string comparison;
  PairedResult result;  // perm_p always set
};

struct OrderingResult {
  std::map<Condition, double> mean_score;
  std::vector<OrderingPair> pairs;
};

// Units are (concept, context, layer) triples over men, sup, ind and abs.
OrderingResult condition_ordering(const ScoredBundle& scored, const ConceptLibrary& lib, const AnalysisOptions& opts);

struct CrossModelInput {
  std::string model;
  std::vector<double> layer_deltas;
};

struct CrossModelResult {
  std::vector<RegionSummary> regions;
  std::optional<FTest> interaction;  // needs >= 2 models
};

CrossModelResult crossmodel(const std::vector<CrossModelInput>& inputs, const PairedOptions& opts);

}  // namespace sprobe
