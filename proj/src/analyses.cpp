#include "sprobe/analyses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "sprobe/error.hpp"
#include "sprobe/text_match.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

namespace {

using PairKey = std::pair<std::string, std::size_t>;  // (concept, context)

// (concept, context) -> condition -> instance id, over prompt records only.
std::map<PairKey, std::map<Condition, std::string>> index_prompts(const std::vector<std::string>& ids) {
  std::map<PairKey, std::map<Condition, std::string>> out;
  for (const auto& id : ids) {
    const auto key = parse_instance_id(id);
    if (key) out[{key->concept_id, key->context_index}][key->condition] = id;
  }
  return out;
}

std::vector<std::string> prompt_ids(const ActivationBundle& bundle) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : bundle.records)
    if (parse_instance_id(id)) ids.push_back(id);
  return ids;
}

struct PairSide {
  PairKey key;
  std::string a, b;
};

// Pairs present on both sides and kept by the leak filter.
std::vector<PairSide> matched_pairs(const std::map<PairKey, std::map<Condition, std::string>>& index,
                                    const Comparison& cmp, const ExclusionSummary& excl) {
  std::vector<PairSide> out;
  for (const auto& [key, by_cond] : index) {
    const auto ia = by_cond.find(cmp.a), ib = by_cond.find(cmp.b);
    if (ia == by_cond.end() || ib == by_cond.end()) continue;
    if (excl.is_excluded(ia->second) || excl.is_excluded(ib->second)) continue;
    out.push_back({key, ia->second, ib->second});
  }
  return out;
}

Interval mean_interval(std::span<const double> xs, const PairedOptions& opts) {
  if (xs.size() < 2) {
    const double m = xs.empty() ? std::numeric_limits<double>::quiet_NaN() : xs.front();
    return {m, m};
  }
  return paired_bootstrap_ci(xs, opts.n_boot, opts.level, opts.seed);
}

std::vector<TokenSpan> spans_for(const PromptActivations& rec, const ConceptEntry& e) {
  return find_target_spans(rec.tokens, e.aliases);
}

}  // namespace

std::string_view to_string(Granularity g) { return g == Granularity::pair ? "pair" : "concept"; }

Granularity parse_granularity(std::string_view tag) {
  if (tag == "pair") return Granularity::pair;
  if (tag == "concept") return Granularity::per_concept;
  throw ParseError("unknown granularity '" + std::string(tag) + "'");
}

std::string Comparison::name() const { return fmt::format("{}-{}", to_string(a), to_string(b)); }

Comparison parse_comparison(std::string_view name) {
  const auto dash = name.find('-');
  if (dash == std::string_view::npos) throw ParseError("comparison must look like 'sup-abs'");
  return {parse_condition(name.substr(0, dash)), parse_condition(name.substr(dash + 1))};
}

std::string_view to_string(AttentionScope s) {
  switch (s) {
    case AttentionScope::aggregate: return "aggregate";
    case AttentionScope::layer: return "layer";
    case AttentionScope::head: return "head";
  }
  return "?";
}

// ---- probe scoring -------------------------------------------------------

ScoredBundle score_bundle(const ActivationBundle& bundle, const ConceptLibrary& lib, const AnalysisOptions& opts) {
  if (opts.seeds.empty()) throw UsageError("at least one probe seed is required");
  ScoredBundle out;
  out.num_states = bundle.manifest.num_states;
  out.pooling = opts.pooling;
  out.exclusions = summarize_exclusions(bundle, lib);

  struct ConceptRecords {
    std::vector<const PromptActivations*> pos, neg, prompts;
  };
  std::map<std::string, ConceptRecords> by_concept;
  for (const auto& [id, rec] : bundle.records) {
    if (const auto key = parse_instance_id(id)) {
      by_concept[key->concept_id].prompts.push_back(&rec);
    } else if (const auto pk = parse_probe_text_id(id)) {
      auto& cr = by_concept[pk->concept_id];
      (pk->kind == ExampleKind::positive ? cr.pos : cr.neg).push_back(&rec);
    }
  }
  std::vector<std::string> concepts;
  for (const auto& [c, cr] : by_concept) {
    if (cr.prompts.empty()) continue;
    if (cr.pos.size() < 2 || cr.neg.size() < 2)
      throw ValidationError(fmt::format("bundle lacks probe-training records for concept '{}' ({} positive, {} negative)",
                                        c, cr.pos.size(), cr.neg.size()));
    concepts.push_back(c);
  }

  // Target spans once per record.
  std::map<const PromptActivations*, std::vector<TokenSpan>> spans;
  if (opts.pooling == Pooling::target_tokens) {
    for (const auto& c : concepts) {
      const ConceptEntry& e = lib.at(c);
      const auto& cr = by_concept.at(c);
      for (const auto* list : {&cr.pos, &cr.neg, &cr.prompts})
        for (const auto* rec : *list) spans.emplace(rec, spans_for(*rec, e));
    }
  }
  auto span_of = [&](const PromptActivations* rec) -> std::span<const TokenSpan> {
    const auto it = spans.find(rec);
    return it == spans.end() ? std::span<const TokenSpan>{} : std::span<const TokenSpan>(it->second);
  };

  const std::size_t L = bundle.manifest.num_states;
  const std::size_t S = opts.seeds.size();
  struct TaskOut {
    std::vector<ProbeFit> fits;
    std::vector<double> prompt_scores;
  };
  std::vector<TaskOut> results(concepts.size() * L);

  parallel_for(results.size(), [&](std::size_t task) {
    const std::string& c = concepts[task / L];
    const std::size_t layer = task % L;
    const auto& cr = by_concept.at(c);
    auto pooled = [&](const std::vector<const PromptActivations*>& recs) {
      Matrix m;
      m.reserve(recs.size());
      for (const auto* r : recs) m.push_back(pool(*r, opts.pooling, layer, span_of(r)).vector);
      return m;
    };
    const Matrix pos = pooled(cr.pos), neg = pooled(cr.neg), prompts = pooled(cr.prompts);
    TaskOut& o = results[task];
    o.prompt_scores.assign(prompts.size(), 0.0);
    for (std::uint64_t seed : opts.seeds) {
      ProbeFit fit = train_probe(pos, neg, seed, opts.probe);
      fit.model.concept_id = c;
      fit.model.layer = layer;
      fit.model.pooling = opts.pooling;
      for (std::size_t i = 0; i < prompts.size(); ++i) o.prompt_scores[i] += probe_score(fit.model, prompts[i]);
      o.fits.push_back(std::move(fit));
    }
    for (auto& s : o.prompt_scores) s /= static_cast<double>(S);
  });

  for (std::size_t ci = 0; ci < concepts.size(); ++ci) {
    const auto& cr = by_concept.at(concepts[ci]);
    for (const auto* rec : cr.prompts) {
      out.scores[rec->instance_id].assign(L, 0.0);
      if (opts.pooling == Pooling::target_tokens && span_of(rec).empty())
        out.pooling_fallbacks.push_back(rec->instance_id);
    }
    for (std::size_t layer = 0; layer < L; ++layer) {
      TaskOut& o = results[ci * L + layer];
      for (std::size_t i = 0; i < cr.prompts.size(); ++i)
        out.scores[cr.prompts[i]->instance_id][layer] = o.prompt_scores[i];
      for (auto& fit : o.fits) {
        out.quality.push_back({concepts[ci], layer, fit.model.seed, fit.metrics, fit.model.iterations});
        out.models.push_back(std::move(fit.model));
      }
    }
  }
  std::sort(out.pooling_fallbacks.begin(), out.pooling_fallbacks.end());
  return out;
}

// ---- salience ------------------------------------------------------------

SalienceRow make_salience_row(std::size_t layer, Pooling pooling, const Comparison& cmp, std::span<const double> a,
                              std::span<const double> b, const PairedOptions& opts) {
  SalienceRow row;
  row.layer = layer;
  row.pooling = pooling;
  row.comparison = cmp.name();
  row.result = paired_compare(a, b, opts);
  row.mu[cmp.a] = row.result.mean_a;
  row.mu[cmp.b] = row.result.mean_b;
  row.n_mu[cmp.a] = a.size();
  row.n_mu[cmp.b] = b.size();
  return row;
}

SalienceTable salience_table(const ScoredBundle& scored, const ConceptLibrary&, const AnalysisOptions& opts,
                             const std::vector<Comparison>& comparisons) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : scored.scores) ids.push_back(id);
  const auto index = index_prompts(ids);
  const std::size_t L = scored.num_states;

  std::vector<std::vector<PairSide>> pairs;
  for (const auto& cmp : comparisons) {
    pairs.push_back(matched_pairs(index, cmp, scored.exclusions));
    if (pairs.back().size() < 2)
      throw DegenerateDataError(fmt::format("insufficient retained pairs for {}: {}", cmp.name(), pairs.back().size()));
  }

  SalienceTable table;
  table.rows.resize(L * comparisons.size());
  parallel_for(table.rows.size(), [&](std::size_t task) {
    const std::size_t layer = task / comparisons.size();
    const std::size_t ci = task % comparisons.size();
    std::vector<double> a, b;
    for (const auto& p : pairs[ci]) {
      a.push_back(scored.scores.at(p.a)[layer]);
      b.push_back(scored.scores.at(p.b)[layer]);
    }
    SalienceRow row = make_salience_row(layer, scored.pooling, comparisons[ci], a, b, opts.paired);
    // Per-condition means over every retained record.
    std::map<Condition, std::vector<double>> per_cond;
    for (const auto& [key, by_cond] : index)
      for (const auto& [cond, id] : by_cond)
        if (!scored.exclusions.is_excluded(id)) per_cond[cond].push_back(scored.scores.at(id)[layer]);
    for (const auto& [cond, xs] : per_cond) {
      row.mu[cond] = mean(xs);
      row.n_mu[cond] = xs.size();
    }
    table.rows[task] = std::move(row);
  });
  table.peaks = find_peaks(table.rows);
  return table;
}

std::vector<SaliencePeak> find_peaks(const std::vector<SalienceRow>& rows) {
  std::vector<SaliencePeak> peaks;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : rows) {
    const auto it = slot.find(r.comparison);
    if (it == slot.end()) {
      slot.emplace(r.comparison, peaks.size());
      peaks.push_back({r.comparison, r.layer, r.result.delta});
      continue;
    }
    auto& p = peaks[it->second];
    if (r.result.delta > p.delta || (r.result.delta == p.delta && r.layer < p.layer)) {
      p.layer = r.layer;
      p.delta = r.result.delta;
    }
  }
  return peaks;
}

std::vector<double> layer_deltas(const SalienceTable& table, std::string_view comparison) {
  std::vector<double> out;
  for (const auto& r : table.rows) {
    if (r.comparison != comparison) continue;
    if (out.size() <= r.layer) out.resize(r.layer + 1, std::numeric_limits<double>::quiet_NaN());
    out[r.layer] = r.result.delta;
  }
  if (out.empty()) throw ValidationError("salience table has no rows for " + std::string(comparison));
  return out;
}

// ---- attention -----------------------------------------------------------

std::optional<double> attention_mass(const PromptActivations& rec, std::size_t layer, std::size_t head,
                                     std::span<const TokenSpan> spans) {
  if (!rec.has_attention()) throw ValidationError("instance '" + rec.instance_id + "' has no attention tensor");
  if (layer >= rec.attn_layers || head >= rec.heads)
    throw ValidationError(fmt::format("attention index ({}, {}) out of range", layer, head));
  const std::size_t t = rec.num_tokens();
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t q = rec.response_start; q < t; ++q) {
    if (!rec.pad_mask[q]) continue;
    double s = 0.0;
    for (const auto& sp : spans)
      for (std::size_t k = sp.begin; k < sp.end && k < t; ++k)
        if (rec.pad_mask[k]) s += rec.attn(layer, head, q, k);
    total += s;
    ++rows;
  }
  if (rows == 0) return std::nullopt;
  return total / static_cast<double>(rows);
}

AttentionTable attention_table(const ActivationBundle& bundle, const ConceptLibrary& lib, const AnalysisOptions& opts) {
  const std::size_t La = bundle.manifest.attn_layers, H = bundle.manifest.heads;
  const auto ids = prompt_ids(bundle);
  if (La == 0 || H == 0 || std::none_of(ids.begin(), ids.end(), [&](const std::string& id) {
        return bundle.at(id).has_attention();
      }))
    throw ValidationError("bundle has no attention tensors");

  const auto excl = summarize_exclusions(bundle, lib);
  const auto index = index_prompts(ids);

  struct RecordMass {
    bool has_spans = false;
    std::vector<std::optional<double>> mass;  // [layer * H + head]
  };
  std::map<std::string, RecordMass> masses;
  std::set<Condition> needed;
  for (const auto& cmp : kAttentionComparisons) {
    needed.insert(cmp.a);
    needed.insert(cmp.b);
  }
  std::vector<std::string> todo;
  for (const auto& id : ids)
    if (needed.count(parse_instance_id(id)->condition)) todo.push_back(id);
  std::vector<RecordMass> computed(todo.size());
  parallel_for(todo.size(), [&](std::size_t i) {
    const auto& rec = bundle.at(todo[i]);
    if (!rec.has_attention()) throw ValidationError("missing attention tensor for instance '" + rec.instance_id + "'");
    const auto spans = spans_for(rec, lib.at(parse_instance_id(rec.instance_id)->concept_id));
    RecordMass& rm = computed[i];
    rm.has_spans = !spans.empty();
    rm.mass.resize(La * H);
    for (std::size_t l = 0; l < La; ++l)
      for (std::size_t h = 0; h < H; ++h) rm.mass[l * H + h] = attention_mass(rec, l, h, spans);
  });
  for (std::size_t i = 0; i < todo.size(); ++i) masses.emplace(todo[i], std::move(computed[i]));

  AttentionTable table;
  table.granularity = opts.attention_granularity;
  for (const auto& cmp : kAttentionComparisons) {
    const std::string name = cmp.name();
    // unit -> per-(layer, head) mass for each side
    std::vector<std::string> unit_concept;
    std::vector<std::vector<double>> va, vb;
    std::size_t dropped = 0;
    for (const auto& p : matched_pairs(index, cmp, excl)) {
      const RecordMass& ma = masses.at(p.a);
      const RecordMass& mb = masses.at(p.b);
      const bool complete = std::all_of(ma.mass.begin(), ma.mass.end(), [](auto& x) { return x.has_value(); }) &&
                            std::all_of(mb.mass.begin(), mb.mass.end(), [](auto& x) { return x.has_value(); });
      if ((!ma.has_spans && !mb.has_spans) || !complete) {
        ++dropped;
        continue;
      }
      std::vector<double> a(La * H), b(La * H);
      for (std::size_t k = 0; k < La * H; ++k) {
        a[k] = *ma.mass[k];
        b[k] = *mb.mass[k];
      }
      unit_concept.push_back(p.key.first);
      va.push_back(std::move(a));
      vb.push_back(std::move(b));
    }
    table.dropped_pairs[name] = dropped;

    if (opts.attention_granularity == Granularity::per_concept) {
      std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> acc;
      std::map<std::string, std::size_t> count;
      for (std::size_t u = 0; u < va.size(); ++u) {
        auto& [sa, sb] = acc[unit_concept[u]];
        sa.resize(La * H, 0.0);
        sb.resize(La * H, 0.0);
        for (std::size_t k = 0; k < La * H; ++k) {
          sa[k] += va[u][k];
          sb[k] += vb[u][k];
        }
        ++count[unit_concept[u]];
      }
      va.clear();
      vb.clear();
      for (auto& [c, ab] : acc) {
        const double n = static_cast<double>(count[c]);
        for (auto& x : ab.first) x /= n;
        for (auto& x : ab.second) x /= n;
        va.push_back(std::move(ab.first));
        vb.push_back(std::move(ab.second));
      }
    }
    table.n_units[name] = va.size();
    if (va.size() < 2)
      throw DegenerateDataError(fmt::format("insufficient attention units for {}: {}", name, va.size()));

    // Row specs: aggregate, each layer, each head.
    struct Spec {
      AttentionScope scope;
      std::size_t layer;
      std::optional<std::size_t> head;
    };
    std::vector<Spec> specs = {{AttentionScope::aggregate, 0, std::nullopt}};
    for (std::size_t l = 0; l < La; ++l) specs.push_back({AttentionScope::layer, l, std::nullopt});
    for (std::size_t l = 0; l < La; ++l)
      for (std::size_t h = 0; h < H; ++h) specs.push_back({AttentionScope::head, l, h});

    std::vector<AttentionRow> rows(specs.size());
    parallel_for(specs.size(), [&](std::size_t si) {
      const Spec& s = specs[si];
      std::vector<double> a(va.size()), b(vb.size());
      for (std::size_t u = 0; u < va.size(); ++u) {
        auto reduce = [&](const std::vector<double>& v) {
          if (s.scope == AttentionScope::head) return v[s.layer * H + *s.head];
          double sum = 0.0;
          std::size_t n = 0;
          for (std::size_t l = 0; l < La; ++l) {
            if (s.scope == AttentionScope::layer && l != s.layer) continue;
            for (std::size_t h = 0; h < H; ++h, ++n) sum += v[l * H + h];
          }
          return sum / static_cast<double>(n);
        };
        a[u] = reduce(va[u]);
        b[u] = reduce(vb[u]);
      }
      rows[si] = {s.scope, s.layer, s.head, name, paired_compare(a, b, opts.paired)};
    });

    for (std::size_t l = 0; l < La; ++l) {
      TopHead top{name, l, std::nullopt, 0.0, 0};
      for (const auto& r : rows) {
        if (r.scope != AttentionScope::head || r.layer != l) continue;
        if (r.result.ci_low > 0.0) ++top.n_ci_positive;
        if (r.result.delta > 0.0 && (!top.head || r.result.delta > top.delta)) {
          top.head = r.head;
          top.delta = r.result.delta;
        }
      }
      table.top_heads.push_back(top);
    }
    for (auto& r : rows) table.rows.push_back(std::move(r));
  }
  return table;
}

// ---- leakage -------------------------------------------------------------

LeakageTable leakage_table(const ActivationBundle& bundle, const ConceptLibrary& lib, const Embedder& embedder,
                           const AnalysisOptions& opts) {
  const auto ids = prompt_ids(bundle);
  const auto excl = summarize_exclusions(bundle, lib);

  std::set<std::string> concepts;
  for (const auto& id : ids) concepts.insert(parse_instance_id(id)->concept_id);
  std::map<std::string, std::vector<float>> centroid;
  for (const auto& c : concepts) {
    const ConceptEntry& e = lib.at(c);
    std::vector<double> sum;
    std::size_t n = 0;
    auto add = [&](const std::string& key, const std::string& text) {
      const Embedding emb = embedder.embed(key, text);
      if (sum.empty()) sum.assign(emb.v.size(), 0.0);
      if (emb.v.size() != sum.size()) throw Error("embedder returned vectors of differing dimension");
      for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += emb.v[d];
      ++n;
    };
    for (std::size_t i = 0; i < e.aliases.size(); ++i) add(fmt::format("{}|alias|{}", c, i), e.aliases[i]);
    for (std::size_t i = 0; i < e.positive.size(); ++i) add(fmt::format("{}|pos|{}", c, i), e.positive[i]);
    std::vector<float> v(sum.size());
    for (std::size_t d = 0; d < sum.size(); ++d) v[d] = static_cast<float>(sum[d] / static_cast<double>(n));
    centroid.emplace(c, std::move(v));
  }

  std::vector<double> sims(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto& rec = bundle.at(ids[i]);
    if (rec.generation_text.find_first_not_of(" \t\r\n\f\v") == std::string::npos)
      throw ValidationError("empty generation for instance '" + rec.instance_id + "'");
    const Embedding emb = embedder.embed(rec.instance_id, rec.generation_text);
    sims[i] = cosine(emb.v, centroid.at(parse_instance_id(rec.instance_id)->concept_id));
  });
  std::map<std::string, double> sim_of;
  for (std::size_t i = 0; i < ids.size(); ++i) sim_of.emplace(ids[i], sims[i]);

  LeakageTable table;
  table.embedder = embedder.provenance();
  for (Condition cond : kConditions) {
    LeakageRow row;
    row.condition = cond;
    std::vector<double> xs;
    for (const auto& id : ids) {
      const auto key = parse_instance_id(id);
      if (key->condition != cond) continue;
      ++row.n_total;
      if (excl.is_excluded(id)) continue;
      xs.push_back(sim_of.at(id));
      if (detect_leak(bundle.at(id).generation_text, lib.at(key->concept_id).aliases)) ++row.n_leaked;
    }
    row.n_retained = xs.size();
    if (row.n_total == 0) continue;
    if (!xs.empty()) {
      row.mean_similarity = mean(xs);
      row.sem = xs.size() >= 2 ? sample_sd(xs) / std::sqrt(static_cast<double>(xs.size())) : 0.0;
      row.ci = mean_interval(xs, opts.paired);
      row.explicit_leak_rate = static_cast<double>(row.n_leaked) / static_cast<double>(row.n_retained);
    } else {
      row.mean_similarity = row.sem = std::numeric_limits<double>::quiet_NaN();
      row.ci = {row.mean_similarity, row.mean_similarity};
      row.explicit_leak_rate = std::numeric_limits<double>::quiet_NaN();
    }
    table.rows.push_back(row);
  }

  const auto index = index_prompts(ids);
  for (const auto& cmp : kLeakageComparisons) {
    std::vector<double> a, b;
    for (const auto& p : matched_pairs(index, cmp, excl)) {
      a.push_back(sim_of.at(p.a));
      b.push_back(sim_of.at(p.b));
    }
    if (a.size() < 2) continue;
    table.pairwise.push_back({cmp.name(), paired_compare(a, b, opts.paired)});
  }
  return table;
}

// ---- regions, ordering, cross-model -------------------------------------

RegionCounts region_partition(std::size_t num_layers) {
  if (num_layers < 3) throw ValidationError(fmt::format("region partition needs >= 3 layers, got {}", num_layers));
  std::size_t edge = (num_layers + 2) / 3;
  while (2 * edge + 1 > num_layers) --edge;
  return {edge, num_layers - 2 * edge, edge};
}

std::vector<RegionSummary> region_summary(std::span<const double> deltas, std::string_view model,
                                          const PairedOptions& opts) {
  const RegionCounts rc = region_partition(deltas.size());
  const std::array<std::size_t, 3> sizes = {rc.early, rc.middle, rc.late};
  std::vector<RegionSummary> out;
  std::size_t start = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto slice = deltas.subspan(start, sizes[r]);
    RegionSummary s;
    s.model = std::string(model);
    s.region = kRegionNames[r];
    s.first_layer = start;
    s.n_layers = sizes[r];
    s.mean_delta = mean(slice);
    s.ci = mean_interval(slice, opts);
    s.range_low = *std::min_element(slice.begin(), slice.end());
    s.range_high = *std::max_element(slice.begin(), slice.end());
    out.push_back(s);
    start += sizes[r];
  }
  return out;
}

OrderingResult condition_ordering(const ScoredBundle& scored, const ConceptLibrary&, const AnalysisOptions& opts) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : scored.scores) ids.push_back(id);
  const auto index = index_prompts(ids);
  const std::size_t L = scored.num_states;

  OrderingResult out;
  for (Condition cond : {Condition::abs, Condition::ind, Condition::sup, Condition::men}) {
    std::vector<double> xs;
    for (const auto& id : ids) {
      if (parse_instance_id(id)->condition != cond || scored.exclusions.is_excluded(id)) continue;
      const auto& s = scored.scores.at(id);
      xs.insert(xs.end(), s.begin(), s.end());
    }
    if (!xs.empty()) out.mean_score[cond] = mean(xs);
  }

  PairedOptions po = opts.paired;
  po.permutation = true;
  out.pairs.resize(kOrderingComparisons.size());
  parallel_for(kOrderingComparisons.size(), [&](std::size_t ci) {
    const Comparison& cmp = kOrderingComparisons[ci];
    std::vector<double> a, b;
    for (const auto& p : matched_pairs(index, cmp, scored.exclusions)) {
      const auto& sa = scored.scores.at(p.a);
      const auto& sb = scored.scores.at(p.b);
      for (std::size_t l = 0; l < L; ++l) {
        a.push_back(sa[l]);
        b.push_back(sb[l]);
      }
    }
    out.pairs[ci] = {cmp.name(), paired_compare(a, b, po)};
  });
  return out;
}

CrossModelResult crossmodel(const std::vector<CrossModelInput>& inputs, const PairedOptions& opts) {
  CrossModelResult out;
  std::vector<double> values;
  std::vector<std::string> fa, fb;
  for (const auto& in : inputs) {
    const auto regions = region_summary(in.layer_deltas, in.model, opts);
    for (const auto& r : regions) {
      out.regions.push_back(r);
      for (std::size_t l = r.first_layer; l < r.first_layer + r.n_layers; ++l) {
        values.push_back(in.layer_deltas[l]);
        fa.push_back(in.model);
        fb.push_back(r.region);
      }
    }
  }
  std::set<std::string> models(fa.begin(), fa.end());
  if (models.size() >= 2) out.interaction = ols_interaction_f(values, fa, fb);
  return out;
}

}  // namespace sprobe
