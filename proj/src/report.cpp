#include "sprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "sprobe/error.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

namespace {

Cell num(double x) { return std::isnan(x) ? Cell(nullptr) : Cell(x); }
Cell num(const std::optional<double>& x) { return x ? num(*x) : Cell(nullptr); }
Cell count(std::size_t n) { return Cell(n); }

std::string csv_field(const Cell& c) {
  std::string s;
  if (c.is_null()) return {};
  if (c.is_number_float()) s = format_number(c.get<double>());
  else if (c.is_number()) s = c.dump();
  else if (c.is_boolean()) s = c.get<bool>() ? "true" : "false";
  else s = c.get<std::string>();
  if (s.find_first_of(",\"\n\r") != std::string::npos) {
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  }
  return s;
}

Cell json_cell(const Cell& c) {
  if (!c.is_number_float()) return c;
  const double x = c.get<double>();
  if (std::isinf(x)) return Cell(format_number(x));
  return Cell(std::stod(format_number(x)));
}

std::string flags_of(const PairedResult& r) {
  std::string s;
  for (const auto& f : r.flags) s += (s.empty() ? "" : ";") + f;
  return s;
}

const std::vector<std::string> kPairedColumns = {"n", "mean_a", "mean_b", "delta", "ci_low", "ci_high", "cohens_d",
                                                 "t", "t_p", "wilcoxon_w", "wilcoxon_p", "perm_p", "flags"};

std::vector<Cell> paired_cells(const PairedResult& r) {
  return {count(r.n), num(r.mean_a), num(r.mean_b), num(r.delta), num(r.ci_low), num(r.ci_high), num(r.cohens_d),
          num(r.t_stat), num(r.t_p), num(r.wilcoxon_stat), num(r.wilcoxon_p), num(r.perm_p), Cell(flags_of(r))};
}

std::vector<std::string> with_paired(std::vector<std::string> head) {
  head.insert(head.end(), kPairedColumns.begin(), kPairedColumns.end());
  return head;
}

}  // namespace

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size())
    throw Error(fmt::format("table '{}' row has {} cells, expected {}", name, row.size(), columns.size()));
  rows.push_back(std::move(row));
}

std::string config_hash(const nlohmann::json& config) { return sha256_hex(config.dump()).substr(0, 16); }

std::string to_csv(const Table& t, std::string_view hash) {
  std::string out;
  for (const auto& c : t.columns) out += c + ",";
  out += "config_hash\n";
  for (const auto& row : t.rows) {
    for (const auto& c : row) out += csv_field(c) + ",";
    out += std::string(hash) + "\n";
  }
  return out;
}

nlohmann::ordered_json to_json(const Table& t, std::string_view hash) {
  nlohmann::ordered_json j;
  j["table"] = t.name;
  j["config_hash"] = hash;
  j["columns"] = t.columns;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json r;
    for (std::size_t i = 0; i < row.size(); ++i) r[t.columns[i]] = json_cell(row[i]);
    j["rows"].push_back(std::move(r));
  }
  return j;
}

void write_table(const std::filesystem::path& dir, const Table& t, std::string_view hash) {
  write_text_file(dir / (t.name + ".csv"), to_csv(t, hash));
  write_text_file(dir / (t.name + ".json"), to_json(t, hash).dump(1) + "\n");
}

Table probe_quality_table(const ScoredBundle& scored) {
  Table t{"probe_quality", {"pooling", "concept_id", "layer", "seed", "accuracy", "auc", "f1", "f1_undefined",
                            "n_train", "n_test", "iterations"}, {}};
  for (const auto& q : scored.quality)
    t.add({Cell(std::string(to_string(scored.pooling))), Cell(q.concept_id), count(q.layer), Cell(q.seed),
           num(q.metrics.accuracy), num(q.metrics.auc), num(q.metrics.f1), Cell(q.metrics.f1_undefined),
           count(q.metrics.n_train), count(q.metrics.n_test), count(q.iterations)});
  return t;
}

Table probe_quality_summary(const ScoredBundle& scored) {
  Table t{"probe_quality_summary", {"pooling", "accuracy", "auc", "f1", "n_probes", "n_pooling_fallbacks"}, {}};
  double acc = 0, auc = 0, f1 = 0;
  for (const auto& q : scored.quality) {
    acc += q.metrics.accuracy;
    auc += q.metrics.auc;
    f1 += q.metrics.f1;
  }
  const double n = static_cast<double>(scored.quality.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  t.add({Cell(std::string(to_string(scored.pooling))), num(n ? acc / n : nan), num(n ? auc / n : nan),
         num(n ? f1 / n : nan), count(scored.quality.size()), count(scored.pooling_fallbacks.size())});
  return t;
}

Table exclusion_table(const ExclusionSummary& s) {
  Table t{"exclusions", {"condition", "n_total", "n_retained", "n_excluded"}, {}};
  for (const auto& [c, k] : s.by_condition)
    t.add({Cell(std::string(to_string(c))), count(k.total), count(k.retained), count(k.excluded)});
  return t;
}

Table salience_rows_table(const SalienceTable& s) {
  std::vector<std::string> head = {"layer", "pooling", "comparison"};
  for (Condition c : kConditions) {
    head.push_back(fmt::format("mu_{}", to_string(c)));
    head.push_back(fmt::format("n_{}", to_string(c)));
  }
  Table t{"salience", with_paired(head), {}};
  for (const auto& r : s.rows) {
    std::vector<Cell> row = {count(r.layer), Cell(std::string(to_string(r.pooling))), Cell(r.comparison)};
    for (Condition c : kConditions) {
      const auto mu = r.mu.find(c);
      const auto n = r.n_mu.find(c);
      row.push_back(mu == r.mu.end() ? Cell(nullptr) : num(mu->second));
      row.push_back(n == r.n_mu.end() ? Cell(nullptr) : count(n->second));
    }
    for (auto& c : paired_cells(r.result)) row.push_back(std::move(c));
    t.add(std::move(row));
  }
  return t;
}

Table salience_peaks_table(const SalienceTable& s) {
  Table t{"salience_peaks", {"comparison", "peak_layer", "peak_delta"}, {}};
  for (const auto& p : s.peaks) t.add({Cell(p.comparison), count(p.layer), num(p.delta)});
  return t;
}

Table salience_plot_table(const SalienceTable& s) {
  Table t{"salience_plot", {"layer", "comparison", "delta", "ci_low", "ci_high"}, {}};
  for (const auto& r : s.rows)
    t.add({count(r.layer), Cell(r.comparison), num(r.result.delta), num(r.result.ci_low), num(r.result.ci_high)});
  return t;
}

Table attention_rows_table(const AttentionTable& a) {
  Table t{"attention", with_paired({"scope", "layer", "head", "comparison", "granularity"}), {}};
  for (const auto& r : a.rows) {
    std::vector<Cell> row = {Cell(std::string(to_string(r.scope))),
                             r.scope == AttentionScope::aggregate ? Cell(nullptr) : count(r.layer),
                             r.head ? count(*r.head) : Cell(nullptr), Cell(r.comparison),
                             Cell(std::string(to_string(a.granularity)))};
    for (auto& c : paired_cells(r.result)) row.push_back(std::move(c));
    t.add(std::move(row));
  }
  return t;
}

Table attention_top_heads_table(const AttentionTable& a) {
  Table t{"attention_top_heads", {"comparison", "layer", "top_head", "top_delta", "n_heads_ci_positive",
                                  "dropped_pairs", "n_units"}, {}};
  for (const auto& h : a.top_heads)
    t.add({Cell(h.comparison), count(h.layer), h.head ? count(*h.head) : Cell(nullptr),
           h.head ? num(h.delta) : Cell(nullptr), count(h.n_ci_positive), count(a.dropped_pairs.at(h.comparison)),
           count(a.n_units.at(h.comparison))});
  return t;
}

Table leakage_rows_table(const LeakageTable& l) {
  Table t{"leakage", {"condition", "mean_similarity", "sem", "ci_low", "ci_high", "explicit_leak_rate", "n_leaked",
                      "n_retained", "n_total", "embedder"}, {}};
  for (const auto& r : l.rows)
    t.add({Cell(std::string(to_string(r.condition))), num(r.mean_similarity), num(r.sem), num(r.ci.low),
           num(r.ci.high), num(r.explicit_leak_rate), count(r.n_leaked), count(r.n_retained), count(r.n_total),
           Cell(l.embedder)});
  return t;
}

Table leakage_pairwise_table(const LeakageTable& l) {
  Table t{"leakage_pairwise", with_paired({"comparison"}), {}};
  for (const auto& p : l.pairwise) {
    std::vector<Cell> row = {Cell(p.comparison)};
    for (auto& c : paired_cells(p.result)) row.push_back(std::move(c));
    t.add(std::move(row));
  }
  return t;
}

Table region_table(const std::vector<RegionSummary>& regions) {
  Table t{"regions", {"model", "region", "first_layer", "n_layers", "mean_delta", "ci_low", "ci_high", "range_low",
                      "range_high"}, {}};
  for (const auto& r : regions)
    t.add({Cell(r.model), Cell(r.region), count(r.first_layer), count(r.n_layers), num(r.mean_delta), num(r.ci.low),
           num(r.ci.high), num(r.range_low), num(r.range_high)});
  return t;
}

Table ordering_table(const std::string& model, const OrderingResult& o) {
  std::vector<std::string> head = {"model", "comparison"};
  for (Condition c : {Condition::abs, Condition::ind, Condition::sup, Condition::men})
    head.push_back(fmt::format("mean_{}", to_string(c)));
  Table t{"ordering", with_paired(head), {}};
  for (const auto& p : o.pairs) {
    std::vector<Cell> row = {Cell(model), Cell(p.comparison)};
    for (Condition c : {Condition::abs, Condition::ind, Condition::sup, Condition::men}) {
      const auto it = o.mean_score.find(c);
      row.push_back(it == o.mean_score.end() ? Cell(nullptr) : num(it->second));
    }
    for (auto& c : paired_cells(p.result)) row.push_back(std::move(c));
    t.add(std::move(row));
  }
  return t;
}

Table interaction_table(const FTest& f) {
  Table t{"interaction_f", {"f", "df1", "df2", "p", "rss_full", "rss_additive"}, {}};
  t.add({num(f.f), num(f.df1), num(f.df2), num(f.p), num(f.rss_full), num(f.rss_additive)});
  return t;
}

std::string svg_line_chart(std::string_view title, const std::map<std::string, std::vector<double>>& series) {
  constexpr double W = 640, H = 360, left = 56, right = 150, top = 36, bottom = 40;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 0;
  for (const auto& [_, ys] : series) {
    n = std::max(n, ys.size());
    for (double y : ys)
      if (std::isfinite(y)) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  auto py = [&](double y) { return top + ph * (hi - y) / (hi - lo); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n"
      "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n"
      "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n"
      "<text x=\"4\" y=\"{:.1f}\">{}</text>\n<text x=\"4\" y=\"{:.1f}\">{}</text>\n"
      "<text x=\"{:.1f}\" y=\"{}\">layer</text>\n",
      W, H, left, title, left, top, left, top + ph, left, top + ph, left + pw, top + ph, py(hi) + 4, format_number(hi),
      py(lo), format_number(lo), left + pw / 2, H - 8);
  if (lo < 0 && hi > 0)
    s += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"#999\" stroke-dasharray=\"4\"/>\n",
                     left, py(0), left + pw, py(0));
  std::size_t k = 0;
  for (const auto& [name, ys] : series) {
    const char* color = colors[k % std::size(colors)];
    std::string pts;
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (std::isfinite(ys[i])) pts += fmt::format("{:.2f},{:.2f} ", px(i), py(ys[i]));
    s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, pts);
    s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", left + pw + 10, top + 14 * (k + 1), color, name);
    ++k;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace sprobe
