#pragma once

// Table assembly and writers. Every table is written as {name}.csv and
// {name}.json; both carry the hash of the configuration that produced them.
// Numbers are printed with 6 significant digits; missing values are empty.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sprobe/analyses.hpp"

namespace sprobe {

using Cell = nlohmann::ordered_json;  // number, string or null

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

// Short hex digest of a canonical JSON config.
std::string config_hash(const nlohmann::json& config);

std::string to_csv(const Table& t, std::string_view hash);
nlohmann::ordered_json to_json(const Table& t, std::string_view hash);
void write_table(const std::filesystem::path& dir, const Table& t, std::string_view hash);

Table probe_quality_table(const ScoredBundle& scored);
Table probe_quality_summary(const ScoredBundle& scored);
Table exclusion_table(const ExclusionSummary& s);
Table salience_rows_table(const SalienceTable& s);
Table salience_peaks_table(const SalienceTable& s);
Table salience_plot_table(const SalienceTable& s);
Table attention_rows_table(const AttentionTable& a);
Table attention_top_heads_table(const AttentionTable& a);
Table leakage_rows_table(const LeakageTable& l);
Table leakage_pairwise_table(const LeakageTable& l);
Table region_table(const std::vector<RegionSummary>& regions);
Table ordering_table(const std::string& model, const OrderingResult& o);
Table interaction_table(const FTest& f);

// Minimal line chart: one polyline per series over the layer axis.
std::string svg_line_chart(std::string_view title, const std::map<std::string, std::vector<double>>& series);

}  // namespace sprobe
