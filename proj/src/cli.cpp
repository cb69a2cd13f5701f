#include "sprobe/cli.hpp"

#include <iostream>
#include <memory>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "sprobe/activation_store.hpp"
#include "sprobe/analyses.hpp"
#include "sprobe/concept_library.hpp"
#include "sprobe/embedding.hpp"
#include "sprobe/error.hpp"
#include "sprobe/prompt_factory.hpp"
#include "sprobe/report.hpp"
#include "sprobe/synth_backend.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct RunConfig {
  std::string library;
  std::vector<std::string> bundles;
  std::string pooling = "target_tokens";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  double l2 = 1e-2;
  std::size_t n_boot = 10000;
  std::size_t n_perm = 10000;
  std::uint64_t stat_seed = 0;
  std::string out = "out";
  std::string embedder = "fallback";
  std::string granularity = "pair";
  std::string comparison = "ind-abs";
  std::string synth_config;
};

// Outputs of one command plus what goes into its reproducibility manifest.
class Run {
 public:
  Run(std::string command, const RunConfig& rc) : command_(std::move(command)), dir_(rc.out) {}

  void input(const std::string& name, const std::string& sha) { inputs_[name] = sha; }
  void setting(const std::string& key, nlohmann::json v) { settings_[key] = std::move(v); }

  std::string hash() const { return config_hash(config()); }

  void table(const Table& t) {
    write_table(dir_, t, hash());
    outputs_.push_back(t.name + ".csv");
    outputs_.push_back(t.name + ".json");
  }
  void file(const std::string& name, const std::string& text) {
    write_text_file(dir_ / name, text);
    outputs_.push_back(name);
  }

  void finish() const {
    ojson m;
    m["tool"] = "sprobe";
    m["tool_version"] = kToolVersion;
    m["command"] = command_;
    m["config"] = ojson::parse(config().dump());
    m["config_hash"] = hash();
    m["format_versions"] = {{"bundle", kBundleFormatVersion}, {"embedding", kEmbeddingFormatVersion}};
    ojson out = ojson::object();
    for (const auto& name : outputs_) out[name] = sha256_file(dir_ / name);
    m["outputs"] = out;
    write_text_file(dir_ / "run_manifest.json", m.dump(1) + "\n");
  }

  const fs::path& dir() const { return dir_; }

 private:
  nlohmann::json config() const {
    nlohmann::json c = settings_;
    c["command"] = command_;
    c["inputs"] = inputs_;
    return c;
  }

  std::string command_;
  fs::path dir_;
  nlohmann::json settings_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::object();
  std::vector<std::string> outputs_;
};

void require_exists(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(fmt::format("missing required flag for {}", what));
  if (!fs::exists(path)) throw UsageError(fmt::format("{} not found: {}", what, path));
}

ConceptLibrary resolve_library(const RunConfig& rc, const fs::path& bundle_dir, Run& run,
                               const std::string& key = "library_sha256") {
  fs::path path = rc.library;
  if (path.empty()) {
    path = bundle_dir / "library.json";
    if (!fs::exists(path)) throw UsageError("no --library given and the bundle has no library.json");
  }
  require_exists(path.string(), "library");
  run.input(key, sha256_file(path));
  return load_library(path);
}

ActivationBundle load_bundle(const std::string& dir, Run& run, const std::string& key = "bundle_manifest_sha256") {
  require_exists(dir, "bundle");
  ActivationBundle b = read_bundle(dir);
  run.input(key, sha256_file(fs::path(dir) / "manifest.json"));
  return b;
}

AnalysisOptions analysis_options(const RunConfig& rc, Run& run) {
  AnalysisOptions o;
  o.pooling = parse_pooling(rc.pooling);
  o.seeds = rc.seeds;
  o.probe.l2 = rc.l2;
  o.paired.n_boot = rc.n_boot;
  o.paired.n_perm = rc.n_perm;
  o.paired.seed = rc.stat_seed;
  o.attention_granularity = parse_granularity(rc.granularity);
  if (rc.n_boot == 0 || rc.n_perm == 0) throw UsageError("--n-boot and --n-perm must be positive");
  if (!(rc.l2 > 0)) throw UsageError("--l2 must be positive");
  run.setting("pooling", rc.pooling);
  run.setting("seeds", rc.seeds);
  run.setting("l2", rc.l2);
  run.setting("n_boot", rc.n_boot);
  run.setting("n_perm", rc.n_perm);
  run.setting("stat_seed", rc.stat_seed);
  run.setting("split_fraction", o.probe.split_fraction);
  run.setting("tol", o.probe.tol);
  run.setting("max_iter", o.probe.max_iter);
  return o;
}

void write_probe_outputs(Run& run, const ScoredBundle& scored) {
  run.table(probe_quality_table(scored));
  run.table(probe_quality_summary(scored));
  ojson models = ojson::array();
  for (const auto& m : scored.models) models.push_back(ojson::parse(probe_to_json(m).dump()));
  run.file("probes.json", models.dump(1) + "\n");
}

void write_salience_outputs(Run& run, const SalienceTable& table, const ScoredBundle& scored) {
  run.table(salience_rows_table(table));
  run.table(salience_peaks_table(table));
  run.table(salience_plot_table(table));
  run.table(exclusion_table(scored.exclusions));
  std::map<std::string, std::vector<double>> series;
  for (const auto& cmp : kSalienceComparisons) series[cmp.name()] = layer_deltas(table, cmp.name());
  run.file("salience.svg", svg_line_chart(fmt::format("salience by layer ({})", to_string(scored.pooling)), series));
}

void write_attention_outputs(Run& run, const AttentionTable& a) {
  run.table(attention_rows_table(a));
  run.table(attention_top_heads_table(a));
}

void write_leakage_outputs(Run& run, const LeakageTable& l) {
  run.table(leakage_rows_table(l));
  run.table(leakage_pairwise_table(l));
}

int cmd_validate(const RunConfig& rc, std::ostream& out) {
  require_exists(rc.library, "library");
  const ConceptLibrary lib = parse_library(read_text_file(rc.library));
  const ValidationReport report = validate_library(lib);
  const auto& c = lib.counts();
  out << fmt::format(
      "concepts {}\naliases {}\nindirect_descriptions {}\ncontexts {}\npositive {}\nnegative {}\nnegative_hard {}\n"
      "total_examples {}\n",
      c.concepts, c.aliases, c.indirect_descriptions, c.contexts, c.positive, c.negative, c.negative_hard,
      c.total_examples());
  if (!report.ok()) {
    out << "INVALID\n" << report.to_string();
    return kExitValidation;
  }
  out << "OK\n";
  return kExitOk;
}

int cmd_prompts(const RunConfig& rc, std::ostream& out) {
  Run run("prompts", rc);
  require_exists(rc.library, "library");
  run.input("library_sha256", sha256_file(rc.library));
  const ConceptLibrary lib = load_library(rc.library);
  const auto prompts = instantiate_prompts(lib);
  run.file("prompt_grid.json", prompt_grid_to_json(prompts) + "\n");
  run.file("probe_texts.json", probe_texts_to_json(probe_texts(lib)) + "\n");
  run.finish();
  out << fmt::format("{} prompt instances written to {}\n", prompts.size(), run.dir().string());
  return kExitOk;
}

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  Run run("synth", rc);
  SynthConfig cfg;
  if (!rc.synth_config.empty()) {
    require_exists(rc.synth_config, "synth config");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(rc.synth_config));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("synth config is not valid JSON: ") + e.what());
    }
    cfg = synth_config_from_json(j);
  }
  ConceptLibrary lib;
  if (!rc.library.empty()) {
    require_exists(rc.library, "library");
    run.input("library_sha256", sha256_file(rc.library));
    lib = load_library(rc.library);
  } else {
    lib = synthetic_library(cfg.synthetic_library.value_or(SyntheticLibrarySpec{}));
    const auto report = validate_library(lib);
    if (!report.ok()) throw LibraryValidationError(report);
  }
  run.setting("synth_config", synth_config_to_json(cfg));
  const auto prompts = instantiate_prompts(lib);
  const ActivationBundle bundle = generate_bundle(lib, prompts, cfg);
  write_bundle(bundle, run.dir());
  run.file("library.json", serialize_library(lib) + "\n");
  run.file("prompt_grid.json", prompt_grid_to_json(prompts) + "\n");
  run.file("probe_texts.json", probe_texts_to_json(probe_texts(lib)) + "\n");
  run.finish();
  out << fmt::format("{} records written to {}\n", bundle.records.size(), run.dir().string());
  return kExitOk;
}

int cmd_probe(const RunConfig& rc, std::ostream& out) {
  Run run("probe", rc);
  if (rc.bundles.size() != 1) throw UsageError("probe takes exactly one --bundle");
  const auto bundle = load_bundle(rc.bundles[0], run);
  const auto lib = resolve_library(rc, rc.bundles[0], run);
  const auto opts = analysis_options(rc, run);
  const auto scored = score_bundle(bundle, lib, opts);
  write_probe_outputs(run, scored);
  run.finish();
  out << fmt::format("{} probes trained\n", scored.models.size());
  return kExitOk;
}

int cmd_salience(const RunConfig& rc, std::ostream& out) {
  Run run("salience", rc);
  if (rc.bundles.size() != 1) throw UsageError("salience takes exactly one --bundle");
  const auto bundle = load_bundle(rc.bundles[0], run);
  const auto lib = resolve_library(rc, rc.bundles[0], run);
  const auto opts = analysis_options(rc, run);
  const auto scored = score_bundle(bundle, lib, opts);
  const auto table = salience_table(scored, lib, opts);
  write_probe_outputs(run, scored);
  write_salience_outputs(run, table, scored);
  run.finish();
  for (const auto& p : table.peaks)
    out << fmt::format("{} peak layer {} delta {}\n", p.comparison, p.layer, format_number(p.delta));
  return kExitOk;
}

int cmd_attention(const RunConfig& rc, std::ostream& out) {
  Run run("attention", rc);
  if (rc.bundles.size() != 1) throw UsageError("attention takes exactly one --bundle");
  const auto bundle = load_bundle(rc.bundles[0], run);
  const auto lib = resolve_library(rc, rc.bundles[0], run);
  const auto opts = analysis_options(rc, run);
  run.setting("granularity", rc.granularity);
  const auto table = attention_table(bundle, lib, opts);
  write_attention_outputs(run, table);
  run.finish();
  out << fmt::format("{} attention rows\n", table.rows.size());
  return kExitOk;
}

int cmd_leakage(const RunConfig& rc, std::ostream& out) {
  Run run("leakage", rc);
  if (rc.bundles.size() != 1) throw UsageError("leakage takes exactly one --bundle");
  const auto bundle = load_bundle(rc.bundles[0], run);
  const auto lib = resolve_library(rc, rc.bundles[0], run);
  const auto opts = analysis_options(rc, run);
  const auto embedder = make_embedder(rc.embedder);
  run.setting("embedder", embedder->provenance());
  const auto table = leakage_table(bundle, lib, *embedder, opts);
  write_leakage_outputs(run, table);
  run.finish();
  for (const auto& r : table.rows)
    out << fmt::format("{} similarity {} leak rate {} (n {})\n", to_string(r.condition),
                       format_number(r.mean_similarity), format_number(r.explicit_leak_rate), r.n_retained);
  return kExitOk;
}

int cmd_crossmodel(const RunConfig& rc, std::ostream& out) {
  Run run("crossmodel", rc);
  if (rc.bundles.empty()) throw UsageError("crossmodel needs at least one --bundle");
  const auto opts = analysis_options(rc, run);
  const Comparison cmp = parse_comparison(rc.comparison);
  run.setting("comparison", cmp.name());

  std::vector<CrossModelInput> inputs;
  std::set<std::string> names;
  Table ordering{"ordering", {}, {}};
  for (std::size_t i = 0; i < rc.bundles.size(); ++i) {
    const auto bundle = load_bundle(rc.bundles[i], run, fmt::format("bundle_{}_manifest_sha256", i));
    const auto lib = resolve_library(rc, rc.bundles[i], run, fmt::format("library_{}_sha256", i));
    std::string model = bundle.manifest.model_name;
    if (!names.insert(model).second) {
      model = fmt::format("{}#{}", model, i);
      names.insert(model);
    }
    const auto scored = score_bundle(bundle, lib, opts);
    const auto table = salience_table(scored, lib, opts, {cmp});
    inputs.push_back({model, layer_deltas(table, cmp.name())});
    const Table t = ordering_table(model, condition_ordering(scored, lib, opts));
    if (ordering.columns.empty()) ordering.columns = t.columns;
    for (const auto& row : t.rows) ordering.add(row);
  }
  const auto result = crossmodel(inputs, opts.paired);
  run.table(region_table(result.regions));
  run.table(ordering);
  if (result.interaction) run.table(interaction_table(*result.interaction));
  run.finish();
  for (const auto& r : result.regions)
    out << fmt::format("{} {} mean delta {}\n", r.model, r.region, format_number(r.mean_delta));
  if (result.interaction)
    out << fmt::format("interaction F({}, {}) = {} p = {}\n", result.interaction->df1, result.interaction->df2,
                       format_number(result.interaction->f), format_number(result.interaction->p));
  return kExitOk;
}

int cmd_report(const RunConfig& rc, std::ostream& out) {
  Run run("report", rc);
  if (rc.bundles.size() != 1) throw UsageError("report takes exactly one --bundle");
  const auto bundle = load_bundle(rc.bundles[0], run);
  const auto lib = resolve_library(rc, rc.bundles[0], run);
  const auto opts = analysis_options(rc, run);
  const auto embedder = make_embedder(rc.embedder);
  run.setting("embedder", embedder->provenance());
  run.setting("granularity", rc.granularity);
  const Comparison cmp = parse_comparison(rc.comparison);
  run.setting("comparison", cmp.name());

  const auto scored = score_bundle(bundle, lib, opts);
  const auto sal = salience_table(scored, lib, opts);
  write_probe_outputs(run, scored);
  write_salience_outputs(run, sal, scored);
  if (bundle.manifest.attn_layers > 0 && bundle.manifest.heads > 0)
    write_attention_outputs(run, attention_table(bundle, lib, opts));
  write_leakage_outputs(run, leakage_table(bundle, lib, *embedder, opts));
  if (bundle.manifest.num_states >= 3)
    run.table(region_table(region_summary(layer_deltas(sal, cmp.name()), bundle.manifest.model_name, opts.paired)));
  run.table(ordering_table(bundle.manifest.model_name, condition_ordering(scored, lib, opts)));
  run.finish();
  out << fmt::format("report written to {}\n", run.dir().string());
  return kExitOk;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sprobe: suppression-salience probing toolkit"};
  app.require_subcommand(1);
  RunConfig rc;

  auto add_common = [&](CLI::App* sub, bool library, bool bundle, bool analysis) {
    if (library) sub->add_option("--library", rc.library, "concept library JSON");
    if (bundle) sub->add_option("--bundle", rc.bundles, "activation bundle directory");
    if (analysis) {
      sub->add_option("--pooling", rc.pooling, "last_nonpad | mean_nonpad | target_tokens")
          ->check(CLI::IsMember({"last_nonpad", "mean_nonpad", "target_tokens"}));
      sub->add_option("--seeds", rc.seeds, "probe split seeds")->delimiter(',');
      sub->add_option("--l2", rc.l2, "probe L2 penalty");
      sub->add_option("--n-boot", rc.n_boot, "bootstrap resamples");
      sub->add_option("--n-perm", rc.n_perm, "Monte Carlo sign flips");
      sub->add_option("--stat-seed", rc.stat_seed, "seed for bootstrap and permutation draws");
    }
    sub->add_option("--out", rc.out, "output directory");
  };

  auto* validate = app.add_subcommand("validate", "validate a concept library");
  validate->add_option("--library", rc.library, "concept library JSON")->required();
  auto* prompts = app.add_subcommand("prompts", "emit the prompt grid");
  add_common(prompts, true, false, false);
  auto* synth = app.add_subcommand("synth", "generate a synthetic bundle");
  add_common(synth, true, false, false);
  synth->add_option("--config", rc.synth_config, "synth config JSON");
  auto* probe = app.add_subcommand("probe", "train and evaluate probes");
  add_common(probe, true, true, true);
  auto* salience = app.add_subcommand("salience", "suppression salience tables");
  add_common(salience, true, true, true);
  auto* attention = app.add_subcommand("attention", "attention routing tables");
  add_common(attention, true, true, true);
  attention->add_option("--granularity", rc.granularity, "pair | concept")->check(CLI::IsMember({"pair", "concept"}));
  auto* leakage = app.add_subcommand("leakage", "behavioral leakage tables");
  add_common(leakage, true, true, true);
  leakage->add_option("--embedder", rc.embedder, "fallback | file:<path>");
  auto* cross = app.add_subcommand("crossmodel", "region summary, ordering and interaction F over bundles");
  add_common(cross, true, true, true);
  cross->add_option("--comparison", rc.comparison, "salience comparison for regions");
  auto* report = app.add_subcommand("report", "all tables for one bundle");
  add_common(report, true, true, true);
  report->add_option("--embedder", rc.embedder, "fallback | file:<path>");
  report->add_option("--granularity", rc.granularity, "pair | concept")->check(CLI::IsMember({"pair", "concept"}));
  report->add_option("--comparison", rc.comparison, "salience comparison for regions");
  prompts->get_option("--library")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(rc, out);
    if (prompts->parsed()) return cmd_prompts(rc, out);
    if (synth->parsed()) return cmd_synth(rc, out);
    if (probe->parsed()) return cmd_probe(rc, out);
    if (salience->parsed()) return cmd_salience(rc, out);
    if (attention->parsed()) return cmd_attention(rc, out);
    if (leakage->parsed()) return cmd_leakage(rc, out);
    if (cross->parsed()) return cmd_crossmodel(rc, out);
    if (report->parsed()) return cmd_report(rc, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "validation failed: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "validation failed: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace sprobe
