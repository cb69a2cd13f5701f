#include "sprobe/concept_library.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sprobe/text_match.hpp"
#include "sprobe/util.hpp"

namespace sprobe {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kFieldNames = {
    "aliases", "indirect_descriptions", "contexts", "positive", "negative", "negative_hard"};

std::vector<std::string>& field(ConceptEntry& e, std::string_view name) {
  if (name == "aliases") return e.aliases;
  if (name == "indirect_descriptions") return e.indirect_descriptions;
  if (name == "contexts") return e.contexts;
  if (name == "positive") return e.positive;
  if (name == "negative") return e.negative;
  return e.negative_hard;
}

const std::vector<std::string>& field(const ConceptEntry& e, std::string_view name) {
  return field(const_cast<ConceptEntry&>(e), name);
}

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

ConceptEntry entry_from_json(const std::string& id, const json& value) {
  if (!value.is_object()) throw ParseError("concept '" + id + "': value must be an object");
  ConceptEntry e;
  e.id = id;
  for (const auto& [key, _] : value.items()) {
    if (std::find(kFieldNames.begin(), kFieldNames.end(), key) == kFieldNames.end())
      throw ParseError("concept '" + id + "': unknown key '" + key + "'");
  }
  for (auto name : kFieldNames) {
    const auto it = value.find(std::string(name));
    if (it == value.end())
      throw ParseError("concept '" + id + "': missing key '" + std::string(name) + "'");
    if (!it->is_array())
      throw ParseError("concept '" + id + "': '" + std::string(name) + "' must be a list");
    auto& dst = field(e, name);
    for (const auto& item : *it) {
      if (!item.is_string())
        throw ParseError("concept '" + id + "': '" + std::string(name) + "' must hold strings");
      dst.push_back(item.get<std::string>());
    }
  }
  return e;
}

void add(ValidationReport& r, std::string kind, const std::string& id, std::string detail) {
  r.violations.push_back({std::move(kind), id, std::move(detail)});
}

}  // namespace

LibraryCounts tally(const std::vector<ConceptEntry>& entries) {
  LibraryCounts c;
  c.concepts = entries.size();
  for (const auto& e : entries) {
    c.aliases += e.aliases.size();
    c.indirect_descriptions += e.indirect_descriptions.size();
    c.contexts += e.contexts.size();
    c.positive += e.positive.size();
    c.negative += e.negative.size();
    c.negative_hard += e.negative_hard.size();
  }
  return c;
}

ConceptLibrary::ConceptLibrary(std::vector<ConceptEntry> entries)
    : entries_(std::move(entries)), counts_(tally(entries_)) {}

const ConceptEntry* ConceptLibrary::find(std::string_view id) const {
  for (const auto& e : entries_)
    if (e.id == id) return &e;
  return nullptr;
}

const ConceptEntry& ConceptLibrary::at(std::string_view id) const {
  const ConceptEntry* e = find(id);
  if (!e) throw ValidationError("unknown concept id '" + std::string(id) + "'");
  return *e;
}

std::vector<std::string> ConceptLibrary::sorted_ids() const {
  std::vector<std::string> ids;
  ids.reserve(entries_.size());
  for (const auto& e : entries_) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool ValidationReport::has(std::string_view kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.kind == kind; });
}

std::string ValidationReport::to_string() const {
  std::ostringstream out;
  for (const auto& v : violations) {
    out << v.kind;
    if (!v.concept_id.empty()) out << " [" << v.concept_id << "]";
    if (!v.detail.empty()) out << ": " << v.detail;
    out << '\n';
  }
  return out.str();
}

LibraryValidationError::LibraryValidationError(ValidationReport report)
    : ValidationError("library validation failed:\n" + report.to_string()),
      report_(std::move(report)) {}

ConceptLibrary parse_library(std::string_view json_text) {
  // The callback sees every top-level member, so duplicated ids survive
  // parsing and can be reported by validation.
  std::vector<std::pair<std::string, json>> members;
  std::string pending_key;
  auto cb = [&](int depth, json::parse_event_t ev, json& parsed) {
    if (depth != 1) return true;
    switch (ev) {
      case json::parse_event_t::key:
        pending_key = parsed.get<std::string>();
        break;
      case json::parse_event_t::object_end:
      case json::parse_event_t::array_end:
      case json::parse_event_t::value:
        members.emplace_back(pending_key, parsed);
        break;
      default:
        break;
    }
    return true;
  };
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end(), cb);
  } catch (const json::exception& e) {
    throw ParseError(std::string("library is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("library must be a JSON object keyed by concept id");

  std::vector<ConceptEntry> entries;
  entries.reserve(members.size());
  for (const auto& [id, value] : members) entries.push_back(entry_from_json(id, value));
  return ConceptLibrary(std::move(entries));
}

ValidationReport validate_library(const ConceptLibrary& lib) {
  ValidationReport r;
  if (lib.empty()) add(r, "empty-library", "", "library has no concepts");

  std::set<std::string> seen;
  for (const auto& e : lib.entries()) {
    if (trim(e.id).empty()) add(r, "blank-id", e.id, "concept id is blank");
    // Ids are embedded in "|"-separated instance ids and file names.
    if (e.id.find_first_of("|/\\") != std::string::npos)
      add(r, "invalid-id", e.id, "concept id may not contain '|', '/' or '\\'");
    if (!seen.insert(e.id).second) add(r, "duplicate-id", e.id, "concept id appears more than once");

    for (auto name : {"aliases", "indirect_descriptions", "contexts", "positive", "negative"}) {
      if (field(e, name).empty()) add(r, "empty-field", e.id, std::string(name) + " is empty");
    }
    if (e.positive.size() != e.negative.size()) {
      add(r, "unmatched-negatives", e.id,
          "positive has " + std::to_string(e.positive.size()) + " texts, negative has " +
              std::to_string(e.negative.size()));
    }
    for (auto name : kFieldNames) {
      std::set<std::string> uniq;
      for (const auto& s : field(e, name)) {
        if (trim(s).empty()) add(r, "blank-string", e.id, std::string(name) + " holds a blank string");
        if (!uniq.insert(s).second)
          add(r, "duplicate-string", e.id, std::string(name) + " repeats \"" + s + "\"");
      }
    }

    std::vector<std::string> norm_aliases;
    for (const auto& a : e.aliases)
      if (!trim(a).empty()) norm_aliases.push_back(normalize_text(a));
    auto check_free = [&](const std::vector<std::string>& texts, const char* kind, const char* name) {
      for (const auto& t : texts) {
        const std::string nt = normalize_text(t);
        for (std::size_t i = 0; i < norm_aliases.size(); ++i) {
          if (!find_alias_occurrences(nt, norm_aliases[i]).empty()) {
            add(r, kind, e.id, std::string(name) + " text \"" + t + "\" contains alias \"" + norm_aliases[i] + "\"");
            break;
          }
        }
      }
    };
    check_free(e.negative, "alias-in-negative", "negative");
    check_free(e.negative_hard, "alias-in-negative", "negative_hard");
    // Indirect suppression instructions must not name the concept.
    check_free(e.indirect_descriptions, "alias-in-indirect", "indirect_descriptions");
  }

  if (!(tally(lib.entries()) == lib.counts()))
    add(r, "counts-mismatch", "", "stored counts differ from recomputed tally");
  return r;
}

ConceptLibrary load_library(const std::filesystem::path& path) {
  ConceptLibrary lib = parse_library(read_text_file(path));
  ValidationReport report = validate_library(lib);
  if (!report.ok()) throw LibraryValidationError(std::move(report));
  return lib;
}

std::string serialize_library(const ConceptLibrary& lib) {
  nlohmann::ordered_json root = nlohmann::ordered_json::object();
  for (const auto& e : lib.entries()) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (auto name : kFieldNames) obj[std::string(name)] = field(e, name);
    root[e.id] = std::move(obj);
  }
  return root.dump(2);
}

}  // namespace sprobe
