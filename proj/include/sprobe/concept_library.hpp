#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sprobe/error.hpp"

namespace sprobe {

// One prohibited concept and its lexical, semantic and contextual views.
struct ConceptEntry {
  std::string id;
  std::vector<std::string> aliases;
  std::vector<std::string> indirect_descriptions;
  std::vector<std::string> contexts;
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  std::vector<std::string> negative_hard;

  // First list element; used in rendered instructions.
  const std::string& canonical_alias() const { return aliases.at(0); }
  const std::string& canonical_indirect() const { return indirect_descriptions.at(0); }

  friend bool operator==(const ConceptEntry&, const ConceptEntry&) = default;
};

struct LibraryCounts {
  std::size_t concepts = 0;
  std::size_t aliases = 0;
  std::size_t indirect_descriptions = 0;
  std::size_t contexts = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t negative_hard = 0;

  // Structured example texts: positive + negative + negative_hard.
  std::size_t total_examples() const { return positive + negative + negative_hard; }

  friend bool operator==(const LibraryCounts&, const LibraryCounts&) = default;
};

LibraryCounts tally(const std::vector<ConceptEntry>& entries);

// Entries in file order. A structurally parsed library may still hold
// invariant violations (including duplicate ids); load_library only returns
// libraries that validate cleanly.
class ConceptLibrary {
 public:
  ConceptLibrary() = default;
  explicit ConceptLibrary(std::vector<ConceptEntry> entries);

  const std::vector<ConceptEntry>& entries() const { return entries_; }
  const LibraryCounts& counts() const { return counts_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Nullptr when absent; first match when ids are duplicated.
  const ConceptEntry* find(std::string_view id) const;
  const ConceptEntry& at(std::string_view id) const;

  // Ids sorted ascending.
  std::vector<std::string> sorted_ids() const;

 private:
  std::vector<ConceptEntry> entries_;
  LibraryCounts counts_;
};

struct Violation {
  std::string kind;        // e.g. "alias-in-negative", "duplicate-id"
  std::string concept_id;  // empty for library-level violations
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view kind) const;
  std::string to_string() const;
};

class LibraryValidationError : public ValidationError {
 public:
  explicit LibraryValidationError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

// Structural parse of the library JSON text. Throws ParseError on malformed
// JSON, non-object values, missing or unknown keys and non-string items.
ConceptLibrary parse_library(std::string_view json_text);

// Every invariant violation; pure, never throws for a parsed library.
ValidationReport validate_library(const ConceptLibrary& lib);

// parse_library + validate_library; throws LibraryValidationError.
ConceptLibrary load_library(const std::filesystem::path& path);

std::string serialize_library(const ConceptLibrary& lib);

}  // namespace sprobe
