#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sprobe/concept_library.hpp"

namespace sprobe {

// The five matched prompting conditions, in canonical order.
enum class Condition { abs, men, sup, ind, ctrl };

inline constexpr std::array<Condition, 5> kConditions = {
    Condition::abs, Condition::men, Condition::sup, Condition::ind, Condition::ctrl};

std::string_view to_string(Condition c);
// Throws ParseError for anything outside the closed tag set.
Condition parse_condition(std::string_view tag);

struct PromptInstance {
  std::string instance_id;  // "{concept}|{context_index}|{condition}"
  std::string concept_id;
  std::size_t context_index = 0;
  Condition condition = Condition::abs;
  std::string context_text;
  std::string instruction_text;  // empty for abs
  std::string rendered_text;
  std::optional<std::string> ctrl_concept_id;  // distractor term or concept id; ctrl only

  friend bool operator==(const PromptInstance&, const PromptInstance&) = default;
};

struct PromptOptions {
  // Tried in order before falling back to other library concepts.
  std::vector<std::string> distractors = {"flowers"};
};

// What a ctrl instruction suppresses for one target concept.
struct CtrlChoice {
  std::string id;    // distractor term, or the chosen concept's id
  std::string term;  // text placed in "Do not mention {term}."
};

std::string make_instance_id(std::string_view concept_id, std::size_t context_index, Condition c);

struct InstanceKey {
  std::string concept_id;
  std::size_t context_index = 0;
  Condition condition = Condition::abs;
};
// nullopt for ids that are not prompt instances (e.g. probe-training texts).
std::optional<InstanceKey> parse_instance_id(std::string_view id);

// Throws ValidationError("no-valid-distractor") when every candidate shares a
// word with the target's aliases or indirect descriptions.
CtrlChoice select_ctrl_concept(const ConceptLibrary& lib, std::string_view target,
                               const PromptOptions& options = {});

std::vector<PromptInstance> instantiate_prompts(const ConceptLibrary& lib,
                                                const PromptOptions& options = {});

// Library example texts that probes are trained on.
enum class ExampleKind { positive, negative, negative_hard };

std::string_view to_string(ExampleKind k);

struct ProbeText {
  std::string instance_id;  // "{concept}|pos|{i}", "{concept}|neg|{i}", "{concept}|hard|{i}"
  std::string concept_id;
  ExampleKind kind = ExampleKind::positive;
  std::size_t index = 0;
  std::string text;
};

struct ProbeTextKey {
  std::string concept_id;
  ExampleKind kind = ExampleKind::positive;
  std::size_t index = 0;
};
std::optional<ProbeTextKey> parse_probe_text_id(std::string_view id);

// Sorted by concept id, then kind, then index.
std::vector<ProbeText> probe_texts(const ConceptLibrary& lib);

// Prompt grid file: a JSON list of PromptInstance records.
std::string prompt_grid_to_json(const std::vector<PromptInstance>& prompts);
std::vector<PromptInstance> prompt_grid_from_json(std::string_view json_text);

std::string probe_texts_to_json(const std::vector<ProbeText>& texts);
std::vector<ProbeText> probe_texts_from_json(std::string_view json_text);

}  // namespace sprobe
