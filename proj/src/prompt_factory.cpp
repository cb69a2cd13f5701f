#include "sprobe/prompt_factory.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include <json.hpp>

#include "sprobe/text_match.hpp"

namespace sprobe {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::string_view> split_bar(std::string_view id) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto bar = id.find('|', start);
    parts.push_back(id.substr(start, bar == std::string_view::npos ? id.npos : bar - start));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return parts;
}

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Words compared without one trailing "s", mirroring the alias plural rule.
std::string stem(std::string w) {
  if (w.size() > 1 && w.back() == 's') w.pop_back();
  return w;
}

std::set<std::string> target_words(const ConceptEntry& e) {
  std::set<std::string> words;
  for (const auto& a : e.aliases)
    for (auto& w : words_of(a)) words.insert(stem(std::move(w)));
  for (const auto& d : e.indirect_descriptions)
    for (auto& w : words_of(d)) words.insert(stem(std::move(w)));
  return words;
}

bool overlaps(const std::set<std::string>& words, std::string_view candidate) {
  for (auto& w : words_of(candidate))
    if (words.count(stem(std::move(w)))) return true;
  return false;
}

std::string instruction_for(Condition c, const ConceptEntry& e, const CtrlChoice* ctrl) {
  switch (c) {
    case Condition::abs:
      return {};
    case Condition::men:
      return "Include " + e.canonical_alias() + " in the description.";
    case Condition::sup:
      return "Do not mention " + e.canonical_alias() + ".";
    case Condition::ind:
      return "Do not mention or allude to " + e.canonical_indirect() + ".";
    case Condition::ctrl:
      return "Do not mention " + ctrl->term + ".";
  }
  return {};
}

}  // namespace

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::abs: return "abs";
    case Condition::men: return "men";
    case Condition::sup: return "sup";
    case Condition::ind: return "ind";
    case Condition::ctrl: return "ctrl";
  }
  return "?";
}

Condition parse_condition(std::string_view tag) {
  for (Condition c : kConditions)
    if (to_string(c) == tag) return c;
  throw ParseError("unknown condition '" + std::string(tag) + "'");
}

std::string_view to_string(ExampleKind k) {
  switch (k) {
    case ExampleKind::positive: return "pos";
    case ExampleKind::negative: return "neg";
    case ExampleKind::negative_hard: return "hard";
  }
  return "?";
}

std::string make_instance_id(std::string_view concept_id, std::size_t context_index, Condition c) {
  std::string id(concept_id);
  id += '|';
  id += std::to_string(context_index);
  id += '|';
  id += to_string(c);
  return id;
}

std::optional<InstanceKey> parse_instance_id(std::string_view id) {
  const auto parts = split_bar(id);
  if (parts.size() != 3) return std::nullopt;
  const auto idx = parse_index(parts[1]);
  if (!idx) return std::nullopt;
  for (Condition c : kConditions)
    if (to_string(c) == parts[2]) return InstanceKey{std::string(parts[0]), *idx, c};
  return std::nullopt;
}

std::optional<ProbeTextKey> parse_probe_text_id(std::string_view id) {
  const auto parts = split_bar(id);
  if (parts.size() != 3) return std::nullopt;
  const auto idx = parse_index(parts[2]);
  if (!idx) return std::nullopt;
  for (ExampleKind k : {ExampleKind::positive, ExampleKind::negative, ExampleKind::negative_hard})
    if (to_string(k) == parts[1]) return ProbeTextKey{std::string(parts[0]), k, *idx};
  return std::nullopt;
}

CtrlChoice select_ctrl_concept(const ConceptLibrary& lib, std::string_view target,
                               const PromptOptions& options) {
  const ConceptEntry& t = lib.at(target);
  const auto words = target_words(t);

  for (const auto& d : options.distractors)
    if (!overlaps(words, d)) return {d, d};

  // Lexicographically next concept after the target, wrapping around.
  const auto ids = lib.sorted_ids();
  const auto pos = std::upper_bound(ids.begin(), ids.end(), std::string(target));
  std::vector<std::string> order(pos, ids.end());
  order.insert(order.end(), ids.begin(), pos);
  for (const auto& id : order) {
    if (id == target) continue;
    const ConceptEntry& cand = lib.at(id);
    const bool clash = std::any_of(cand.aliases.begin(), cand.aliases.end(),
                                   [&](const std::string& a) { return overlaps(words, a); });
    if (!clash) return {id, cand.canonical_alias()};
  }
  throw ValidationError("no-valid-distractor: every candidate overlaps concept '" +
                        std::string(target) + "'");
}

std::vector<PromptInstance> instantiate_prompts(const ConceptLibrary& lib,
                                                const PromptOptions& options) {
  std::vector<PromptInstance> out;
  for (const auto& id : lib.sorted_ids()) {
    const ConceptEntry& e = lib.at(id);
    const CtrlChoice ctrl = select_ctrl_concept(lib, id, options);
    for (std::size_t ci = 0; ci < e.contexts.size(); ++ci) {
      for (Condition c : kConditions) {
        PromptInstance p;
        p.instance_id = make_instance_id(id, ci, c);
        p.concept_id = id;
        p.context_index = ci;
        p.condition = c;
        p.context_text = e.contexts[ci];
        p.instruction_text = instruction_for(c, e, &ctrl);
        p.rendered_text =
            p.instruction_text.empty() ? p.context_text : p.context_text + " " + p.instruction_text;
        if (c == Condition::ctrl) p.ctrl_concept_id = ctrl.id;
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

std::vector<ProbeText> probe_texts(const ConceptLibrary& lib) {
  std::vector<ProbeText> out;
  for (const auto& id : lib.sorted_ids()) {
    const ConceptEntry& e = lib.at(id);
    auto emit = [&](ExampleKind kind, const std::vector<std::string>& texts) {
      for (std::size_t i = 0; i < texts.size(); ++i) {
        ProbeText t;
        t.instance_id = id + "|" + std::string(to_string(kind)) + "|" + std::to_string(i);
        t.concept_id = id;
        t.kind = kind;
        t.index = i;
        t.text = texts[i];
        out.push_back(std::move(t));
      }
    };
    emit(ExampleKind::positive, e.positive);
    emit(ExampleKind::negative, e.negative);
    emit(ExampleKind::negative_hard, e.negative_hard);
  }
  return out;
}

std::string prompt_grid_to_json(const std::vector<PromptInstance>& prompts) {
  json arr = json::array();
  for (const auto& p : prompts) {
    json j;
    j["instance_id"] = p.instance_id;
    j["concept_id"] = p.concept_id;
    j["context_index"] = p.context_index;
    j["condition"] = std::string(to_string(p.condition));
    j["context_text"] = p.context_text;
    j["instruction_text"] = p.instruction_text;
    j["rendered_text"] = p.rendered_text;
    j["ctrl_concept_id"] = p.ctrl_concept_id ? json(*p.ctrl_concept_id) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::vector<PromptInstance> prompt_grid_from_json(std::string_view json_text) {
  std::vector<PromptInstance> out;
  try {
    const json arr = json::parse(json_text);
    if (!arr.is_array()) throw ParseError("prompt grid must be a JSON list");
    for (const auto& j : arr) {
      PromptInstance p;
      p.instance_id = j.at("instance_id").get<std::string>();
      p.concept_id = j.at("concept_id").get<std::string>();
      p.context_index = j.at("context_index").get<std::size_t>();
      p.condition = parse_condition(j.at("condition").get<std::string>());
      p.context_text = j.at("context_text").get<std::string>();
      p.instruction_text = j.at("instruction_text").get<std::string>();
      p.rendered_text = j.at("rendered_text").get<std::string>();
      const auto& ctrl = j.at("ctrl_concept_id");
      if (!ctrl.is_null()) p.ctrl_concept_id = ctrl.get<std::string>();
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed prompt grid: ") + e.what());
  }
  return out;
}

std::string probe_texts_to_json(const std::vector<ProbeText>& texts) {
  json arr = json::array();
  for (const auto& t : texts) {
    json j;
    j["instance_id"] = t.instance_id;
    j["concept_id"] = t.concept_id;
    j["kind"] = std::string(to_string(t.kind));
    j["index"] = t.index;
    j["text"] = t.text;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::vector<ProbeText> probe_texts_from_json(std::string_view json_text) {
  std::vector<ProbeText> out;
  try {
    const json arr = json::parse(json_text);
    if (!arr.is_array()) throw ParseError("probe text file must be a JSON list");
    for (const auto& j : arr) {
      ProbeText t;
      t.instance_id = j.at("instance_id").get<std::string>();
      const auto key = parse_probe_text_id(t.instance_id);
      if (!key) throw ParseError("bad probe text id '" + t.instance_id + "'");
      t.concept_id = key->concept_id;
      t.kind = key->kind;
      t.index = key->index;
      t.text = j.at("text").get<std::string>();
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed probe text file: ") + e.what());
  }
  return out;
}

}  // namespace sprobe
