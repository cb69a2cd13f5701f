#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <string>

#include "sprobe/concept_library.hpp"
#include "sprobe/text_match.hpp"
#include "sprobe/util.hpp"

using namespace sprobe;
namespace fs = std::filesystem;

namespace {

const fs::path kShipped = fs::path(SPROBE_DATA_DIR) / "concept_library.json";
const fs::path kAppendix = fs::path(SPROBE_TEST_DATA_DIR) / "white_bear_appendix.json";

std::string one_concept(const std::string& id, const std::string& positive, const std::string& negative) {
  return R"({")" + id + R"(": {"aliases": ["white bear"], "indirect_descriptions": ["large white mammal"],
    "contexts": ["Describe the ice."], "positive": [)" + positive + R"(], "negative": [)" + negative +
         R"(], "negative_hard": []}})";
}

}  // namespace

TEST_CASE("appendix listing loads") {
  const auto lib = load_library(kAppendix);
  REQUIRE(lib.size() == 1);
  const auto& e = lib.at("white_bear");
  CHECK(e.aliases == std::vector<std::string>{"white bear", "polar bear", "arctic bear"});
  CHECK(e.indirect_descriptions.size() == 2);
  CHECK(e.indirect_descriptions[0] == "large white mammal in arctic regions");
  CHECK(e.contexts.size() == 2);
  CHECK(lib.counts().total_examples() == 6);
}

TEST_CASE("shipped library counts") {
  const auto lib = load_library(kShipped);
  const auto& c = lib.counts();
  CHECK(c.concepts == 17);
  CHECK(c.aliases == 113);
  CHECK(c.indirect_descriptions == 102);
  CHECK(c.contexts == 136);
  CHECK(c.positive == 408);
  CHECK(c.negative == 408);
  CHECK(c.negative_hard == 170);
  CHECK(c.total_examples() == 986);
  CHECK(validate_library(lib).ok());
}

TEST_CASE("every shipped positive leaks and every negative does not") {
  const auto lib = load_library(kShipped);
  for (const auto& e : lib.entries()) {
    for (const auto& t : e.positive) {
      INFO(e.id << ": " << t);
      CHECK(detect_leak(t, e.aliases));
    }
    for (const auto& t : e.negative) {
      INFO(e.id << ": " << t);
      CHECK_FALSE(detect_leak(t, e.aliases));
    }
  }
}

TEST_CASE("empty positive list names the concept") {
  const auto lib = parse_library(one_concept("white_bear", "", ""));
  const auto report = validate_library(lib);
  CHECK(report.has("empty-field"));
  const auto it = std::find_if(report.violations.begin(), report.violations.end(),
                               [](const Violation& v) { return v.kind == "empty-field"; });
  CHECK(it->concept_id == "white_bear");

  const fs::path tmp = fs::temp_directory_path() / "sprobe_empty_positive.json";
  write_text_file(tmp, one_concept("white_bear", "", ""));
  try {
    load_library(tmp);
    FAIL("expected a validation error");
  } catch (const LibraryValidationError& err) {
    CHECK(std::string(err.what()).find("white_bear") != std::string::npos);
  }
  fs::remove(tmp);
}

TEST_CASE("alias inside a negative text") {
  const auto lib = parse_library(one_concept("white_bear", R"("A white bear.")", R"("Two white bears slept.")"));
  CHECK(validate_library(lib).has("alias-in-negative"));
}

TEST_CASE("duplicate ids are kept by the parser and reported") {
  const std::string body = R"({"aliases": ["cat"], "indirect_descriptions": ["small feline"],
    "contexts": ["Describe a house."], "positive": ["A cat sat."], "negative": ["A dog sat."], "negative_hard": []})";
  const auto lib = parse_library(R"({"cat": )" + body + R"(, "cat": )" + body + "}");
  CHECK(lib.size() == 2);
  CHECK(validate_library(lib).has("duplicate-id"));
}

TEST_CASE("structural errors are parse errors") {
  CHECK_THROWS_AS(parse_library("{not json"), ParseError);
  CHECK_THROWS_AS(parse_library(R"({"a": []})"), ParseError);
  CHECK_THROWS_AS(parse_library(R"({"a": {"aliases": [1]}})"), ParseError);
  CHECK_THROWS_AS(parse_library(R"({"a": {"aliases": [], "indirect_descriptions": [], "contexts": [],
    "positive": [], "negative": [], "negative_hard": [], "extra": []}})"),
                  ParseError);
}

TEST_CASE("serialize round-trips and tally ignores order") {
  const auto lib = load_library(kShipped);
  const auto again = parse_library(serialize_library(lib));
  CHECK(again.entries() == lib.entries());
  CHECK(again.counts() == lib.counts());

  auto reversed = lib.entries();
  std::reverse(reversed.begin(), reversed.end());
  CHECK(tally(reversed) == lib.counts());
}
