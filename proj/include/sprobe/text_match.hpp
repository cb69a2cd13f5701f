#pragma once

// Alias matching shared by library validation, target-span search and leak
// detection.
//
// Both sides are NFC-normalized and case-folded. An alias matches when its
// words appear in order, separated by whitespace, with a word boundary on
// each side; the final alias word may carry one trailing "s" ("bear" matches
// "bears" but not "bearing"). Word characters are Unicode letters, digits
// and '_'.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sprobe {

// NFC + full Unicode case folding. Invalid UTF-8 is replaced, not rejected.
std::string normalize_text(std::string_view utf8);

struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

// All non-overlapping matches of one alias in already-normalized text, left
// to right. Both arguments must come from normalize_text.
std::vector<ByteRange> find_alias_occurrences(std::string_view normalized_text,
                                              std::string_view normalized_alias);

bool matches_alias(std::string_view text, std::string_view alias);

// Explicit leak: true iff any alias occurs in the generation.
bool detect_leak(std::string_view generation, std::span<const std::string> aliases);

// Normalized words of a string (maximal runs of word characters).
std::vector<std::string> words_of(std::string_view text);

}  // namespace sprobe
