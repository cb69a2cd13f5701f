#include "sprobe/text_match.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "sprobe/error.hpp"

namespace sprobe {

namespace {

const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) throw Error("ICU NFC normalizer unavailable");
  return *n;
}

bool is_word_cp(UChar32 c) { return c == '_' || u_isalnum(c); }

bool is_space_cp(UChar32 c) { return u_isUWhiteSpace(c); }

// Code point starting at byte i (or -1 past the end).
UChar32 cp_at(std::string_view s, std::size_t i, std::size_t* next = nullptr) {
  if (i >= s.size()) {
    if (next) *next = i;
    return -1;
  }
  int32_t pos = static_cast<int32_t>(i);
  UChar32 c;
  U8_NEXT(reinterpret_cast<const uint8_t*>(s.data()), pos, static_cast<int32_t>(s.size()), c);
  if (next) *next = static_cast<std::size_t>(pos);
  return c;
}

// Code point ending right before byte i (or -1 at the start).
UChar32 cp_before(std::string_view s, std::size_t i) {
  if (i == 0) return -1;
  int32_t pos = static_cast<int32_t>(i);
  UChar32 c;
  U8_PREV(reinterpret_cast<const uint8_t*>(s.data()), 0, pos, c);
  return c;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t next;
    UChar32 c = cp_at(s, i, &next);
    if (is_space_cp(c)) {
      i = next;
      continue;
    }
    const std::size_t start = i;
    while (i < s.size()) {
      c = cp_at(s, i, &next);
      if (is_space_cp(c)) break;
      i = next;
    }
    out.push_back(s.substr(start, i - start));
  }
  return out;
}

bool boundary_after(std::string_view s, std::size_t i) {
  const UChar32 c = cp_at(s, i);
  return c < 0 || !is_word_cp(c);
}

}  // namespace

std::string normalize_text(std::string_view utf8) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString normalized = nfc().normalize(u, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  normalized.foldCase();
  // Folding can produce decomposed sequences; normalize once more.
  normalized = nfc().normalize(normalized, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::vector<ByteRange> find_alias_occurrences(std::string_view text, std::string_view alias) {
  std::vector<ByteRange> out;
  const auto words = split_ws(alias);
  if (words.empty()) return out;
  const std::string_view first = words.front();

  std::size_t search_from = 0;
  while (search_from < text.size()) {
    const std::size_t start = text.find(first, search_from);
    if (start == std::string_view::npos) break;
    auto advance = [&] {
      std::size_t next;
      cp_at(text, start, &next);
      search_from = next;
    };
    const UChar32 prev = cp_before(text, start);
    if (prev >= 0 && is_word_cp(prev)) {
      advance();
      continue;
    }
    std::size_t pos = start + first.size();
    bool ok = true;
    for (std::size_t w = 1; w < words.size() && ok; ++w) {
      // At least one whitespace code point between alias words.
      std::size_t ws_end = pos;
      for (;;) {
        std::size_t next;
        const UChar32 c = cp_at(text, ws_end, &next);
        if (c < 0 || !is_space_cp(c)) break;
        ws_end = next;
      }
      if (ws_end == pos || text.substr(ws_end, words[w].size()) != words[w]) {
        ok = false;
        break;
      }
      pos = ws_end + words[w].size();
    }
    if (!ok) {
      advance();
      continue;
    }
    std::size_t end = std::string_view::npos;
    if (pos < text.size() && text[pos] == 's' && boundary_after(text, pos + 1)) {
      end = pos + 1;
    } else if (boundary_after(text, pos)) {
      end = pos;
    }
    if (end == std::string_view::npos) {
      advance();
      continue;
    }
    out.push_back({start, end});
    search_from = end;
  }
  return out;
}

bool matches_alias(std::string_view text, std::string_view alias) {
  const std::string t = normalize_text(text);
  const std::string a = normalize_text(alias);
  return !find_alias_occurrences(t, a).empty();
}

bool detect_leak(std::string_view generation, std::span<const std::string> aliases) {
  const std::string t = normalize_text(generation);
  for (const auto& alias : aliases) {
    if (!find_alias_occurrences(t, normalize_text(alias)).empty()) return true;
  }
  return false;
}

std::vector<std::string> words_of(std::string_view text) {
  const std::string t = normalize_text(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < t.size()) {
    std::size_t next;
    UChar32 c = cp_at(t, i, &next);
    if (!is_word_cp(c)) {
      i = next;
      continue;
    }
    const std::size_t start = i;
    while (i < t.size()) {
      c = cp_at(t, i, &next);
      if (!is_word_cp(c)) break;
      i = next;
    }
    out.emplace_back(t.substr(start, i - start));
  }
  return out;
}

}  // namespace sprobe
