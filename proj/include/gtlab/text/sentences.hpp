#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace gtlab::text {

// Tokens that end in a period without ending a sentence. Matched
// case-insensitively against the word immediately before the period.
inline constexpr std::array<std::string_view, 44> kAbbreviations{
    "dr",   "mr",   "mrs",  "ms",   "prof", "sr",   "jr",   "st",   "vs",   "etc", "e.g",
    "i.e",  "approx", "no", "fig",  "pt",   "pts",  "hx",   "dx",   "tx",   "rx",  "sx",
    "fx",   "b.i.d", "t.i.d", "q.i.d", "q.d", "p.o", "p.r",  "q.h.s", "h.s", "a.m", "p.m",
    "mg",   "ml",   "mcg",  "inc",  "co",   "dept", "univ", "ave",  "blvd", "apt", "ste"};

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline bool is_abbreviation(std::string_view word) {
  std::string lower;
  for (char c : word) {
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  while (!lower.empty() && (lower.front() == '(' || lower.front() == '"' || lower.front() == '\'')) {
    lower.erase(lower.begin());
  }
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lower) != kAbbreviations.end();
}

// "1." / "12." list markers.
inline bool is_list_marker(std::string_view word) {
  return !word.empty() && word.size() <= 2 &&
         std::all_of(word.begin(), word.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace detail

// Rule-based boundaries: a terminator [.!?] (plus closing quotes/brackets)
// followed by whitespace or end of text, unless the period closes a listed
// abbreviation or a short list number, or the next word starts lowercase.
// A newline always ends a sentence. Gaps between spans are whitespace only.
inline std::vector<SentenceSpan> sentence_spans(std::string_view text) {
  std::vector<SentenceSpan> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && detail::is_space(text[b])) ++b;
    while (e > b && detail::is_space(text[e - 1])) --e;
    if (b < e) {
      out.push_back({b, e});
    }
  };
  std::size_t start = 0;
  while (i < n) {
    const char c = text[i];
    if (c == '\n') {
      emit(start, i);
      start = i + 1;
      ++i;
      continue;
    }
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i + 1;
      while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
      while (j < n && (text[j] == '"' || text[j] == '\'' || text[j] == ')' || text[j] == ']')) ++j;
      if (j < n && !detail::is_space(text[j])) {
        i = j;
        continue;
      }
      bool boundary = true;
      if (c == '.') {
        std::size_t w = i;
        while (w > start && !detail::is_space(text[w - 1])) --w;
        const auto word = text.substr(w, i - w);
        if (detail::is_abbreviation(word) || detail::is_list_marker(word)) {
          boundary = false;
        }
        std::size_t k = j;
        while (k < n && (text[k] == ' ' || text[k] == '\t')) ++k;
        if (k < n && std::islower(static_cast<unsigned char>(text[k]))) {
          boundary = false;
        }
      }
      if (boundary) {
        emit(start, j);
        start = j;
      }
      i = j;
      continue;
    }
    ++i;
  }
  emit(start, n);
  return out;
}

inline std::vector<std::string> sentence_split(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& s : sentence_spans(text)) {
    out.emplace_back(text.substr(s.begin, s.end - s.begin));
  }
  return out;
}

}  // namespace gtlab::text
