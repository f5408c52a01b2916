#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "tropeforge/tropes.hpp"
#include "tropeforge/util.hpp"

namespace tropeforge {

namespace {

// Words whose trailing period is not a sentence boundary. Compared
// case-insensitively against the token ending at the period.
constexpr std::array<std::string_view, 22> kAbbreviations = {
    "e.g.", "i.e.", "etc.", "cf.",  "vs.",  "dr.",   "mr.",   "mrs.",
    "ms.",  "prof.", "st.", "no.",  "inc.", "ltd.",  "jr.",   "sr.",
    "u.s.", "u.k.",  "u.n.", "approx.", "fig.", "al.",
};

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_closing_quote(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

// UTF-8 aware only as far as the typographic quotes the corpus uses.
bool starts_with_opening_quote(std::string_view rest) {
  if (rest.empty()) return false;
  if (rest[0] == '"' || rest[0] == '\'' || rest[0] == '(') return true;
  return rest.starts_with("“") || rest.starts_with("‘");
}

bool token_is_abbreviation(std::string_view text, size_t period_pos) {
  size_t start = period_pos;
  while (start > 0 && !std::isspace(static_cast<unsigned char>(text[start - 1]))) --start;
  const std::string token = to_lower(text.substr(start, period_pos - start + 1));
  for (const auto& abbrev : kAbbreviations) {
    if (token == abbrev) return true;
  }
  return false;
}

bool has_letter(std::string_view s) {
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c))) return true;
  }
  return false;
}

// Splits one newline-free line into sentences.
void split_line(std::string_view line, std::vector<std::string>& out) {
  size_t sentence_start = 0;
  size_t i = 0;
  while (i < line.size()) {
    if (!is_terminator(line[i])) {
      ++i;
      continue;
    }
    if (line[i] == '.' && token_is_abbreviation(line, i)) {
      ++i;
      continue;
    }
    // Consume the full terminator run ("...", "?!") and trailing quotes.
    size_t end = i;
    while (end + 1 < line.size() && is_terminator(line[end + 1])) ++end;
    // An ellipsis marks hesitation, not a boundary, unless it ends the line.
    if (end - i + 1 >= 3 && line[i] == '.' && line[end] == '.' && end + 1 < line.size()) {
      bool all_dots = true;
      for (size_t p = i; p <= end; ++p) all_dots = all_dots && line[p] == '.';
      if (all_dots) {
        i = end + 1;
        continue;
      }
    }
    size_t after = end + 1;
    while (after < line.size() && is_closing_quote(line[after])) ++after;
    // Boundary only before whitespace + capital/digit/quote/hashtag.
    size_t next = after;
    while (next < line.size() && std::isspace(static_cast<unsigned char>(line[next]))) ++next;
    const bool had_space = next > after;
    const std::string_view rest = line.substr(next);
    const bool next_starts_sentence =
        !rest.empty() && (std::isupper(static_cast<unsigned char>(rest[0])) ||
                          std::isdigit(static_cast<unsigned char>(rest[0])) ||
                          rest[0] == '#' || starts_with_opening_quote(rest));
    if (next >= line.size()) {
      out.emplace_back(line.substr(sentence_start, after - sentence_start));
      sentence_start = line.size();
      i = line.size();
      return;
    }
    if (had_space && next_starts_sentence) {
      out.emplace_back(line.substr(sentence_start, after - sentence_start));
      sentence_start = next;
      i = next;
    } else {
      i = after;
    }
  }
  if (sentence_start < line.size()) {
    out.emplace_back(line.substr(sentence_start));
  }
}

}  // namespace

std::vector<SentenceUnit> segment(const std::string& record_id, const std::string& raw_text) {
  std::vector<std::string> sentences;
  for (const auto& line : split_lines(raw_text)) {
    split_line(line, sentences);
  }
  std::vector<SentenceUnit> units;
  int index = 0;
  for (const auto& s : sentences) {
    std::string text = trim(s);
    if (text.empty() || !has_letter(text)) continue;
    units.push_back(SentenceUnit{.record_id = record_id, .sentence_index = index++,
                                 .text = std::move(text)});
  }
  return units;
}

}  // namespace tropeforge
