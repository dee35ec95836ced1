#pragma once

#include <string>
#include <string_view>

namespace nameprobe {

// ASCII letters/digits, plus any byte of a multi-byte UTF-8 sequence so that
// accented names stay whole words.
inline bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

inline std::string_view trim_left(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && is_space(s[i])) ++i;
  return s.substr(i);
}

inline std::string_view trim(std::string_view s) {
  s = trim_left(s);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ascii_lower(a[i]) != ascii_lower(b[i])) return false;
  }
  return true;
}

// Case-insensitive whole-word search; returns npos when absent. A match must
// not be preceded or followed by a word byte.
inline std::size_t find_whole_word_ci(std::string_view text, std::string_view word, std::size_t from = 0) {
  if (word.empty() || text.size() < word.size()) return std::string_view::npos;
  for (std::size_t i = from; i + word.size() <= text.size(); ++i) {
    if (!iequals(text.substr(i, word.size()), word)) continue;
    const bool left_ok = i == 0 || !is_word_byte(static_cast<unsigned char>(text[i - 1]));
    const std::size_t end = i + word.size();
    const bool right_ok = end == text.size() || !is_word_byte(static_cast<unsigned char>(text[end]));
    if (left_ok && right_ok) return i;
  }
  return std::string_view::npos;
}

inline bool contains_whole_word_ci(std::string_view text, std::string_view word) {
  return find_whole_word_ci(text, word) != std::string_view::npos;
}

}  // namespace nameprobe
