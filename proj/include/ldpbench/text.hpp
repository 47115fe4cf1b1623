#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ldpbench {

// Deterministic word tokenizer: lowercases and splits on whitespace and
// punctuation. Handles UTF-8 by treating ASCII separators plus the common
// Unicode punctuation blocks as boundaries; all other code points are word
// characters. Word counts can therefore differ slightly from external
// tokenizers, which is acceptable for the size/length covariates here.

namespace detail {

inline bool is_ascii_separator(std::uint32_t cp) {
  if (cp <= 0x20) return true;  // control chars and space
  if (cp >= 0x21 && cp <= 0x2f) return true;
  if (cp >= 0x3a && cp <= 0x40) return true;
  if (cp >= 0x5b && cp <= 0x60) return true;
  if (cp >= 0x7b && cp <= 0x7e) return true;
  return false;
}

inline bool is_unicode_separator(std::uint32_t cp) {
  if (cp == 0xa0) return true;                      // no-break space
  if (cp >= 0xa1 && cp <= 0xbf) return true;        // Latin-1 punctuation
  if (cp >= 0x2000 && cp <= 0x206f) return true;    // general punctuation
  if (cp >= 0x3000 && cp <= 0x303f) return true;    // CJK punctuation
  if (cp >= 0xff00 && cp <= 0xff0f) return true;    // fullwidth forms
  return false;
}

// Decodes one UTF-8 code point starting at i; advances i. Malformed bytes
// are passed through as Latin-1 so tokenization never fails.
inline std::uint32_t next_code_point(std::string_view s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  std::uint32_t cp = b0;
  if (b0 >= 0xf0) {
    len = 4;
    cp = b0 & 0x07u;
  } else if (b0 >= 0xe0) {
    len = 3;
    cp = b0 & 0x0fu;
  } else if (b0 >= 0xc0) {
    len = 2;
    cp = b0 & 0x1fu;
  }
  if (len == 1) {
    ++i;
    return cp;
  }
  if (i + len > s.size()) {
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xc0u) != 0x80u) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3fu);
  }
  i += len;
  return cp;
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const std::uint32_t cp = detail::next_code_point(text, i);
    if (detail::is_ascii_separator(cp) || detail::is_unicode_separator(cp)) {
      if (!current.empty()) {
        tokens.push_back(current);
        current.clear();
      }
      continue;
    }
    if (cp < 0x80) {
      char c = static_cast<char>(cp);
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      current.push_back(c);
    } else {
      current.append(text.substr(start, i - start));
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace ldpbench
