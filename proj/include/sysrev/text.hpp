#pragma once

// UTF-8 text utilities shared by every module: validation, NFC normalization,
// the index token rule, and code-point-aware truncation.
//
// All offsets handed out by this library are byte offsets into UTF-8 strings.
// "Characters" (as in length limits) are Unicode code points.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sysrev/error.hpp"

namespace sysrev::text {

inline bool valid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const auto len = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < len) {
    UChar32 c;
    U8_NEXT(p, i, len, c);
    if (c < 0) return false;
  }
  return true;
}

inline std::string nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = norm->normalize(in, status);
  if (U_FAILURE(status)) throw DataError("NFC normalization failed");
  std::string result;
  out.toUTF8String(result);
  return result;
}

// "\r\n" and lone "\r" become "\n".
inline std::string normalize_newlines(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < s.size() && s[i + 1] == '\n') ++i;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

inline std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

// Decodes one code point starting at byte `i`; advances `i`.
inline UChar32 next_codepoint(std::string_view s, std::size_t& i) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  auto pos = static_cast<int32_t>(i);
  UChar32 c;
  U8_NEXT(p, pos, static_cast<int32_t>(s.size()), c);
  i = static_cast<std::size_t>(pos);
  return c;
}

inline void append_codepoint(std::string& out, UChar32 c) {
  uint8_t buf[U8_MAX_LENGTH];
  int32_t n = 0;
  U8_APPEND_UNSAFE(buf, n, c);
  out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
}

struct TokenRule {
  bool lowercase = true;
  std::set<std::string> stopwords;
};

// Index token rule: split on any run of non-alphanumeric code points,
// lowercase when configured, then drop stopwords.
inline std::vector<std::string> tokenize(std::string_view s, const TokenRule& rule = {}) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      if (!rule.stopwords.contains(cur)) tokens.push_back(std::move(cur));
      cur.clear();
    }
  };
  std::size_t i = 0;
  while (i < s.size()) {
    UChar32 c = next_codepoint(s, i);
    if (c >= 0 && u_isalnum(c)) {
      append_codepoint(cur, rule.lowercase ? u_tolower(c) : c);
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

// Cuts `s` to at most `max_chars` code points. If a cut is needed it backs off
// to the last whitespace so no token is split; a single over-long token is cut
// hard. Returns the kept prefix and whether anything was removed.
inline std::pair<std::string, bool> truncate_at_token_boundary(std::string_view s,
                                                               std::size_t max_chars) {
  std::size_t chars = 0, i = 0;
  while (i < s.size() && chars < max_chars) {
    next_codepoint(s, i);
    ++chars;
  }
  if (i >= s.size()) return {std::string(s), false};
  std::size_t cut = i;
  if (!is_space(s[cut])) {
    std::size_t back = cut;
    while (back > 0 && !is_space(s[back - 1])) --back;
    if (back > 0) cut = back;
  }
  return {std::string(trim(s.substr(0, cut))), true};
}

}  // namespace sysrev::text
