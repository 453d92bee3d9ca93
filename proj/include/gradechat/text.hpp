#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace gradechat::text {

// Code-point level helpers. All character offsets in this project are code
// point indices into the UTF-8 source, half-open.

std::u32string decode_utf8(std::string_view s);  // throws ValidationError on malformed input
std::string encode_utf8(std::u32string_view s);
std::string encode_utf8(char32_t c);
std::size_t length(std::string_view utf8);
bool is_valid_utf8(std::string_view s);

// Slice by code point range [begin, end).
std::string substr(std::string_view utf8, std::size_t begin, std::size_t end);

// Unicode NFKC via ICU.
std::string nfkc(std::string_view utf8);

// General category P*, S* or Z* (plus C* controls such as '\n').
bool is_punct_or_space(char32_t c);
bool is_space(char32_t c);
bool is_hiragana(char32_t c);

// Hiragana, Katakana, CJK Unified Ideographs, the prolonged sound mark and the
// ideographic iteration mark.
bool is_japanese_script(char32_t c);
bool all_japanese_script(std::string_view utf8);

std::string trim(std::string_view s);

// Stable 64-bit FNV-1a content digest rendered as 16 hex digits.
class Digest {
 public:
  Digest& update(std::string_view bytes);
  std::string hex() const;

 private:
  unsigned long long h_ = 14695981039346656037ULL;
};

std::string read_file(const std::string& path);                          // throws IoError
void write_file(const std::string& path, std::string_view contents);      // throws IoError
std::vector<std::string> split_lines(std::string_view s);

}  // namespace gradechat::text
