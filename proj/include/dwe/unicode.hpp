#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "dwe/errors.hpp"

namespace dwe::unicode {

namespace detail {

inline icu::UnicodeString nfc(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString out = norm->normalize(s, status);
  if (U_FAILURE(status)) throw Error("ICU normalization failed");
  return out;
}

inline icu::UnicodeString folded(std::string_view text) {
  icu::UnicodeString s = nfc(icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size()))));
  s.foldCase(U_FOLD_CASE_DEFAULT);
  return nfc(s);
}

inline std::string utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

}  // namespace detail

// Full Unicode case fold, NFC-normalised, as UTF-8.
inline std::string fold(std::string_view text) { return detail::utf8(detail::folded(text)); }

// Case-folded, NFC-normalised code points.
inline std::u32string fold_code_points(std::string_view text) {
  const icu::UnicodeString s = detail::folded(text);
  std::u32string out;
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) out.push_back(static_cast<char32_t>(s.char32At(i)));
  return out;
}

// Folded text split on every run of non-alphanumeric code points.
inline std::vector<std::string> split_words(std::string_view text) {
  const icu::UnicodeString s = detail::folded(text);
  std::vector<std::string> words;
  icu::UnicodeString current;
  auto flush = [&] {
    if (current.length() > 0) {
      words.push_back(detail::utf8(current));
      current.remove();
    }
  };
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) {
    const UChar32 c = s.char32At(i);
    if (u_isalnum(c)) {
      current.append(c);
    } else {
      flush();
    }
  }
  flush();
  return words;
}

}  // namespace dwe::unicode
