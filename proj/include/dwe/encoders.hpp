#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dwe/errors.hpp"
#include "dwe/records.hpp"
#include "dwe/rng.hpp"
#include "dwe/tensor.hpp"
#include "dwe/unicode.hpp"

namespace dwe {

inline constexpr std::string_view kStartOfText = "<startoftext>";
inline constexpr std::string_view kEndOfText = "<endoftext>";

struct TokenSeq {
  std::vector<std::string> tokens;
  std::string source_text;
};

struct EncodedText {
  Tensor<double> token_matrix;  // one row per token
  std::vector<double> pooled;   // unit-norm mean of rows
};

inline TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  seq.source_text = std::string(text);
  seq.tokens.emplace_back(kStartOfText);
  for (auto& w : unicode::split_words(text)) seq.tokens.push_back(std::move(w));
  seq.tokens.emplace_back(kEndOfText);
  return seq;
}

// Deterministic stand-in for a pretrained token embedding: FNV-1a over
// (seed as 8 little-endian bytes ‖ token bytes) seeds a splitmix64 stream;
// entry i = (2u_i - 1)/√d with u_i uniform in [0, 1).
inline std::vector<double> hash_embed(std::string_view token, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("hash_embed: dimension must be >= 1");
  SplitMix64 stream(fnv1a(token, fnv1a_u64_le(seed)));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> v(dim);
  for (auto& x : v) x = (2.0 * stream.next_unit() - 1.0) * scale;
  return v;
}

inline std::vector<double> normalized(std::vector<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double denom = std::sqrt(sq) + kEpsNorm;
  for (auto& x : v) x /= denom;
  return v;
}

inline EncodedText encode_tokens(const TokenSeq& seq, std::size_t dim, std::uint64_t seed) {
  EncodedText out;
  out.token_matrix = Tensor<double>(seq.tokens.size(), dim);
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const auto row = hash_embed(seq.tokens[i], dim, seed);
    for (std::size_t j = 0; j < dim; ++j) {
      out.token_matrix.at(i, j) = row[j];
      mean[j] += row[j];
    }
  }
  for (auto& x : mean) x /= static_cast<double>(seq.tokens.size());
  out.pooled = normalized(std::move(mean));
  return out;
}

inline EncodedText encode_text(std::string_view text, std::size_t dim, std::uint64_t seed) {
  return encode_tokens(tokenize(text), dim, seed);
}

// Entity representation: the precomputed description vector when present,
// otherwise the pooled encoding of the description text.
inline std::vector<double> encode_entity(const EntityRecord& e, std::size_t dim, std::uint64_t seed) {
  if (e.description_vec) {
    if (e.description_vec->size() != dim) {
      throw DataError("entity '" + e.entity_id + "': description_vec has dimension " +
                      std::to_string(e.description_vec->size()) + ", expected " + std::to_string(dim));
    }
    return normalized(*e.description_vec);
  }
  if (e.description_text) return encode_text(*e.description_text, dim, seed).pooled;
  throw DataError("entity '" + e.entity_id + "': neither description_text nor description_vec present");
}

inline constexpr std::array<std::string_view, 4> kFaceAttributeOrder = {"gender", "race", "age", "emotion"};

inline std::string build_face_prompt(std::string_view mention, const std::map<std::string, std::string>& attrs) {
  std::string out(mention);
  for (auto key : kFaceAttributeOrder) {
    auto it = attrs.find(std::string(key));
    if (it == attrs.end()) continue;
    out += ", ";
    out += key;
    out += ": ";
    out += it->second;
  }
  return out;
}

}  // namespace dwe
