#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dwe/errors.hpp"
#include "dwe/records.hpp"
#include "dwe/unicode.hpp"

namespace dwe {

// Unit-cost edit distance over code points, two-row DP.
inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  auto decode = [](std::string_view s) {
    std::u32string out;
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
    for (int32_t i = 0; i < u.length(); i = u.moveIndex32(i, 1)) out.push_back(static_cast<char32_t>(u.char32At(i)));
    return out;
  };
  return levenshtein(std::u32string_view(decode(a)), std::u32string_view(decode(b)));
}

// 1 − lev / max(1, longest), both sides folded.
inline double name_similarity_folded(std::u32string_view a, std::u32string_view b) {
  const double longest = static_cast<double>(std::max<std::size_t>({1, a.size(), b.size()}));
  return 1.0 - static_cast<double>(levenshtein(a, b)) / longest;
}

inline double name_similarity(std::string_view a, std::string_view b) {
  return name_similarity_folded(unicode::fold_code_points(a), unicode::fold_code_points(b));
}

inline const std::string kUnknownType = "unknown";

class EntityIndex {
 public:
  EntityIndex() = default;

  explicit EntityIndex(std::vector<EntityRecord> records) {
    for (auto& e : records) {
      if (e.entity_id.empty()) throw DataError("entity with empty entity_id");
      if (position_.count(e.entity_id)) throw DataError("duplicate entity_id '" + e.entity_id + "'");
      position_[e.entity_id] = entities_.size();
      by_type_[e.type.value_or(kUnknownType)].push_back(e.entity_id);
      folded_names_.push_back(unicode::fold_code_points(e.name));
      entities_.push_back(std::move(e));
    }
    for (auto& [type, ids] : by_type_) std::sort(ids.begin(), ids.end());
  }

  std::size_t size() const { return entities_.size(); }
  bool contains(const std::string& id) const { return position_.count(id) > 0; }
  const EntityRecord& at(const std::string& id) const {
    auto it = position_.find(id);
    if (it == position_.end()) throw DataError("unknown entity_id '" + id + "'");
    return entities_[it->second];
  }
  const std::vector<EntityRecord>& entities() const { return entities_; }
  const std::map<std::string, std::vector<std::string>>& by_type() const { return by_type_; }
  const std::u32string& folded_name(const std::string& id) const { return folded_names_[position_.at(id)]; }
  std::size_t position(const std::string& id) const { return position_.at(id); }

 private:
  std::vector<EntityRecord> entities_;
  std::map<std::string, std::size_t> position_;
  std::map<std::string, std::vector<std::string>> by_type_;
  std::vector<std::u32string> folded_names_;
};

struct ScoredEntity {
  std::string entity_id;
  double score = 0.0;

  bool operator==(const ScoredEntity&) const = default;
};

struct CandidateSet {
  std::string mention_id;
  std::vector<ScoredEntity> candidates;
  std::size_t lambda = 0;
  std::vector<std::string> provided;

  bool contains(const std::string& id) const {
    return std::any_of(candidates.begin(), candidates.end(), [&](const auto& c) { return c.entity_id == id; });
  }
};

struct RetrievalQuery {
  std::string mention_id;
  std::string mention;
  std::size_t lambda = 100;
  std::optional<std::string> mention_type;
  std::vector<std::string> provided;
};

// Mode A (no provided list): top-λ over all entities by name similarity.
// Mode B: provided candidates first, then top-(λ − |provided|) fuzzy matches
// within the mention-type bucket. Ties go to the smaller entity_id.
inline CandidateSet retrieve_candidates(const EntityIndex& index, const RetrievalQuery& q) {
  if (q.lambda == 0) throw ConfigError("retrieve_candidates: lambda must be >= 1");
  CandidateSet out;
  out.mention_id = q.mention_id;
  out.lambda = q.lambda;
  out.provided = q.provided;
  const std::u32string mention = unicode::fold_code_points(q.mention);

  std::unordered_set<std::string> taken;
  for (const auto& id : q.provided) {
    if (out.candidates.size() >= q.lambda) break;
    if (!index.contains(id)) throw DataError("provided candidate '" + id + "' is not a known entity");
    if (!taken.insert(id).second) continue;
    out.candidates.push_back({id, name_similarity_folded(mention, index.folded_name(id))});
  }

  std::vector<ScoredEntity> pool;
  auto consider = [&](const std::string& id) {
    if (!taken.count(id)) pool.push_back({id, name_similarity_folded(mention, index.folded_name(id))});
  };
  const bool typed = !q.provided.empty() && q.mention_type.has_value();
  if (typed) {
    auto it = index.by_type().find(*q.mention_type);
    if (it != index.by_type().end())
      for (const auto& id : it->second) consider(id);
  } else {
    for (const auto& e : index.entities()) consider(e.entity_id);
  }

  const std::size_t wanted = q.lambda - out.candidates.size();
  if (pool.size() < wanted) {
    warn("retrieve_candidates: lambda " + std::to_string(q.lambda) + " exceeds eligible entities for mention '" +
         q.mention + "'");
  }
  const std::size_t keep = std::min(wanted, pool.size());
  auto better = [](const ScoredEntity& x, const ScoredEntity& y) {
    return x.score != y.score ? x.score > y.score : x.entity_id < y.entity_id;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(), better);
  pool.resize(keep);
  if (q.provided.empty()) {
    out.candidates = std::move(pool);
  } else {
    out.candidates.insert(out.candidates.end(), pool.begin(), pool.end());
  }
  return out;
}

// Appends the gold entity when the fuzzy search missed it (training only).
inline void force_include(CandidateSet& set, const EntityIndex& index, const std::string& gold,
                          const std::string& mention) {
  if (set.contains(gold)) return;
  set.candidates.push_back({gold, name_similarity(mention, index.at(gold).name)});
}

// Hard negatives: the k_hard non-gold candidates with highest cosine to the
// sample's current joint feature (`candidate_scores` parallels the candidate
// list). In-batch negatives: other samples' gold ids, deduplicated.
inline std::vector<std::string> sample_negatives(const std::string& gold, const CandidateSet& candidates,
                                                 const std::vector<double>& candidate_scores,
                                                 const std::vector<std::string>& batch_gold_ids, std::size_t k_hard) {
  if (candidate_scores.size() != candidates.candidates.size()) {
    throw UsageError("sample_negatives: score list does not match candidate list");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < candidates.candidates.size(); ++i) {
    if (candidates.candidates[i].entity_id != gold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (candidate_scores[a] != candidate_scores[b]) return candidate_scores[a] > candidate_scores[b];
    return candidates.candidates[a].entity_id < candidates.candidates[b].entity_id;
  });
  std::vector<std::string> out;
  std::unordered_set<std::string> seen{gold};
  for (std::size_t i = 0; i < order.size() && out.size() < k_hard; ++i) {
    const auto& id = candidates.candidates[order[i]].entity_id;
    if (seen.insert(id).second) out.push_back(id);
  }
  for (const auto& id : batch_gold_ids) {
    if (seen.insert(id).second) out.push_back(id);
  }
  if (out.empty()) warn("sample_negatives: no negatives available for gold '" + gold + "'");
  return out;
}

}  // namespace dwe
