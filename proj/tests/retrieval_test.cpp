#include <algorithm>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace dwe;

namespace {

// Full-matrix edit distance.
std::size_t reference_distance(const std::u32string& a, const std::u32string& b) {
  std::vector<std::vector<std::size_t>> dp(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) dp[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) dp[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1, dp[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
  return dp[a.size()][b.size()];
}

std::u32string random_word(Rng& rng, std::size_t max_len) {
  static const char32_t alphabet[] = U"abcdeé中";
  std::u32string s;
  const std::size_t n = rng.below(max_len + 1);
  for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(7)]);
  return s;
}

std::string random_name(Rng& rng) {
  static const char* parts[] = {"ann", "Bob", "cara", "dan", "EVE", "fin", "gus", "hal", "ida", "jo"};
  std::string s = parts[rng.below(10)];
  if (rng.below(2)) s += std::string(" ") + parts[rng.below(10)];
  return s;
}

// Score every entity, sort the whole list, keep the first λ.
std::vector<ScoredEntity> brute_force(const std::vector<EntityRecord>& entities, const std::string& mention,
                                      std::size_t lambda) {
  const auto m = unicode::fold_code_points(mention);
  std::vector<ScoredEntity> all;
  for (const auto& e : entities) {
    const auto n = unicode::fold_code_points(e.name);
    const double longest = static_cast<double>(std::max<std::size_t>({1, m.size(), n.size()}));
    all.push_back({e.entity_id, 1.0 - static_cast<double>(reference_distance(m, n)) / longest});
  }
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
    return x.score != y.score ? x.score > y.score : x.entity_id < y.entity_id;
  });
  all.resize(std::min(lambda, all.size()));
  return all;
}

std::vector<EntityRecord> random_entities(Rng& rng, std::size_t n) {
  std::vector<EntityRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    EntityRecord e;
    e.entity_id = "Q" + std::to_string(rng.below(1u << 30)) + "_" + std::to_string(i);
    e.name = random_name(rng);
    e.type = rng.below(2) ? "person" : "org";
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(Levenshtein, Examples) {
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
  EXPECT_EQ(levenshtein("flaw", "lawn"), 2u);
  // code points, not bytes
  EXPECT_EQ(levenshtein("café", "cafe"), 1u);
  EXPECT_DOUBLE_EQ(name_similarity("Trump", "TRUMP"), 1.0);
  EXPECT_DOUBLE_EQ(name_similarity("", ""), 1.0);
  EXPECT_DOUBLE_EQ(name_similarity("abcd", "abxy"), 0.5);
}

TEST(Levenshtein, MatchesReferenceOnRandomPairs) {
  Rng rng(41);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_word(rng, 9);
    const auto b = random_word(rng, 9);
    ASSERT_EQ(levenshtein(a, b), reference_distance(a, b)) << i;
  }
}

TEST(Retrieval, ModeAMatchesBruteForce) {
  Rng rng(43);
  const auto entities = random_entities(rng, 300);
  const EntityIndex index(entities);
  for (int q = 0; q < 50; ++q) {
    RetrievalQuery query;
    query.mention = random_name(rng);
    query.lambda = 1 + rng.below(40);
    EXPECT_EQ(retrieve_candidates(index, query).candidates, brute_force(entities, query.mention, query.lambda));
  }
}

TEST(Retrieval, ModeBProvidedFirstThenTypedBucket) {
  std::vector<EntityRecord> es = {
      {"P1", "Anna", "person", {}, {}}, {"P2", "Ann", "person", {}, {}}, {"O1", "Ann", "org", {}, {}},
      {"P3", "Bob", "person", {}, {}},  {"P4", "Anne", "person", {}, {}},
  };
  const EntityIndex index(es);
  RetrievalQuery q{"m1", "ann", 3, std::string("person"), {"P3", "P3"}};
  const auto set = retrieve_candidates(index, q);
  ASSERT_EQ(set.candidates.size(), 3u);
  EXPECT_EQ(set.candidates[0].entity_id, "P3");
  EXPECT_EQ(set.candidates[1].entity_id, "P2");
  // Anna and Anne tie at 0.75; the smaller id wins
  EXPECT_EQ(set.candidates[2].entity_id, "P1");
  EXPECT_FALSE(set.contains("O1"));

  q.provided = {"missing"};
  EXPECT_THROW(retrieve_candidates(index, q), DataError);
  q.lambda = 0;
  EXPECT_THROW(retrieve_candidates(index, q), ConfigError);
}

TEST(Retrieval, LambdaBeyondIndexWarns) {
  clear_warnings();
  const EntityIndex index({{"A", "x", {}, {}, {}}, {"B", "y", {}, {}, {}}});
  RetrievalQuery q;
  q.mention = "x";
  q.lambda = 5;
  EXPECT_EQ(retrieve_candidates(index, q).candidates.size(), 2u);
  EXPECT_EQ(warning_log().size(), 1u);
}

TEST(EntityIndex, RejectsDuplicatesAndEmptyIds) {
  EXPECT_THROW(EntityIndex({{"A", "x", {}, {}, {}}, {"A", "y", {}, {}, {}}}), DataError);
  EXPECT_THROW(EntityIndex({{"", "x", {}, {}, {}}}), DataError);
}

TEST(ForceInclude, AppendsMissingGoldOnce) {
  const EntityIndex index({{"A", "alpha", {}, {}, {}}, {"B", "beta", {}, {}, {}}});
  RetrievalQuery q;
  q.mention = "alpha";
  q.lambda = 1;
  auto set = retrieve_candidates(index, q);
  force_include(set, index, "B", "alpha");
  force_include(set, index, "B", "alpha");
  ASSERT_EQ(set.candidates.size(), 2u);
  EXPECT_EQ(set.candidates[1].entity_id, "B");
}

TEST(SampleNegatives, HardThenInBatchDeduplicated) {
  CandidateSet set;
  for (const char* id : {"G", "A", "B", "C"}) set.candidates.push_back({id, 0.0});
  const auto negs = sample_negatives("G", set, {0.9, 0.1, 0.5, 0.5}, {"G", "C", "Z", "Z"}, 2);
  EXPECT_EQ(negs, (std::vector<std::string>{"B", "C", "Z"}));
  EXPECT_THROW(sample_negatives("G", set, {0.1}, {}, 2), UsageError);
  clear_warnings();
  CandidateSet only_gold;
  only_gold.candidates.push_back({"G", 1.0});
  EXPECT_TRUE(sample_negatives("G", only_gold, {1.0}, {"G"}, 3).empty());
  EXPECT_EQ(warning_log().size(), 1u);
}
