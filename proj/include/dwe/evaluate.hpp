#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwe/config.hpp"
#include "dwe/dataset.hpp"
#include "dwe/model.hpp"
#include "dwe/retrieval.hpp"

namespace dwe {

inline constexpr std::array<std::size_t, 4> kTopK = {1, 5, 10, 20};

struct SampleRanking {
  std::string sample_id;
  std::string gold_entity_id;
  std::vector<ScoredEntity> ranked;  // cosine descending, ties by id
  std::optional<std::size_t> gold_rank;  // absent: gold not retrieved
};

struct RankingReport {
  std::vector<SampleRanking> samples;
  std::array<double, kTopK.size()> top{};  // Top-1, 5, 10, 20
  std::size_t retrieval_misses = 0;
  std::string split = "all";
  std::vector<std::string> members;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string dataset_hash;

  double top1() const { return top[0]; }
  double top5() const { return top[1]; }
  double top10() const { return top[2]; }
  double top20() const { return top[3]; }
  double retrieval_miss_rate() const {
    return samples.empty() ? 0.0 : static_cast<double>(retrieval_misses) / static_cast<double>(samples.size());
  }
};

// 1 + #{strictly higher} + #{non-gold ties}; nullopt when gold is absent.
inline std::optional<std::size_t> pessimistic_rank(const std::vector<ScoredEntity>& scored, const std::string& gold) {
  auto it = std::find_if(scored.begin(), scored.end(), [&](const auto& s) { return s.entity_id == gold; });
  if (it == scored.end()) return std::nullopt;
  std::size_t rank = 1;
  for (const auto& s : scored) {
    if (s.entity_id == gold) continue;
    if (s.score >= it->score) ++rank;
  }
  return rank;
}

template <typename T>
std::vector<ScoredEntity> score_candidates(std::span<const T> g, const CandidateSet& candidates,
                                           const std::map<std::string, Tensor<T>>& entity_vectors) {
  std::vector<ScoredEntity> out;
  out.reserve(candidates.candidates.size());
  for (const auto& c : candidates.candidates) {
    const auto& v = entity_vectors.at(c.entity_id).values;
    out.push_back({c.entity_id, cosine_score<T, T>(g, std::span<const T>(v))});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.entity_id < b.entity_id;
  });
  return out;
}

// Joint feature g for one sample with dropout off.
template <typename T>
std::vector<T> joint_feature(ParamStore<T>& store, const TrainConfig& cfg, const SampleFeatures<T>& f) {
  Tape<T> tape;
  const BoundParams<T> bound = bind_params(tape, store, cfg);
  return forward_sample(tape, bound, f, cfg, ForwardOptions{false, nullptr}).forward.g.value().values;
}

template <typename T>
SampleRanking rank_sample(ParamStore<T>& store, const TrainConfig& cfg, const MultimodalSample& s,
                          const SampleFeatures<T>& f, const CandidateSet& candidates,
                          const std::map<std::string, Tensor<T>>& entity_vectors) {
  const std::vector<T> g = joint_feature(store, cfg, f);
  SampleRanking r;
  r.sample_id = s.sample_id;
  r.gold_entity_id = s.gold_entity_id;
  r.ranked = score_candidates<T>(std::span<const T>(g), candidates, entity_vectors);
  r.gold_rank = pessimistic_rank(r.ranked, s.gold_entity_id);
  return r;
}

// Ranks a single sample that need not belong to the dataset (only its
// entity index is used).
template <typename T>
SampleRanking rank_single(ParamStore<T>& store, const TrainConfig& cfg, const Dataset& ds, const MultimodalSample& s,
                          std::size_t lambda) {
  check_dimensions(ds, cfg.dims);
  const SampleFeatures<T> f = encode_sample<T>(s, cfg);
  const CandidateSet candidates = retrieve_candidates(ds.index, retrieval_query(s, lambda));
  std::map<std::string, Tensor<T>> vectors;
  for (const auto& c : candidates.candidates) {
    const auto v = encode_entity(ds.index.at(c.entity_id), cfg.dims.d, cfg.encoder_seed);
    vectors.emplace(c.entity_id, detail::rows_tensor<T>({v}, cfg.dims.d));
  }
  return rank_sample(store, cfg, s, f, candidates, vectors);
}

inline void finalize_topk(RankingReport& report) {
  report.top.fill(0.0);
  report.retrieval_misses = 0;
  for (const auto& s : report.samples) {
    if (!s.gold_rank) {
      ++report.retrieval_misses;
      continue;
    }
    for (std::size_t k = 0; k < kTopK.size(); ++k)
      if (*s.gold_rank <= kTopK[k]) report.top[k] += 1.0;
  }
  if (!report.samples.empty())
    for (auto& t : report.top) t /= static_cast<double>(report.samples.size());
}

template <typename T>
RankingReport evaluate(ParamStore<T>& store, const TrainConfig& cfg, const Dataset& ds, const PreparedData<T>& prep,
                       const std::vector<std::size_t>& indices, const std::string& split_name = "all") {
  RankingReport report;
  report.split = split_name;
  report.seed = cfg.seed;
  report.config_hash = hex64(config_hash(cfg));
  report.dataset_hash = ds.content_hash;
  for (std::size_t i : indices) {
    report.members.push_back(ds.samples[i].sample_id);
    report.samples.push_back(
        rank_sample(store, cfg, ds.samples[i], prep.features[i], prep.eval_candidates[i], prep.entity_vectors));
  }
  finalize_topk(report);
  return report;
}

inline std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

inline nlohmann::json report_to_json(const RankingReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["members"] = r.members;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["dataset_hash"] = r.dataset_hash;
  j["top1"] = r.top1();
  j["top5"] = r.top5();
  j["top10"] = r.top10();
  j["top20"] = r.top20();
  j["samples_evaluated"] = r.samples.size();
  j["retrieval_misses"] = r.retrieval_misses;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : r.samples) {
    nlohmann::json ranked = nlohmann::json::array();
    for (const auto& c : s.ranked) ranked.push_back({c.entity_id, c.score});
    per.push_back({{"sample_id", s.sample_id},
                   {"gold_entity_id", s.gold_entity_id},
                   {"gold_rank", s.gold_rank ? nlohmann::json(*s.gold_rank) : nlohmann::json(nullptr)},
                   {"ranked", ranked}});
  }
  j["samples"] = per;
  return j;
}

}  // namespace dwe
