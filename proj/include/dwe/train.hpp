#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwe/checkpoint.hpp"
#include "dwe/config.hpp"
#include "dwe/dataset.hpp"
#include "dwe/evaluate.hpp"
#include "dwe/model.hpp"
#include "dwe/objective.hpp"
#include "dwe/param_store.hpp"
#include "dwe/retrieval.hpp"

namespace dwe {

template <typename T>
struct BatchLoss {
  LossTerms<T> terms;
  std::vector<ModelOutput<T>> outputs;
  std::vector<std::vector<std::string>> negatives;
};

// Chooses negatives for batch position i given that sample's current g.
template <typename T>
using NegativePicker = std::function<std::vector<std::string>(std::size_t, std::span<const T>)>;

// Forward every sample of a batch on one tape, pick negatives, build L.
template <typename T>
BatchLoss<T> batch_loss(Tape<T>& tape, ParamStore<T>& store, const TrainConfig& cfg,
                        const std::vector<const SampleFeatures<T>*>& features, const std::vector<std::string>& golds,
                        const std::map<std::string, Tensor<T>>& entity_vectors, const NegativePicker<T>& pick,
                        const ForwardOptions& fo) {
  const BoundParams<T> bound = bind_params(tape, store, cfg);
  BatchLoss<T> out;
  std::vector<SampleForward<T>> forwards;
  std::vector<Var<T>> positives;
  std::vector<std::vector<Var<T>>> negatives;
  for (std::size_t i = 0; i < features.size(); ++i) {
    out.outputs.push_back(forward_sample(tape, bound, *features[i], cfg, fo));
    forwards.push_back(out.outputs.back().forward);
    const auto& g = out.outputs.back().forward.g.value().values;
    out.negatives.push_back(pick(i, std::span<const T>(g)));
    positives.push_back(tape.constant(entity_vectors.at(golds[i])));
    std::vector<Var<T>> negs;
    for (const auto& id : out.negatives.back()) negs.push_back(tape.constant(entity_vectors.at(id)));
    negatives.push_back(std::move(negs));
  }
  out.terms = total_loss(forwards, positives, negatives, cfg.loss, objective_flags(cfg));
  return out;
}

struct MetricsRecord {
  std::size_t step = 0;
  std::string split;
  double top1 = 0, top5 = 0, top10 = 0, top20 = 0;
  double loss = 0;
  double retrieval_miss_rate = 0;

  bool operator==(const MetricsRecord&) const = default;
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  return {{"step", r.step},   {"split", r.split}, {"top1", r.top1}, {"top5", r.top5},
          {"top10", r.top10}, {"top20", r.top20}, {"loss", r.loss}, {"retrieval_miss_rate", r.retrieval_miss_rate}};
}

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  std::string data_dir;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  ParamStore<float> final_params;
  ParamStore<float> best_params;
  double best_dev_top1 = -1.0;
  std::vector<MetricsRecord> metrics;
  std::vector<double> step_losses;
  DataSplit split;
  std::size_t steps = 0;
};

inline MetricsRecord metrics_from(const RankingReport& r, std::size_t step, double loss) {
  return MetricsRecord{step, r.split, r.top1(), r.top5(), r.top10(), r.top20(), loss, r.retrieval_miss_rate()};
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const TrainOptions& opt = {}) {
  validate(cfg);
  const PreparedData<float> prep = prepare_data<float>(ds, cfg, cfg.lambda);
  TrainResult result;
  result.split = split_samples(ds.samples, cfg.split, cfg.seed);
  const auto& train_idx = result.split.train;
  const auto& dev_idx = result.split.dev;
  if (train_idx.empty()) throw DataError("training split is empty");

  ParamStore<float> store = init_params<float>(cfg);
  result.best_params = store;
  Rng rng(cfg.seed);
  const ForwardOptions train_fwd{true, &rng};
  const bool epoch_refresh = cfg.negatives.refresh == "epoch";
  std::vector<std::vector<double>> cached_scores(ds.samples.size());

  auto candidate_scores = [&](std::size_t sample, std::span<const float> g) {
    std::vector<double> scores;
    for (const auto& c : prep.train_candidates[sample].candidates) {
      scores.push_back(cosine_score<float, float>(g, std::span<const float>(prep.entity_vectors.at(c.entity_id).values)));
    }
    return scores;
  };

  const std::size_t steps_per_epoch = (train_idx.size() + cfg.schedule.batch_size - 1) / cfg.schedule.batch_size;
  std::size_t total_steps = cfg.schedule.epochs * steps_per_epoch;
  if (cfg.schedule.max_steps) total_steps = std::min(total_steps, cfg.schedule.max_steps);

  double loss_accum = 0.0;
  std::size_t loss_count = 0;
  std::size_t step = 0;
  bool done = false;
  auto eval_and_log = [&](std::size_t at_step, bool final_round) {
    const double mean_loss = loss_count ? loss_accum / static_cast<double>(loss_count) : 0.0;
    const auto& eval_idx = dev_idx.empty() ? train_idx : dev_idx;
    const RankingReport dev = evaluate(store, cfg, ds, prep, eval_idx, dev_idx.empty() ? "train" : "dev");
    if (final_round && !dev_idx.empty()) {
      result.metrics.push_back(metrics_from(evaluate(store, cfg, ds, prep, train_idx, "train"), at_step, mean_loss));
    }
    result.metrics.push_back(metrics_from(dev, at_step, mean_loss));
    if (dev.top1() > result.best_dev_top1) {
      result.best_dev_top1 = dev.top1();
      result.best_params = store;
    }
    if (opt.progress) {
      *opt.progress << "step " << at_step << " loss " << mean_loss << " " << dev.split << " top1 " << dev.top1()
                    << " top5 " << dev.top5() << "\n";
    }
    loss_accum = 0.0;
    loss_count = 0;
  };

  for (std::size_t epoch = 0; epoch < cfg.schedule.epochs && !done; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    rng.shuffle(order.begin(), order.end());
    if (epoch_refresh) {
      for (std::size_t i : train_idx) {
        const auto g = joint_feature(store, cfg, prep.features[i]);
        cached_scores[i] = candidate_scores(i, std::span<const float>(g));
      }
    }
    for (std::size_t start = 0; start < order.size() && !done; start += cfg.schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.schedule.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      std::vector<const SampleFeatures<float>*> feats;
      std::vector<std::string> golds;
      for (std::size_t i : batch) {
        feats.push_back(&prep.features[i]);
        golds.push_back(ds.samples[i].gold_entity_id);
      }
      NegativePicker<float> pick = [&](std::size_t pos, std::span<const float> g) {
        const std::size_t sample = batch[pos];
        std::vector<std::string> others;
        for (std::size_t j = 0; j < batch.size(); ++j)
          if (j != pos) others.push_back(golds[j]);
        const auto scores = epoch_refresh ? cached_scores[sample] : candidate_scores(sample, g);
        return sample_negatives(golds[pos], prep.train_candidates[sample], scores, others, cfg.negatives.k_hard);
      };

      Tape<float> tape;
      const BatchLoss<float> bl = batch_loss<float>(tape, store, cfg, feats, golds, prep.entity_vectors, pick, train_fwd);
      const double loss = bl.terms.total.item();
      auto dump_batch = [&](const std::string& what) {
        std::string ids;
        for (std::size_t i : batch) ids += (ids.empty() ? "" : ",") + ds.samples[i].sample_id;
        const std::string msg = what + " at step " + std::to_string(step + 1) + ", batch " +
                                std::to_string(start / cfg.schedule.batch_size) + " of epoch " +
                                std::to_string(epoch) + " (samples " + ids + ")";
        if (opt.out_dir) {
          std::filesystem::create_directories(*opt.out_dir);
          std::ofstream(*opt.out_dir / "numeric_failure.txt") << msg << "\n";
        }
        throw NumericError(msg);
      };
      if (!std::isfinite(loss)) dump_batch("non-finite loss");
      tape.backward(bl.terms.total);
      if (!store.all_finite()) dump_batch("non-finite gradient");
      adamw_step(store, cfg.optim);
      clamp_gate(store);
      ++step;
      result.step_losses.push_back(loss);
      loss_accum += loss;
      ++loss_count;
      if (cfg.schedule.max_steps && step >= cfg.schedule.max_steps) done = true;
      if (cfg.schedule.eval_every_steps && step % cfg.schedule.eval_every_steps == 0 && step < total_steps) {
        eval_and_log(step, false);
      }
    }
  }
  eval_and_log(step, true);
  result.steps = step;
  result.final_params = store;

  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    save_checkpoint(*opt.out_dir / "final.ckpt", Checkpoint{cfg, result.final_params, opt.data_dir});
    save_checkpoint(*opt.out_dir / "best.ckpt", Checkpoint{cfg, result.best_params, opt.data_dir});
    std::ofstream log(*opt.out_dir / "metrics.jsonl", std::ios::binary);
    for (const auto& m : result.metrics) log << to_json(m).dump() << "\n";
    nlohmann::json split;
    for (const auto& [name, idx] : {std::pair{"train", &result.split.train}, std::pair{"dev", &result.split.dev},
                                    std::pair{"test", &result.split.test}}) {
      split[name] = nlohmann::json::array();
      for (std::size_t i : *idx) split[name].push_back(ds.samples[i].sample_id);
    }
    std::ofstream(*opt.out_dir / "split.json", std::ios::binary) << split.dump(2) << "\n";
  }
  return result;
}

}  // namespace dwe
