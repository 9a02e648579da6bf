#pragma once

#include <map>
#include <type_traits>
#include <string>
#include <vector>

#include "dwe/config.hpp"
#include "dwe/dataset.hpp"
#include "dwe/grad_check.hpp"
#include "dwe/model.hpp"
#include "dwe/synth.hpp"
#include "dwe/train.hpp"

namespace dwe {

struct ModelGradCheckSetup {
  std::size_t dim = 8;
  std::size_t heads = 2;
  std::size_t n_queries = 2;
  std::size_t batch = 3;
  std::size_t objects_per_sample = 2;
  std::uint64_t seed = 0;
  double eps_fd = 1e-5;
  // > 0: redraw every parameter from U(-param_range, param_range) instead
  // of the training init (b_g and the gate are moved off zero either way)
  double param_range = 0.0;
};

namespace detail {

template <typename T>
struct GradCheckInputs {
  std::vector<SampleFeatures<T>> features;
  std::vector<const SampleFeatures<T>*> feats;
  std::map<std::string, Tensor<T>> entity_vectors;

  GradCheckInputs(const SynthOutput& data, const TrainConfig& cfg) {
    for (const auto& smp : data.samples) features.push_back(encode_sample<T>(smp, cfg));
    for (const auto& f : features) feats.push_back(&f);
    for (const auto& e : data.entities)
      entity_vectors.emplace(e.entity_id, rows_tensor<T>({encode_entity(e, cfg.dims.d, cfg.encoder_seed)}, cfg.dims.d));
  }
  GradCheckInputs(const GradCheckInputs&) = delete;
};

}  // namespace detail

// Central-difference check of the complete training loss (all three units,
// gated fusion, triplet + both alignment terms) at 64-bit with dropout off.
inline GradCheckResult full_model_gradcheck(const ModelGradCheckSetup& s) {
  TrainConfig cfg;
  cfg.dims = Dims{s.dim, s.dim, s.dim};
  cfg.model.heads = s.heads;
  cfg.model.n_queries = s.n_queries;
  cfg.model.dropout = 0.0;
  cfg.seed = s.seed;
  validate(cfg);

  SynthConfig sc;
  sc.n_entities = 8;
  sc.n_samples = s.batch;
  sc.noise = 0.3;
  sc.n_distractors = s.objects_per_sample - 1;
  sc.seed = s.seed + 1;
  sc.dims = cfg.dims;
  SynthOutput data = synth_build(sc);
  // every object gets a face so the face/object alignment term sees all pairs
  Rng face_rng(s.seed + 2);
  for (auto& smp : data.samples)
    for (auto& o : smp.objects)
      if (!o.face_vec) {
        std::vector<double> f(s.dim);
        for (auto& x : f) x = face_rng.normal();
        o.face_vec = f;
      }

  std::vector<std::string> golds;
  for (const auto& smp : data.samples) golds.push_back(smp.gold_entity_id);
  detail::GradCheckInputs<double> in64(data, cfg);
  detail::GradCheckInputs<long double> in80(data, cfg);
  // fixed negatives: the other samples' golds plus one non-gold entity
  std::vector<std::vector<std::string>> negatives(golds.size());
  for (std::size_t i = 0; i < golds.size(); ++i) {
    for (std::size_t j = 0; j < golds.size(); ++j)
      if (golds[j] != golds[i] &&
          std::find(negatives[i].begin(), negatives[i].end(), golds[j]) == negatives[i].end())
        negatives[i].push_back(golds[j]);
    for (const auto& e : data.entities)
      if (e.entity_id != golds[i] && std::find(negatives[i].begin(), negatives[i].end(), e.entity_id) == negatives[i].end()) {
        negatives[i].push_back(e.entity_id);
        break;
      }
  }

  ParamStore<double> store = init_params<double>(cfg);
  Rng jitter(s.seed + 3);
  if (s.param_range > 0)
    for (auto& [name, p] : store.params())
      for (auto& v : p.values) v = jitter.uniform(-s.param_range, s.param_range);
  for (auto& v : store.get(kFusionBg).values) v = 0.1 * jitter.normal();
  store.get(kFusionAlpha).values[0] = 0.3;

  auto fn = [&]<typename T>(Tape<T>& tape, ParamStore<T>& ps) {
    const NegativePicker<T> pick = [&](std::size_t i, std::span<const T>) { return negatives[i]; };
    const auto& in = [&]() -> const detail::GradCheckInputs<T>& {
      if constexpr (std::is_same_v<T, double>) return in64; else return in80;
    }();
    return batch_loss<T>(tape, ps, cfg, in.feats, golds, in.entity_vectors, pick, ForwardOptions{false, nullptr})
        .terms.total;
  };
  return grad_check<long double>(fn, store, s.eps_fd);
}

}  // namespace dwe
