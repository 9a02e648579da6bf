#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dwe/config.hpp"
#include "dwe/dataset.hpp"
#include "dwe/encoders.hpp"
#include "dwe/enhancer.hpp"
#include "dwe/objective.hpp"
#include "dwe/ops.hpp"
#include "dwe/param_store.hpp"
#include "dwe/retrieval.hpp"

namespace dwe {

inline const std::string kTextUnit = "enhancer.text";
inline const std::string kAttributeUnit = "enhancer.attribute";
inline const std::string kVisionUnit = "enhancer.vision";
inline const std::string kVisualProj = "visual.proj";
inline const std::string kFusionWg = "fusion.w_g";
inline const std::string kFusionBg = "fusion.b_g";
inline const std::string kFusionAlpha = "fusion.alpha";

template <typename T>
void apply_ablation(ParamStore<T>& store, const AblationFlags& flags) {
  store.set_trainable_prefix(kTextUnit + ".", flags.use_mt);
  store.set_trainable_prefix(kAttributeUnit + ".", flags.use_ms);
  store.set_trainable_prefix(kVisionUnit + ".", flags.use_mv);
  store.set_trainable_prefix(kVisualProj, flags.use_mv);
}

// Every parameter is created regardless of ablation flags (so a unit's
// initial value is the same whether or not it is enabled); disabled units
// are frozen.
template <typename T>
ParamStore<T> init_params(const TrainConfig& cfg) {
  validate(cfg);
  const std::size_t d = cfg.dims.d;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  ParamStore<T> store;
  for (const auto& unit : {kTextUnit, kAttributeUnit, kVisionUnit}) {
    init_enhancer_unit(store, unit, d, cfg.model.n_queries, cfg.seed);
  }
  store.add(kVisualProj, init_uniform<T>(cfg.dims.d_obj + cfg.dims.d_face, d, bound, cfg.seed, kVisualProj));
  store.add(kFusionWg, init_uniform<T>(d, d, bound, cfg.seed, kFusionWg));
  store.add(kFusionBg, Tensor<T>(1, d));
  store.add(kFusionAlpha, Tensor<T>(1, 1, {T(0.5)}));
  apply_ablation(store, cfg.ablation);
  return store;
}

// Encoded, model-precision inputs for one sample.
template <typename T>
struct SampleFeatures {
  Tensor<T> mention_tokens;  // l_m × d
  Tensor<T> mention_pooled;  // 1 × d
  Tensor<T> text_tokens;     // l_t × d
  Tensor<T> anp_rows;        // n_s × d
  Tensor<T> objects;         // l × d_obj
  Tensor<T> faces;           // l × d_face, zero rows for missing faces
  std::vector<bool> has_face;
};

namespace detail {

template <typename T>
Tensor<T> to_tensor(const Tensor<double>& t) {
  return t.template cast<T>();
}

template <typename T>
Tensor<T> rows_tensor(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Tensor<T> t(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) = static_cast<T>(rows[i][j]);
  return t;
}

}  // namespace detail

template <typename T>
SampleFeatures<T> encode_sample(const MultimodalSample& s, const TrainConfig& cfg) {
  const auto& dims = cfg.dims;
  const std::uint64_t seed = cfg.encoder_seed;
  SampleFeatures<T> f;
  const EncodedText mention = encode_text(s.mention.surface, dims.d, seed);
  f.mention_tokens = detail::to_tensor<T>(mention.token_matrix);
  f.mention_pooled = detail::rows_tensor<T>({mention.pooled}, dims.d);
  f.text_tokens = detail::to_tensor<T>(encode_text(s.text, dims.d, seed).token_matrix);

  std::vector<std::vector<double>> anps = s.anp_vecs;
  for (const auto& a : s.anps) anps.push_back(encode_text(a, dims.d, seed).pooled);
  for (const auto& a : anps) {
    if (a.size() != dims.d) throw DataError("sample '" + s.sample_id + "': ANP vector dimension mismatch");
  }
  f.anp_rows = detail::rows_tensor<T>(anps, dims.d);

  std::vector<std::vector<double>> objs, faces;
  for (const auto& o : s.objects) {
    if (o.object_vec.size() != dims.d_obj) {
      throw DataError("sample '" + s.sample_id + "': object_vec dimension " + std::to_string(o.object_vec.size()) +
                      ", expected " + std::to_string(dims.d_obj));
    }
    objs.push_back(o.object_vec);
    std::optional<std::vector<double>> face;
    if (o.face_vec) {
      if (o.face_vec->size() != dims.d_face) {
        throw DataError("sample '" + s.sample_id + "': face_vec dimension " + std::to_string(o.face_vec->size()) +
                        ", expected " + std::to_string(dims.d_face));
      }
      face = *o.face_vec;
    } else if (!o.face_attrs.empty() && dims.d_face > 0) {
      face = encode_text(build_face_prompt(s.mention.surface, o.face_attrs), dims.d_face, seed).pooled;
    }
    const bool present = face.has_value() && cfg.ablation.use_face;
    f.has_face.push_back(present);
    faces.push_back(present ? *face : std::vector<double>(dims.d_face, 0.0));
  }
  f.objects = detail::rows_tensor<T>(objs, dims.d_obj);
  f.faces = detail::rows_tensor<T>(faces, dims.d_face);
  return f;
}

// The gate is a plain learnable scalar kept in [0, 1] after every update.
template <typename T>
void clamp_gate(ParamStore<T>& store) {
  auto& a = store.get(kFusionAlpha).values[0];
  a = std::clamp(a, T(0), T(1));
}

// Parameters bound onto one tape; shared by all samples of a batch.
template <typename T>
struct BoundParams {
  std::optional<EnhancerUnit<T>> text;
  std::optional<EnhancerUnit<T>> attribute;
  std::optional<EnhancerUnit<T>> vision;
  std::optional<Var<T>> visual_proj;
  FusionWeights<T> fusion;
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, ParamStore<T>& store, const TrainConfig& cfg) {
  BoundParams<T> b;
  if (cfg.ablation.use_mt) b.text = bind_enhancer_unit(tape, store, kTextUnit);
  if (cfg.ablation.use_ms) b.attribute = bind_enhancer_unit(tape, store, kAttributeUnit);
  if (cfg.ablation.use_mv) b.vision = bind_enhancer_unit(tape, store, kVisionUnit);
  b.visual_proj = tape.param(store.get(kVisualProj));
  b.fusion = FusionWeights<T>{tape.param(store.get(kFusionWg)), tape.param(store.get(kFusionBg)),
                              tape.param(store.get(kFusionAlpha))};
  return b;
}

template <typename T>
struct ModelOutput {
  SampleForward<T> forward;
  Var<T> m, m_t, m_v, m_s;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename T>
ModelOutput<T> forward_sample(Tape<T>& tape, const BoundParams<T>& p, const SampleFeatures<T>& f,
                              const TrainConfig& cfg, const ForwardOptions& fo, AttentionTrace<T>* trace = nullptr) {
  const std::size_t d = cfg.dims.d;
  EnhancerOptions<T> eo{cfg.model.heads, cfg.model.dropout, fo.training, fo.rng, trace};
  const Var<T> mention_tokens = tape.constant(f.mention_tokens);
  const Var<T> zero = tape.constant(Tensor<T>(1, d));

  ModelOutput<T> out;
  out.m = tape.constant(f.mention_pooled);
  out.m_t = zero;
  out.m_v = zero;
  out.m_s = zero;

  if (p.text) {
    out.m_t = enhance(mention_tokens, tape.constant(f.text_tokens), *p.text, eo);
    out.forward.m_t = out.m_t;
  }
  const std::size_t l = f.objects.rows();
  if (p.vision && l > 0) {
    // Canonical object order, so the projected rows (and everything after
    // them) do not depend on detection order.
    const Var<T> pairs = sort_rows(concat_cols(tape.constant(f.objects), tape.constant(f.faces)));
    const RefinedVisual<T> v = refine_visual(slice_cols(pairs, 0, cfg.dims.d_obj),
                                             slice_cols(pairs, cfg.dims.d_obj, cfg.dims.d_face), *p.visual_proj);
    out.m_v = enhance(mention_tokens, *v.rows, *p.vision, eo);
    out.forward.m_v = out.m_v;
  }
  if (p.attribute && f.anp_rows.rows() > 0) {
    out.m_s = enhance(mention_tokens, tape.constant(f.anp_rows), *p.attribute, eo);
  }
  out.forward.g = fuse(out.m, out.m_t, out.m_v, out.m_s, p.fusion, fo.training ? cfg.model.dropout : 0.0, fo.rng,
                       fo.training);

  // d_i and f_i land in R^d through the two row blocks of the visual projection.
  if (cfg.ablation.use_alignment && cfg.ablation.use_face && l > 0) {
    const std::size_t d_obj = cfg.dims.d_obj, d_face = cfg.dims.d_face;
    Tensor<T> obj_padded(0, d_obj + d_face), face_padded(0, d_obj + d_face);
    for (std::size_t i = 0; i < l; ++i) {
      if (!f.has_face[i]) continue;
      std::vector<T> orow(d_obj + d_face, T(0)), frow(d_obj + d_face, T(0));
      for (std::size_t j = 0; j < d_obj; ++j) orow[j] = f.objects.at(i, j);
      for (std::size_t j = 0; j < d_face; ++j) frow[d_obj + j] = f.faces.at(i, j);
      obj_padded.values.insert(obj_padded.values.end(), orow.begin(), orow.end());
      face_padded.values.insert(face_padded.values.end(), frow.begin(), frow.end());
      ++obj_padded.shape.rows;
      ++face_padded.shape.rows;
    }
    if (obj_padded.rows() > 0) {
      out.forward.aligned_objects = matmul(tape.constant(std::move(obj_padded)), *p.visual_proj);
      out.forward.aligned_faces = matmul(tape.constant(std::move(face_padded)), *p.visual_proj);
    }
  }
  return out;
}

inline ObjectiveFlags objective_flags(const TrainConfig& cfg) {
  return ObjectiveFlags{cfg.ablation.use_alignment, cfg.ablation.use_face};
}

// Cosine in double with the same zero guard as the tape op.
template <typename A, typename B>
double cosine_score(std::span<const A> a, std::span<const B> b) {
  double dot = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    saa += static_cast<double>(a[k]) * static_cast<double>(a[k]);
    sbb += static_cast<double>(b[k]) * static_cast<double>(b[k]);
  }
  return dot / (std::sqrt(saa) * std::sqrt(sbb) + kEpsNorm);
}

// Everything derived from a dataset once per run: encoded inputs, entity
// vectors Ψ(e), and retrieval candidate sets.
template <typename T>
struct PreparedData {
  std::vector<SampleFeatures<T>> features;
  std::map<std::string, Tensor<T>> entity_vectors;
  std::vector<CandidateSet> eval_candidates;   // no gold forcing
  std::vector<CandidateSet> train_candidates;  // gold always present
};

inline RetrievalQuery retrieval_query(const MultimodalSample& s, std::size_t lambda) {
  return RetrievalQuery{s.sample_id, s.mention.surface, lambda, s.mention_type, s.provided_candidates};
}

template <typename T>
PreparedData<T> prepare_data(const Dataset& ds, const TrainConfig& cfg, std::size_t lambda) {
  check_dimensions(ds, cfg.dims);
  PreparedData<T> p;
  for (const auto& e : ds.index.entities()) {
    const auto v = encode_entity(e, cfg.dims.d, cfg.encoder_seed);
    p.entity_vectors.emplace(e.entity_id, detail::rows_tensor<T>({v}, cfg.dims.d));
  }
  for (const auto& s : ds.samples) {
    p.features.push_back(encode_sample<T>(s, cfg));
    CandidateSet c = retrieve_candidates(ds.index, retrieval_query(s, lambda));
    p.eval_candidates.push_back(c);
    force_include(c, ds.index, s.gold_entity_id, s.mention.surface);
    p.train_candidates.push_back(std::move(c));
  }
  return p;
}

}  // namespace dwe
