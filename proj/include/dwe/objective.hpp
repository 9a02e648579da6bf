#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dwe/errors.hpp"
#include "dwe/ops.hpp"
#include "dwe/tensor.hpp"

namespace dwe {

template <typename T>
struct FusionWeights {
  Var<T> w_g;    // d×d
  Var<T> b_g;    // 1×d
  Var<T> alpha;  // 1×1 gate in [0, 1]
};

// g_m = m + m_t + m_v;  g = (g_m + α(m_s − g_m))·W_g + b_g
template <typename T>
Var<T> fuse(const Var<T>& m, const Var<T>& m_t, const Var<T>& m_v, const Var<T>& m_s, const FusionWeights<T>& w,
            double dropout_rate = 0.0, Rng* rng = nullptr, bool training = false) {
  for (const auto* v : {&m_t, &m_v, &m_s}) {
    if (v->shape() != m.shape() || m.shape().rows != 1) {
      throw DimensionError("fuse: expected 1x" + std::to_string(m.shape().cols) + " inputs, got " + m.shape().str() +
                           " and " + v->shape().str());
    }
  }
  Var<T> g_m = add(add(m, m_t), m_v);
  if (training && dropout_rate > 0.0) {
    if (!rng) throw UsageError("fuse: training dropout needs an rng");
    g_m = dropout(g_m, dropout_rate, *rng, true);
  }
  const Var<T> gated = add(g_m, scale_by(sub(m_s, g_m), w.alpha));
  return add_row(matmul(gated, w.w_g), w.b_g);
}

struct LossConfig {
  double margin = 0.5;
  double beta = 0.5;
  double tau = 0.25;
  // Penalise Γ(g,θ+) − Γ(g,θ−) instead of the reverse.
  bool reversed_triplet = false;
};

// Mean over negatives of max(Γ(g,θ−) − Γ(g,θ+) + ε, 0), Γ = cosine.
template <typename T>
Var<T> triplet_loss(const Var<T>& g, const Var<T>& positive, const std::vector<Var<T>>& negatives, double margin,
                    bool reversed_triplet = false) {
  if (negatives.empty()) {
    warn("triplet_loss: no negatives, term contributes 0");
    return g.tape->constant(Tensor<T>(1, 1));
  }
  const Var<T> pos = cosine(g, positive);
  const Var<T> eps = g.tape->constant(Tensor<T>(1, 1, {static_cast<T>(margin)}));
  std::vector<Var<T>> hinges;
  hinges.reserve(negatives.size());
  for (const auto& n : negatives) {
    const Var<T> neg = cosine(g, n);
    const Var<T> gap = reversed_triplet ? sub(pos, neg) : sub(neg, pos);
    hinges.push_back(relu(add(gap, eps)));
  }
  return mean(concat_cols(hinges));
}

// Mean-shifted contrastive loss over row-paired A, B (n×d): rows are
// unit-normalised, shifted by the normalised centre of all 2n rows,
// renormalised, then scored with InfoNCE at temperature τ where row i of B
// is the positive for row i of A and the other B rows are negatives.
template <typename T>
Var<T> msc_loss(const Var<T>& a, const Var<T>& b, double tau) {
  if (a.shape() != b.shape()) throw DimensionError("msc_loss: " + a.shape().str() + " vs " + b.shape().str());
  if (!(tau > 0.0)) throw ConfigError("msc_loss: temperature must be positive");
  const std::size_t n = a.shape().rows;
  if (n < 2) return a.tape->constant(Tensor<T>(1, 1));

  const Var<T> an = l2_normalize_rows(a);
  const Var<T> bn = l2_normalize_rows(b);
  const Var<T> center = l2_normalize_rows(mean_rows(concat_rows<T>({an, bn})));
  const Var<T> neg_center = scale(center, T(-1));
  const Var<T> a_shift = l2_normalize_rows(add_row(an, neg_center));
  const Var<T> b_shift = l2_normalize_rows(add_row(bn, neg_center));
  const Var<T> logits = scale(matmul(a_shift, transpose(b_shift)), static_cast<T>(1.0 / tau));
  Tensor<T> eye(n, n);
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = T(1);
  const Var<T> picked = hadamard(log_softmax_rows(logits), a.tape->constant(std::move(eye)));
  return scale(sum(picked), static_cast<T>(-1.0 / static_cast<double>(n)));
}

// Per-sample outputs the objective needs.
template <typename T>
struct SampleForward {
  Var<T> g;
  std::optional<Var<T>> m_t;
  std::optional<Var<T>> m_v;
  // Projected object (d_i) and face (f_i) rows of objects with a face.
  std::optional<Var<T>> aligned_objects;
  std::optional<Var<T>> aligned_faces;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> triplet;
  Var<T> alignment;
};

struct ObjectiveFlags {
  bool use_alignment = true;
  bool use_face = true;
};

// L = L_t + β·L_c, with L_t the batch-mean triplet loss and
// L_c = MSC(f, d) over pooled object pairs + MSC(m_t, m_v) over samples.
template <typename T>
LossTerms<T> total_loss(const std::vector<SampleForward<T>>& batch, const std::vector<Var<T>>& positives,
                        const std::vector<std::vector<Var<T>>>& negatives, const LossConfig& cfg,
                        const ObjectiveFlags& flags) {
  if (batch.empty()) throw UsageError("total_loss: empty batch");
  if (positives.size() != batch.size() || negatives.size() != batch.size()) {
    throw UsageError("total_loss: positives/negatives do not match batch size");
  }
  Tape<T>& tape = *batch.front().g.tape;
  std::vector<Var<T>> per_sample;
  per_sample.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    per_sample.push_back(triplet_loss(batch[i].g, positives[i], negatives[i], cfg.margin, cfg.reversed_triplet));
  }
  const Var<T> lt = mean(concat_cols(per_sample));

  Var<T> lc = tape.constant(Tensor<T>(1, 1));
  if (flags.use_alignment) {
    if (flags.use_face) {
      std::vector<Var<T>> objs, faces;
      for (const auto& s : batch) {
        if (s.aligned_objects && s.aligned_faces) {
          objs.push_back(*s.aligned_objects);
          faces.push_back(*s.aligned_faces);
        }
      }
      if (!objs.empty()) lc = add(lc, msc_loss(concat_rows(objs), concat_rows(faces), cfg.tau));
    }
    std::vector<Var<T>> mts, mvs;
    for (const auto& s : batch) {
      if (s.m_t && s.m_v) {
        mts.push_back(*s.m_t);
        mvs.push_back(*s.m_v);
      }
    }
    if (!mts.empty()) lc = add(lc, msc_loss(concat_rows(mts), concat_rows(mvs), cfg.tau));
  }
  const Var<T> total = cfg.beta == 0.0 ? lt : add(lt, scale(lc, static_cast<T>(cfg.beta)));
  return {total, lt, lc};
}

}  // namespace dwe
