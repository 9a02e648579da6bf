#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dwe/errors.hpp"
#include "dwe/ops.hpp"
#include "dwe/param_store.hpp"
#include "dwe/tensor.hpp"

namespace dwe {

// Query/key/value/output projections of one multi-head attention block.
// Row-vector convention: Q = X·wq.
template <typename T>
struct AttentionBlock {
  Var<T> wq, wk, wv, wo;
};

// One cross-modal enhancer: mention-over-context attention (stage 1), then
// learnable queries decoding the hidden sequence (stage 2).
template <typename T>
struct EnhancerUnit {
  AttentionBlock<T> stage1;
  AttentionBlock<T> stage2;
  Var<T> queries;  // N_v × d
};

// Receives every softmax matrix computed, one per head per block.
template <typename T>
struct AttentionTrace {
  std::vector<Tensor<T>> weights;
};

template <typename T>
struct EnhancerOptions {
  std::size_t heads = 8;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  AttentionTrace<T>* trace = nullptr;
};

inline const char* const kAttentionMatrices[] = {"wq", "wk", "wv", "wo"};

template <typename T>
void init_enhancer_unit(ParamStore<T>& store, const std::string& prefix, std::size_t dim, std::size_t n_queries,
                        std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const char* stage : {"stage1", "stage2"}) {
    for (const char* m : kAttentionMatrices) {
      const std::string name = prefix + "." + stage + "." + m;
      store.add(name, init_uniform<T>(dim, dim, bound, seed, name));
    }
  }
  const std::string qname = prefix + ".queries";
  store.add(qname, init_uniform<T>(n_queries, dim, bound, seed, qname));
}

template <typename T>
EnhancerUnit<T> bind_enhancer_unit(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix) {
  auto block = [&](const std::string& stage) {
    const std::string p = prefix + "." + stage + ".";
    return AttentionBlock<T>{tape.param(store.get(p + "wq")), tape.param(store.get(p + "wk")),
                             tape.param(store.get(p + "wv")), tape.param(store.get(p + "wo"))};
  };
  return EnhancerUnit<T>{block("stage1"), block("stage2"), tape.param(store.get(prefix + ".queries"))};
}

// Multi-head scaled dot-product attention of `queries` (p×d) over `context`
// (q×d). Scores are scaled by √(d/h), the per-head width.
template <typename T>
Var<T> multi_head_attention(const Var<T>& queries, const Var<T>& context, const AttentionBlock<T>& w,
                            std::size_t heads, AttentionTrace<T>* trace = nullptr) {
  const std::size_t d = queries.shape().cols;
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (context.shape().cols != d) {
    throw DimensionError("attention: query " + queries.shape().str() + " and context " + context.shape().str() +
                         " widths differ");
  }
  if (context.shape().rows == 0) throw EmptyContextError("attention over an empty context");
  const std::size_t dh = d / heads;
  const T inv_scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

  const Var<T> q = matmul(queries, w.wq);
  const Var<T> k = matmul(context, w.wk);
  const Var<T> v = matmul(context, w.wv);
  std::vector<Var<T>> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var<T> qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Var<T> kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Var<T> vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    const Var<T> attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_scale));
    if (trace) trace->weights.push_back(attn.value());
    head_outputs.push_back(matmul(attn, vh));
  }
  const Var<T> merged = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
  return matmul(merged, w.wo);
}

// Stage 1: mention rows X attend over context Y; returns h_t (p×d). Context
// rows are put in canonical order so the result does not depend on it.
template <typename T>
Var<T> cross_attention(const Var<T>& x, const Var<T>& y, const AttentionBlock<T>& stage1, std::size_t heads,
                       AttentionTrace<T>* trace = nullptr) {
  if (x.shape().rows == 0) throw DimensionError("cross_attention: empty query sequence");
  return multi_head_attention(x, sort_rows(y), stage1, heads, trace);
}

// Stage 2: the N_v learnable queries attend over h_t; the decoded rows are
// mean-pooled into one 1×d vector, then dropout (training only).
template <typename T>
Var<T> decode_with_queries(const Var<T>& hidden, const EnhancerUnit<T>& unit, const EnhancerOptions<T>& opt) {
  const Var<T> decoded = multi_head_attention(unit.queries, hidden, unit.stage2, opt.heads, opt.trace);
  const Var<T> pooled = mean_rows(decoded);
  if (!opt.training || opt.dropout == 0.0) return pooled;
  if (!opt.rng) throw UsageError("decode_with_queries: training dropout needs an rng");
  return dropout(pooled, opt.dropout, *opt.rng, true);
}

template <typename T>
Var<T> enhance(const Var<T>& mention_tokens, const Var<T>& context, const EnhancerUnit<T>& unit,
               const EnhancerOptions<T>& opt) {
  return decode_with_queries(cross_attention(mention_tokens, context, unit.stage1, opt.heads, opt.trace), unit, opt);
}

template <typename T>
struct RefinedVisual {
  std::size_t object_count = 0;
  std::optional<Var<T>> rows;  // l×d, absent when l = 0
};

// v_i = [d_i, f_i]·proj for each detected object.
template <typename T>
RefinedVisual<T> refine_visual(const Var<T>& objects, const Var<T>& faces, const Var<T>& proj) {
  if (objects.shape().rows != faces.shape().rows) {
    throw DataError("refine_visual: " + std::to_string(objects.shape().rows) + " objects but " +
                    std::to_string(faces.shape().rows) + " face rows");
  }
  if (objects.shape().cols + faces.shape().cols != proj.shape().rows) {
    throw DimensionError("refine_visual: concatenated width " +
                         std::to_string(objects.shape().cols + faces.shape().cols) + " does not match projection " +
                         proj.shape().str());
  }
  RefinedVisual<T> out;
  out.object_count = objects.shape().rows;
  if (out.object_count == 0) return out;
  out.rows = matmul(concat_cols(objects, faces), proj);
  return out;
}

}  // namespace dwe
