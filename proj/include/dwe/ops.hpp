#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dwe/errors.hpp"
#include "dwe/rng.hpp"
#include "dwe/tensor.hpp"

namespace dwe {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw UsageError("operands recorded on different tapes");
}

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// out += a·b  (a: p×q, b: q×r)
template <typename T>
void gemm_acc(const T* a, const T* b, T* out, std::size_t p, std::size_t q, std::size_t r) {
  using M = RowMajor<T>;
  Eigen::Map<M>(out, p, r).noalias() += Eigen::Map<const M>(a, p, q) * Eigen::Map<const M>(b, q, r);
}

// out += a·bᵀ  (a: p×q, b: r×q)
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* out, std::size_t p, std::size_t q, std::size_t r) {
  using M = RowMajor<T>;
  Eigen::Map<M>(out, p, r).noalias() += Eigen::Map<const M>(a, p, q) * Eigen::Map<const M>(b, r, q).transpose();
}

// out += aᵀ·b  (a: p×q, b: p×r) -> q×r
template <typename T>
void gemm_atb_acc(const T* a, const T* b, T* out, std::size_t p, std::size_t q, std::size_t r) {
  using M = RowMajor<T>;
  Eigen::Map<M>(out, q, r).noalias() += Eigen::Map<const M>(a, p, q).transpose() * Eigen::Map<const M>(b, p, r);
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) throw DimensionError("matmul: inner dimensions differ " + sa.str() + " x " + sb.str());
  Tensor<T> out(sa.rows, sb.cols);
  detail::gemm_acc(a.value().values.data(), b.value().values.data(), out.values.data(), sa.rows, sa.cols, sb.cols);
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(ib);
  return tape.push(std::move(out), needs, [ia, ib, sa, sb](Tape<T>& t, std::size_t self) {
    const auto& gc = t.grad(self);
    if (t.needs_grad(ia)) {
      detail::gemm_abt_acc(gc.data(), t.value(ib).values.data(), t.grad(ia).data(), sa.rows, sb.cols, sb.rows);
    }
    if (t.needs_grad(ib)) {
      detail::gemm_atb_acc(t.value(ia).values.data(), gc.data(), t.grad(ib).data(), sa.rows, sa.cols, sb.cols);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const Shape s = a.shape();
  Tensor<T> out(s.cols, s.rows);
  const auto& v = a.value().values;
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out.values[j * s.rows + i] = v[i * s.cols + j];
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < s.cols; ++j) ga[i * s.cols + j] += g[j * s.rows + i];
  });
}

namespace detail {

// Elementwise binary op with per-element partials.
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const char* name, const Var<T>& a, const Var<T>& b, F f, DA da, DB db) {
  require_same_tape(a, b);
  require_same_shape(name, a, b);
  const auto& va = a.value().values;
  const auto& vb = b.value().values;
  Tensor<T> out(a.shape().rows, a.shape().cols);
  for (std::size_t k = 0; k < va.size(); ++k) out.values[k] = f(va[k], vb[k]);
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(ib);
  return tape.push(std::move(out), needs, [ia, ib, da, db](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xa = t.value(ia).values;
    const auto& xb = t.value(ib).values;
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * da(xa[k], xb[k]);
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * db(xa[k], xb[k]);
    }
  });
}

// Elementwise unary op; `d(x, y)` is dy/dx given input x and output y.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D d) {
  const auto& va = a.value().values;
  Tensor<T> out(a.shape().rows, a.shape().cols);
  for (std::size_t k = 0; k < va.size(); ++k) out.values[k] = f(va[k]);
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, d](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia).values;
    const auto& y = t.value(self).values;
    auto& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * d(x[k], y[k]);
  });
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  return detail::binary<T>(
      "hadamard", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return detail::unary<T>(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

// a (p×q) + row (1×q) added to every row.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::require_same_tape(a, row);
  const Shape s = a.shape();
  if (row.shape().rows != 1 || row.shape().cols != s.cols) {
    throw DimensionError("add_row: expected 1x" + std::to_string(s.cols) + " row, got " + row.shape().str());
  }
  Tensor<T> out = Tensor<T>(s.rows, s.cols, a.value().values);
  const auto& vr = row.value().values;
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out.values[i * s.cols + j] += vr[j];
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ir = row.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(ir);
  return tape.push(std::move(out), needs, [ia, ir, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    }
    if (t.needs_grad(ir)) {
      auto& gr = t.grad(ir);
      for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) gr[j] += g[i * s.cols + j];
    }
  });
}

// a scaled by the 1×1 variable s.
template <typename T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  detail::require_same_tape(a, s);
  if (s.shape().size() != 1) throw DimensionError("scale_by: scalar expected, got " + s.shape().str());
  const T c = s.item();
  Tensor<T> out(a.shape().rows, a.shape().cols);
  const auto& va = a.value().values;
  for (std::size_t k = 0; k < va.size(); ++k) out.values[k] = c * va[k];
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, is = s.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(is);
  return tape.push(std::move(out), needs, [ia, is](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia).values;
    const T c = t.value(is).values[0];
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += c * g[k];
    }
    if (t.needs_grad(is)) {
      T acc = T(0);
      for (std::size_t k = 0; k < g.size(); ++k) acc += g[k] * x[k];
      t.grad(is)[0] += acc;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts.front().shape().rows;
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  bool needs = false;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.shape().rows != rows) {
      throw DimensionError("concat_cols: row count mismatch " + parts.front().shape().str() + " vs " + p.shape().str());
    }
    ids.push_back(p.id);
    widths.push_back(p.shape().cols);
    cols += p.shape().cols;
    needs = needs || p.tape->needs_grad(p.id);
  }
  Tensor<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value().values;
    const std::size_t w = p.shape().cols;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) out.values[i * cols + offset + j] = v[i * w + j];
    offset += w;
  }
  return parts.front().tape->push(std::move(out), needs, [ids, widths, rows, cols](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t n = 0; n < ids.size(); ++n) {
      const std::size_t w = widths[n];
      if (t.needs_grad(ids[n])) {
        auto& gp = t.grad(ids[n]);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + offset + j];
      }
      offset += w;
    }
  });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  return concat_cols<T>(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t cols = parts.front().shape().cols;
  Tensor<T> out(0, cols);
  std::vector<std::size_t> ids, sizes;
  bool needs = false;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.shape().cols != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts.front().shape().str() + " vs " + p.shape().str());
    }
    const auto& v = p.value().values;
    out.values.insert(out.values.end(), v.begin(), v.end());
    out.shape.rows += p.shape().rows;
    ids.push_back(p.id);
    sizes.push_back(v.size());
    needs = needs || p.tape->needs_grad(p.id);
  }
  return parts.front().tape->push(std::move(out), needs, [ids, sizes](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t n = 0; n < ids.size(); ++n) {
      if (t.needs_grad(ids[n])) {
        auto& gp = t.grad(ids[n]);
        for (std::size_t k = 0; k < sizes[n]; ++k) gp[k] += g[offset + k];
      }
      offset += sizes[n];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t count) {
  const Shape s = a.shape();
  if (start + count > s.cols) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + s.str());
  }
  Tensor<T> out(s.rows, count);
  const auto& v = a.value().values;
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out.values[i * count + j] = v[i * s.cols + start + j];
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s, start, count](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * s.cols + start + j] += g[i * count + j];
  });
}

template <typename T>
Var<T> row(const Var<T>& a, std::size_t index) {
  const Shape s = a.shape();
  if (index >= s.rows) throw DimensionError("row: index " + std::to_string(index) + " out of range for " + s.str());
  Tensor<T> out(1, s.cols);
  const auto& v = a.value().values;
  std::copy(v.begin() + index * s.cols, v.begin() + (index + 1) * s.cols, out.values.begin());
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s, index](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t j = 0; j < s.cols; ++j) ga[index * s.cols + j] += g[j];
  });
}

// Rows reordered lexicographically by value. Makes reductions over a set of
// rows independent of the order the rows arrived in.
template <typename T>
Var<T> sort_rows(const Var<T>& a) {
  const Shape s = a.shape();
  const auto& v = a.value().values;
  std::vector<std::size_t> order(s.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::lexicographical_compare(v.begin() + x * s.cols, v.begin() + (x + 1) * s.cols, v.begin() + y * s.cols,
                                        v.begin() + (y + 1) * s.cols);
  });
  Tensor<T> out(s.rows, s.cols);
  for (std::size_t i = 0; i < s.rows; ++i)
    std::copy(v.begin() + order[i] * s.cols, v.begin() + (order[i] + 1) * s.cols, out.values.begin() + i * s.cols);
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s, order](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < s.cols; ++j) ga[order[i] * s.cols + j] += g[i * s.cols + j];
  });
}

// p×q -> 1×q column means.
template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  const Shape s = a.shape();
  if (s.rows == 0) throw DimensionError("mean_rows: empty input " + s.str());
  Tensor<T> out(1, s.cols);
  const auto& v = a.value().values;
  const T inv = T(1) / static_cast<T>(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out.values[j] += v[i * s.cols + j];
  for (auto& x : out.values) x *= inv;
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s, inv](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < s.cols; ++j) ga[i * s.cols + j] += g[j] * inv;
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out(1, 1);
  for (T x : a.value().values) out.values[0] += x;
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& x : t.grad(ia)) x += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.shape().size()));
}

// Row-wise softmax with max subtraction.
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const Shape s = a.shape();
  Tensor<T> out(s.rows, s.cols);
  const auto& v = a.value().values;
  for (std::size_t i = 0; i < s.rows; ++i) {
    const T* x = v.data() + i * s.cols;
    T* y = out.values.data() + i * s.cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < s.cols; ++j) mx = std::max(mx, x[j]);
    T z = T(0);
    for (std::size_t j = 0; j < s.cols; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < s.cols; ++j) y[j] /= z;
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const std::size_t o = i * s.cols;
      T dot = T(0);
      for (std::size_t j = 0; j < s.cols; ++j) dot += g[o + j] * y[o + j];
      for (std::size_t j = 0; j < s.cols; ++j) ga[o + j] += y[o + j] * (g[o + j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  const Shape s = a.shape();
  Tensor<T> out(s.rows, s.cols);
  const auto& v = a.value().values;
  for (std::size_t i = 0; i < s.rows; ++i) {
    const T* x = v.data() + i * s.cols;
    T* y = out.values.data() + i * s.cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < s.cols; ++j) mx = std::max(mx, x[j]);
    T z = T(0);
    for (std::size_t j = 0; j < s.cols; ++j) z += std::exp(x[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < s.cols; ++j) y[j] = x[j] - lse;
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const std::size_t o = i * s.cols;
      T gsum = T(0);
      for (std::size_t j = 0; j < s.cols; ++j) gsum += g[o + j];
      for (std::size_t j = 0; j < s.cols; ++j) ga[o + j] += g[o + j] - std::exp(y[o + j]) * gsum;
    }
  });
}

// x / (‖x‖ + eps_norm) per row; zero rows map to zero.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a) {
  const Shape s = a.shape();
  Tensor<T> out(s.rows, s.cols);
  std::vector<T> norms(s.rows);
  const auto& v = a.value().values;
  for (std::size_t i = 0; i < s.rows; ++i) {
    T sq = T(0);
    for (std::size_t j = 0; j < s.cols; ++j) sq += v[i * s.cols + j] * v[i * s.cols + j];
    norms[i] = std::sqrt(sq);
    const T denom = norms[i] + static_cast<T>(kEpsNorm);
    for (std::size_t j = 0; j < s.cols; ++j) out.values[i * s.cols + j] = v[i * s.cols + j] / denom;
  }
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, s, norms](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia).values;
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const std::size_t o = i * s.cols;
      const T n = norms[i];
      const T denom = n + static_cast<T>(kEpsNorm);
      if (n == T(0)) {
        for (std::size_t j = 0; j < s.cols; ++j) ga[o + j] += g[o + j] / denom;
        continue;
      }
      // y = x / (n + e);  dy/dx = I/(n+e) - x xᵀ / (n (n+e)^2)
      T gx = T(0);
      for (std::size_t j = 0; j < s.cols; ++j) gx += g[o + j] * x[o + j];
      const T c = gx / (n * denom * denom);
      for (std::size_t j = 0; j < s.cols; ++j) ga[o + j] += g[o + j] / denom - c * x[o + j];
    }
  });
}

// Cosine similarity of two equal-shape tensors, treated as flat vectors.
// A zero-norm operand yields 0 and records a warning.
template <typename T>
Var<T> cosine(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("cosine", a, b);
  const auto& va = a.value().values;
  const auto& vb = b.value().values;
  T dot = T(0), saa = T(0), sbb = T(0);
  for (std::size_t k = 0; k < va.size(); ++k) {
    dot += va[k] * vb[k];
    saa += va[k] * va[k];
    sbb += vb[k] * vb[k];
  }
  const T na = std::sqrt(saa), nb = std::sqrt(sbb);
  if (na == T(0) || nb == T(0)) warn("cosine: zero-norm operand, similarity set to 0");
  const T denom = na * nb + static_cast<T>(kEpsNorm);
  const T c = dot / denom;
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  const bool needs = tape.needs_grad(ia) || tape.needs_grad(ib);
  return tape.push(Tensor<T>(1, 1, {c}), needs, [ia, ib, na, nb, denom, c](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    const auto& xa = t.value(ia).values;
    const auto& xb = t.value(ib).values;
    // c = dot / (na nb + e);  dc/da = b/denom - c * nb * a / (na * denom)
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      const T k = na > T(0) ? c * nb / (na * denom) : T(0);
      for (std::size_t j = 0; j < xa.size(); ++j) ga[j] += g * (xb[j] / denom - k * xa[j]);
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      const T k = nb > T(0) ? c * na / (nb * denom) : T(0);
      for (std::size_t j = 0; j < xb.size(); ++j) gb[j] += g * (xa[j] / denom - k * xb[j]);
    }
  });
}

// Inverted dropout: survivors scaled by 1/(1-p). Identity outside training.
template <typename T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return a;
  const auto& v = a.value().values;
  std::vector<T> mask(v.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out(a.shape().rows, a.shape().cols);
  for (std::size_t k = 0; k < v.size(); ++k) out.values[k] = v[k] * mask[k];
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), a.tape->needs_grad(ia), [ia, mask](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * mask[k];
  });
}

}  // namespace dwe
