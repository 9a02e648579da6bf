#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "dwe/errors.hpp"

namespace dwe {

// Every tensor in the engine is a row-major matrix; vectors are 1×n rows.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << rows << "x" << cols << "]";
    return os.str();
  }
};

inline constexpr double kEpsNorm = 1e-12;

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until something writes a gradient
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols) : shape{rows, cols}, values(rows * cols, T(0)) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data) : shape{rows, cols}, values(std::move(data)) {
    if (values.size() != shape.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                           shape.str());
    }
  }

  static Tensor row(std::initializer_list<T> data) { return Tensor(1, data.size(), std::vector<T>(data)); }
  static Tensor row(std::vector<T> data) {
    const auto n = data.size();
    return Tensor(1, n, std::move(data));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> data) {
    Tensor t;
    t.shape.rows = data.size();
    t.shape.cols = data.size() ? data.begin()->size() : 0;
    for (const auto& r : data) {
      if (r.size() != t.shape.cols) throw DimensionError("ragged matrix literal");
      t.values.insert(t.values.end(), r.begin(), r.end());
    }
    return t;
  }

  std::size_t rows() const { return shape.rows; }
  std::size_t cols() const { return shape.cols; }
  T& at(std::size_t r, std::size_t c) { return values[r * shape.cols + c]; }
  T at(std::size_t r, std::size_t c) const { return values[r * shape.cols + c]; }
  T item() const { return values.at(0); }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(values.size(), T(0)); }

  bool all_finite() const {
    auto finite = [](T v) { return std::isfinite(v); };
    return std::all_of(values.begin(), values.end(), finite) && std::all_of(grad.begin(), grad.end(), finite);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape.rows, shape.cols);
    std::transform(values.begin(), values.end(), out.values.begin(), [](T v) { return static_cast<U>(v); });
    out.requires_grad = requires_grad;
    return out;
  }
};

template <typename T>
class Tape;

// Handle to a node recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  Shape shape() const { return value().shape; }
  T item() const { return value().item(); }
  const std::vector<T>& grad() const { return tape->grad(id); }
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so a
// reverse sweep visits every node after all of its consumers.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  // Leaf bound to a parameter; backward() accumulates into param.grad.
  Var<T> param(Tensor<T>& p) {
    Node& n = emplace(Tensor<T>(p.shape.rows, p.shape.cols, p.values), p.requires_grad);
    n.param = &p;
    return {this, nodes_.size() - 1};
  }

  Var<T> push(Tensor<T> value, bool needs_grad, Backward backward) {
    Node& n = emplace(std::move(value), needs_grad);
    if (needs_grad) n.backward = std::move(backward);
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].data; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  std::vector<T>& grad(std::size_t id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(nodes_[id].data.values.size(), T(0));
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Var<T>& loss) {
    if (loss.tape != this) throw UsageError("backward: variable belongs to another tape");
    if (loss.shape().size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + loss.shape().str());
    }
    grad(loss.id)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward && !n.grad.empty()) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (!n.param || !n.needs_grad) continue;
      if (!n.param->has_grad()) n.param->zero_grad();
      if (n.grad.empty()) continue;
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> data;
    std::vector<T> grad;
    Backward backward;
    Tensor<T>* param = nullptr;
    bool needs_grad = false;
  };

  Node& emplace(Tensor<T> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, needs_grad});
    return nodes_.back();
  }

  // deque keeps node references stable while closures append gradients
  std::deque<Node> nodes_;
};

}  // namespace dwe
