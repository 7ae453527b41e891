#pragma once

// Minimal reverse-mode differentiation over dense arrays.
//
// A Tape records every primitive application in order. A Tensor is a cheap
// handle (tape pointer + node id). Calling Tape::backward on a scalar walks
// the tape in exact reverse order and accumulates adjoints additively.
//
// Parameters live outside the tape so they survive Tape::clear(); binding a
// Parameter onto a tape routes its adjoint straight into Parameter::grad.

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "affectseq/errors.hpp"

namespace affectseq::grad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

/// Trainable array owned outside any tape.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)), value(numel(shape)), grad(value.size()) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::span<const T> value() const;
  /// Adjoint; empty until backward reached this tensor.
  std::span<const T> grad() const;
  bool requires_grad() const;
  /// Value of a one-element tensor.
  T item() const;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool defined() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> constant(Shape shape, std::vector<T> value);
  Tensor<T> variable(Shape shape, std::vector<T> value);
  Tensor<T> bind(Parameter<T>& param);

  /// Appends a primitive result. `fn` propagates the node's adjoint to its inputs.
  Tensor<T> record(Shape shape, std::vector<T> value, bool requires_grad, BackwardFn fn);

  /// Reverse sweep from a one-element tensor. Intermediate adjoints are reset
  /// first; leaf and parameter adjoints accumulate across calls.
  void backward(const Tensor<T>& loss);

  /// Adds `g` into the adjoint of node `id` (no-op when it needs no gradient).
  void accumulate(std::size_t id, std::span<const T> g);
  /// Mutable adjoint buffer of `id`, allocated on first use; empty span if no grad needed.
  std::span<T> grad_buffer(std::size_t id);

  /// With gradients disabled, bound parameters act as constants and no
  /// backward closures are recorded.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

// ---- primitives -----------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);
/// Elementwise arithmetic with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Flat gather: out[i] = x.flat[indices[i]], shape {indices.size()}.
template <typename T> Tensor<T> take(const Tensor<T>& x, std::span<const std::size_t> indices);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim = true);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim = true);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
/// Exact (erf-based) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);

/// Max-shifted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);
/// Zero-mean, unit-variance normalization along `axis` (population variance).
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, T eps = T(1e-5));

/// Inverted dropout; identity when !train or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, T p, bool train, std::mt19937_64& rng);

/// input T x Cin, kernel K x Cin x Cout -> T x Cout. Left-pads (K-1)*dilation
/// zeros so output step t only sees input steps <= t.
template <typename T>
Tensor<T> dilated_causal_conv1d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t dilation);

/// Replaces entries where mask[i] is true with `fill`; their adjoint is zero.
template <typename T> Tensor<T> masked_fill(const Tensor<T>& x, const std::vector<bool>& mask, T fill);

/// Elementwise logit-space binary cross-entropy:
/// max(x,0) - x*y + log(1 + exp(-|x|)).
template <typename T> Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

// operator sugar
template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

#define AFFECTSEQ_GRAD_EXTERN(T)                                                                                   \
  extern template class Tape<T>;                                                                                   \
  extern template class Tensor<T>;                                                                                 \
  extern template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  extern template Tensor<T> transpose(const Tensor<T>&);                                                           \
  extern template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
  extern template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                          \
  extern template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  extern template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  extern template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  extern template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                              \
  extern template Tensor<T> scale(const Tensor<T>&, T);                                                            \
  extern template Tensor<T> add_scalar(const Tensor<T>&, T);                                                       \
  extern template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                                       \
  extern template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                        \
  extern template Tensor<T> take(const Tensor<T>&, std::span<const std::size_t>);                                  \
  extern template Tensor<T> sum(const Tensor<T>&);                                                                 \
  extern template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                              \
  extern template Tensor<T> mean(const Tensor<T>&);                                                                \
  extern template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                             \
  extern template Tensor<T> relu(const Tensor<T>&);                                                                \
  extern template Tensor<T> gelu(const Tensor<T>&);                                                                \
  extern template Tensor<T> tanh(const Tensor<T>&);                                                                \
  extern template Tensor<T> sigmoid(const Tensor<T>&);                                                             \
  extern template Tensor<T> exp(const Tensor<T>&);                                                                 \
  extern template Tensor<T> log(const Tensor<T>&);                                                                 \
  extern template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                \
  extern template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                            \
  extern template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, T);                                          \
  extern template Tensor<T> dropout(const Tensor<T>&, T, bool, std::mt19937_64&);                                  \
  extern template Tensor<T> dilated_causal_conv1d(const Tensor<T>&, const Tensor<T>&, std::size_t);                \
  extern template Tensor<T> masked_fill(const Tensor<T>&, const std::vector<bool>&, T);                            \
  extern template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);

AFFECTSEQ_GRAD_EXTERN(float)
AFFECTSEQ_GRAD_EXTERN(double)

}  // namespace affectseq::grad
