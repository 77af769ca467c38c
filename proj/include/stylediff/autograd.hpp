#pragma once

// Tape-based reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation's output value together with a closure that
// pushes the output gradient back to its inputs. Values flowing through the
// networks are 2-D: batches of token sequences are stacked along rows and the
// sequence boundaries are passed to the ops that care (attention, pooling,
// convolution).

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "stylediff/kernels.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  /// Non-trainable entries (batch-norm statistics, fixed bases) are stored and
  /// checkpointed but never updated by the optimizer.
  bool trainable = true;

  void zero_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

template <typename T>
class Tape {
 public:
  /// Receives the op's output value and its accumulated gradient.
  using Backward = std::function<void(const Tensor<T>& out, const Tensor<T>& grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is kept (inputs under a finite-difference check).
  Var<T> input(Tensor<T> value);
  /// Binds a parameter. When `trainable` is false the value enters as a
  /// constant and no gradient is ever written back to the parameter.
  Var<T> param(Parameter<T>& p, bool trainable = true);

  /// Registers an op output. `backward` is dropped when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor<T>& grad(Var<T> v);
  bool has_grad(Var<T> v) const { return !nodes_[v.id].grad.empty(); }

  /// Reverse sweep from a scalar root. Parameter gradients are accumulated
  /// into `Parameter::grad`.
  void backward(Var<T> root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter<T>*, std::size_t>> bound_params_;
};

namespace ag {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// x[n x in] * w[in x out] + b[out]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
/// Each row of `x` repeated `times` times consecutively.
template <typename T>
Var<T> repeat_rows(Var<T> x, std::size_t times);
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b);
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> select_rows(Var<T> x, std::vector<std::size_t> rows);
template <typename T>
Var<T> relu(Var<T> x);
/// tanh-approximated GELU.
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const kernels::AttentionShape& shape);
/// Softmax-weighted average of each segment's rows, scored by `x * score`.
template <typename T>
Var<T> attention_pool(Var<T> x, Var<T> score, std::size_t segment_len);
template <typename T>
Var<T> segment_mean(Var<T> x, std::size_t segment_len);
/// Temporal convolution over segments of `segment_len` rows. `w` is
/// [out_channels x in_channels x kernel]; zero padding on both sides.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t segment_len, std::size_t stride,
               std::size_t pad);
/// Normalizes every column over all rows. Training mode uses batch moments
/// and updates the running statistics; eval mode uses the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));
/// Row-wise a.b / max(|a||b|, eps), as an [n x 1] column.
template <typename T>
Var<T> row_cosine(Var<T> a, Var<T> b, T eps);
/// Mean binary cross-entropy of probabilities clamped to [eps, 1 - eps].
template <typename T>
Var<T> bce_mean(Var<T> p, const std::vector<T>& labels, T eps);
/// Mean of -log(max(p, eps)).
template <typename T>
Var<T> neg_log_mean(Var<T> p, T eps);
/// Mean over rows of the squared L2 distance between rows.
template <typename T>
Var<T> squared_error(Var<T> pred, Var<T> target);
template <typename T>
Var<T> sum(Var<T> x);

}  // namespace ag

}  // namespace stylediff
