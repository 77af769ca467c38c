#pragma once

// Building blocks shared by the three networks. Layers hold pointers into a
// ParameterStore and bind them to a tape on every forward pass.

#include <cstddef>
#include <string>
#include <vector>

#include "stylediff/autograd.hpp"
#include "stylediff/params.hpp"
#include "stylediff/random.hpp"

namespace stylediff {

template <typename T>
struct Context {
  Tape<T>& tape;
  /// False binds parameters as constants (frozen networks).
  bool train_params = true;
  /// Batch-norm mode.
  bool training = false;

  Var<T> bind(Parameter<T>& p) const { return tape.param(p, train_params); }
  Var<T> constant(Tensor<T> t) const { return tape.constant(std::move(t)); }
};

/// Creates named parameters under a path prefix.
template <typename T>
class Builder {
 public:
  Builder(ParameterStore<T>& store, Rng& rng, std::string prefix = "")
      : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

  Builder sub(const std::string& name) const {
    return Builder(*store_, *rng_, prefix_.empty() ? name : prefix_ + "/" + name);
  }
  const std::string& prefix() const { return prefix_; }

  /// Uniform in +-1/sqrt(fan_in).
  Parameter<T>& uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Parameter<T>& normal(const std::string& name, Shape shape, double stddev);
  Parameter<T>& constant(const std::string& name, Shape shape, T value, bool trainable = true);

 private:
  std::string path(const std::string& name) const {
    return prefix_.empty() ? name : prefix_ + "/" + name;
  }
  ParameterStore<T>* store_;
  Rng* rng_;
  std::string prefix_;
};

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // [in x out]
  Parameter<T>* bias = nullptr;

  static Linear make(Builder<T> b, std::size_t in, std::size_t out, bool zero_init = false);
  Var<T> operator()(const Context<T>& ctx, Var<T> x) const;
  std::size_t in_dim() const { return weight->value.shape()[0]; }
  std::size_t out_dim() const { return weight->value.shape()[1]; }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  static LayerNorm make(Builder<T> b, std::size_t dim);
  Var<T> operator()(const Context<T>& ctx, Var<T> x) const;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, out;
  std::size_t heads = 1;

  static MultiHeadAttention make(Builder<T> b, std::size_t dim, std::size_t heads);
  /// `query` is segments*query_len rows, `kv` is segments*key_len rows.
  Var<T> operator()(const Context<T>& ctx, Var<T> query, Var<T> kv, std::size_t segments,
                    std::size_t query_len, std::size_t key_len) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  static FeedForward make(Builder<T> b, std::size_t dim, std::size_t hidden);
  Var<T> operator()(const Context<T>& ctx, Var<T> x) const;
};

/// Pre-norm self-attention block.
template <typename T>
struct EncoderLayer {
  LayerNorm<T> norm_attn, norm_ff;
  MultiHeadAttention<T> attn;
  FeedForward<T> ff;

  static EncoderLayer make(Builder<T> b, std::size_t dim, std::size_t heads, std::size_t ff_dim);
  Var<T> operator()(const Context<T>& ctx, Var<T> x, std::size_t segments, std::size_t len) const;
};

/// Pre-norm block with self-attention over the queries and cross-attention
/// into a key/value sequence.
template <typename T>
struct DecoderLayer {
  LayerNorm<T> norm_self, norm_cross, norm_ff;
  MultiHeadAttention<T> self_attn, cross_attn;
  FeedForward<T> ff;

  static DecoderLayer make(Builder<T> b, std::size_t dim, std::size_t heads, std::size_t ff_dim);
  Var<T> operator()(const Context<T>& ctx, Var<T> x, Var<T> kv, std::size_t segments,
                    std::size_t query_len, std::size_t key_len) const;
};

template <typename T>
struct AttentionPool {
  Parameter<T>* score = nullptr;

  static AttentionPool make(Builder<T> b, std::size_t dim);
  Var<T> operator()(const Context<T>& ctx, Var<T> x, std::size_t segment_len) const;
};

/// Conv1d -> batch norm -> ReLU. The residual variant adds the block input
/// to the normalized pre-activation and requires stride 1 and equal widths.
template <typename T>
struct ConvBlock {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* running_mean = nullptr;
  Parameter<T>* running_var = nullptr;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool residual = false;

  static ConvBlock make(Builder<T> b, std::size_t in, std::size_t out, std::size_t kernel,
                        std::size_t stride, bool residual);
  std::size_t output_length(std::size_t len) const;
  Var<T> operator()(const Context<T>& ctx, Var<T> x, std::size_t segment_len) const;
};

/// Interleaved sin/cos code: [sin(i w_0), cos(i w_0), sin(i w_1), ...] with
/// w_k = 10000^(-2k/dim).
template <typename T>
std::vector<T> sinusoidal_embedding(std::size_t index, std::size_t dim);

/// Rows 0..len-1 of the sinusoidal code, tiled `segments` times.
template <typename T>
Tensor<T> positional_rows(std::size_t segments, std::size_t len, std::size_t dim);

/// Two-layer GELU MLP applied to sinusoidal step codes.
template <typename T>
struct StepEmbedding {
  Linear<T> first, second;

  static StepEmbedding make(Builder<T> b, std::size_t dim);
  Var<T> operator()(const Context<T>& ctx, const std::vector<std::size_t>& steps) const;
};

}  // namespace stylediff
