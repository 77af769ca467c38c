#include "stylediff/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace stylediff {

template <typename T>
Parameter<T>& Builder<T>::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(double(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(*rng_));
  return store_->add(path(name), std::move(t));
}

template <typename T>
Parameter<T>& Builder<T>::normal(const std::string& name, Shape shape, double stddev) {
  Tensor<T> t(std::move(shape));
  t.storage() = normal_vector<T>(*rng_, t.size(), stddev);
  return store_->add(path(name), std::move(t));
}

template <typename T>
Parameter<T>& Builder<T>::constant(const std::string& name, Shape shape, T value, bool trainable) {
  return store_->add(path(name), Tensor<T>(std::move(shape), value), trainable);
}

template <typename T>
Linear<T> Linear<T>::make(Builder<T> b, std::size_t in, std::size_t out, bool zero_init) {
  Linear l;
  l.weight = zero_init ? &b.constant("weight", {in, out}, T(0)) : &b.uniform("weight", {in, out}, in);
  l.bias = &b.constant("bias", {out}, T(0));
  return l;
}

template <typename T>
Var<T> Linear<T>::operator()(const Context<T>& ctx, Var<T> x) const {
  return ag::linear(x, ctx.bind(*weight), ctx.bind(*bias));
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(Builder<T> b, std::size_t dim) {
  return {&b.constant("gamma", {dim}, T(1)), &b.constant("beta", {dim}, T(0))};
}

template <typename T>
Var<T> LayerNorm<T>::operator()(const Context<T>& ctx, Var<T> x) const {
  return ag::layer_norm(x, ctx.bind(*gamma), ctx.bind(*beta));
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::make(Builder<T> b, std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.q = Linear<T>::make(b.sub("q"), dim, dim);
  m.k = Linear<T>::make(b.sub("k"), dim, dim);
  m.v = Linear<T>::make(b.sub("v"), dim, dim);
  m.out = Linear<T>::make(b.sub("out"), dim, dim, true);
  m.heads = heads;
  return m;
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(const Context<T>& ctx, Var<T> query, Var<T> kv,
                                         std::size_t segments, std::size_t query_len,
                                         std::size_t key_len) const {
  const kernels::AttentionShape shape{segments, query_len, key_len, heads, q.out_dim()};
  const Var<T> mixed = ag::attention(q(ctx, query), k(ctx, kv), v(ctx, kv), shape);
  return out(ctx, mixed);
}

template <typename T>
FeedForward<T> FeedForward<T>::make(Builder<T> b, std::size_t dim, std::size_t hidden) {
  return {Linear<T>::make(b.sub("up"), dim, hidden), Linear<T>::make(b.sub("down"), hidden, dim, true)};
}

template <typename T>
Var<T> FeedForward<T>::operator()(const Context<T>& ctx, Var<T> x) const {
  return down(ctx, ag::gelu(up(ctx, x)));
}

template <typename T>
EncoderLayer<T> EncoderLayer<T>::make(Builder<T> b, std::size_t dim, std::size_t heads,
                                      std::size_t ff_dim) {
  EncoderLayer l;
  l.norm_attn = LayerNorm<T>::make(b.sub("norm_attn"), dim);
  l.attn = MultiHeadAttention<T>::make(b.sub("attn"), dim, heads);
  l.norm_ff = LayerNorm<T>::make(b.sub("norm_ff"), dim);
  l.ff = FeedForward<T>::make(b.sub("ff"), dim, ff_dim);
  return l;
}

template <typename T>
Var<T> EncoderLayer<T>::operator()(const Context<T>& ctx, Var<T> x, std::size_t segments,
                                   std::size_t len) const {
  const Var<T> h = norm_attn(ctx, x);
  x = ag::add(x, attn(ctx, h, h, segments, len, len));
  return ag::add(x, ff(ctx, norm_ff(ctx, x)));
}

template <typename T>
DecoderLayer<T> DecoderLayer<T>::make(Builder<T> b, std::size_t dim, std::size_t heads,
                                      std::size_t ff_dim) {
  DecoderLayer l;
  l.norm_self = LayerNorm<T>::make(b.sub("norm_self"), dim);
  l.self_attn = MultiHeadAttention<T>::make(b.sub("self_attn"), dim, heads);
  l.norm_cross = LayerNorm<T>::make(b.sub("norm_cross"), dim);
  l.cross_attn = MultiHeadAttention<T>::make(b.sub("cross_attn"), dim, heads);
  l.norm_ff = LayerNorm<T>::make(b.sub("norm_ff"), dim);
  l.ff = FeedForward<T>::make(b.sub("ff"), dim, ff_dim);
  return l;
}

template <typename T>
Var<T> DecoderLayer<T>::operator()(const Context<T>& ctx, Var<T> x, Var<T> kv, std::size_t segments,
                                   std::size_t query_len, std::size_t key_len) const {
  const Var<T> h = norm_self(ctx, x);
  x = ag::add(x, self_attn(ctx, h, h, segments, query_len, query_len));
  x = ag::add(x, cross_attn(ctx, norm_cross(ctx, x), kv, segments, query_len, key_len));
  return ag::add(x, ff(ctx, norm_ff(ctx, x)));
}

template <typename T>
AttentionPool<T> AttentionPool<T>::make(Builder<T> b, std::size_t dim) {
  return {&b.uniform("score", {dim}, dim)};
}

template <typename T>
Var<T> AttentionPool<T>::operator()(const Context<T>& ctx, Var<T> x, std::size_t segment_len) const {
  return ag::attention_pool(x, ctx.bind(*score), segment_len);
}

template <typename T>
ConvBlock<T> ConvBlock<T>::make(Builder<T> b, std::size_t in, std::size_t out, std::size_t kernel,
                                std::size_t stride, bool residual) {
  if (residual && (stride != 1 || in != out)) {
    throw std::invalid_argument("conv block: residual form needs stride 1 and equal widths");
  }
  ConvBlock c;
  c.weight = &b.uniform("weight", {out, in, kernel}, in * kernel);
  c.bias = &b.constant("bias", {out}, T(0));
  c.gamma = &b.constant("bn/gamma", {out}, T(1));
  c.beta = &b.constant("bn/beta", {out}, T(0));
  c.running_mean = &b.constant("bn/running_mean", {out}, T(0), false);
  c.running_var = &b.constant("bn/running_var", {out}, T(1), false);
  c.stride = stride;
  c.pad = kernel / 2;
  c.residual = residual;
  return c;
}

template <typename T>
std::size_t ConvBlock<T>::output_length(std::size_t len) const {
  const std::size_t kernel = weight->value.shape()[2];
  if (len + 2 * pad < kernel) throw std::invalid_argument("conv block: sequence shorter than kernel");
  return (len + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Var<T> ConvBlock<T>::operator()(const Context<T>& ctx, Var<T> x, std::size_t segment_len) const {
  Var<T> h = ag::conv1d(x, ctx.bind(*weight), ctx.bind(*bias), segment_len, stride, pad);
  // Statistics only move when the block itself is being trained.
  const bool batch_stats = ctx.training && ctx.train_params;
  h = ag::batch_norm(h, ctx.bind(*gamma), ctx.bind(*beta), running_mean->value, running_var->value,
                     batch_stats);
  if (residual) h = ag::add(h, x);
  return ag::relu(h);
}

template <typename T>
std::vector<T> sinusoidal_embedding(std::size_t index, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("sinusoidal embedding: dim must be even");
  std::vector<T> out(dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, -2.0 * double(k) / double(dim));
    const double angle = double(index) * freq;
    out[2 * k] = static_cast<T>(std::sin(angle));
    out[2 * k + 1] = static_cast<T>(std::cos(angle));
  }
  return out;
}

template <typename T>
Tensor<T> positional_rows(std::size_t segments, std::size_t len, std::size_t dim) {
  Tensor<T> out = Tensor<T>::matrix(segments * len, dim);
  for (std::size_t i = 0; i < len; ++i) {
    const auto code = sinusoidal_embedding<T>(i, dim);
    for (std::size_t s = 0; s < segments; ++s) std::copy(code.begin(), code.end(), out.row(s * len + i).begin());
  }
  return out;
}

template <typename T>
StepEmbedding<T> StepEmbedding<T>::make(Builder<T> b, std::size_t dim) {
  return {Linear<T>::make(b.sub("first"), dim, dim), Linear<T>::make(b.sub("second"), dim, dim)};
}

template <typename T>
Var<T> StepEmbedding<T>::operator()(const Context<T>& ctx, const std::vector<std::size_t>& steps) const {
  const std::size_t dim = first.in_dim();
  Tensor<T> codes = Tensor<T>::matrix(steps.size(), dim);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto code = sinusoidal_embedding<T>(steps[i], dim);
    std::copy(code.begin(), code.end(), codes.row(i).begin());
  }
  return second(ctx, ag::gelu(first(ctx, ctx.constant(std::move(codes)))));
}

#define STYLEDIFF_INSTANTIATE_LAYERS(T)                                               \
  template class Builder<T>;                                                          \
  template struct Linear<T>;                                                          \
  template struct LayerNorm<T>;                                                       \
  template struct MultiHeadAttention<T>;                                              \
  template struct FeedForward<T>;                                                     \
  template struct EncoderLayer<T>;                                                    \
  template struct DecoderLayer<T>;                                                    \
  template struct AttentionPool<T>;                                                   \
  template struct ConvBlock<T>;                                                       \
  template struct StepEmbedding<T>;                                                   \
  template std::vector<T> sinusoidal_embedding<T>(std::size_t, std::size_t);          \
  template Tensor<T> positional_rows<T>(std::size_t, std::size_t, std::size_t);

STYLEDIFF_INSTANTIATE_LAYERS(float)
STYLEDIFF_INSTANTIATE_LAYERS(double)

}  // namespace stylediff
