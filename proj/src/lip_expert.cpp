#include "stylediff/lip_expert.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stylediff/config_tensors.hpp"

namespace stylediff {

void LipExpertConfig::store_into(TensorMap& out) const {
  put_setting(out, "feature_dim", double(feature_dim));
  put_setting(out, "motion_dim", double(motion_dim));
  put_setting(out, "model_dim", double(model_dim));
  put_setting(out, "heads", double(heads));
  put_setting(out, "style_layers", double(style_layers));
  put_setting(out, "ff_dim", double(ff_dim));
  put_setting(out, "embed_dim", double(embed_dim));
  put_setting(out, "clip_length", double(clip_length));
  put_setting(out, "style_conditioned", style_conditioned ? 1.0 : 0.0);
}

LipExpertConfig LipExpertConfig::load_from(const TensorMap& in) {
  LipExpertConfig c;
  c.feature_dim = get_size_setting(in, "feature_dim");
  c.motion_dim = get_size_setting(in, "motion_dim");
  c.model_dim = get_size_setting(in, "model_dim");
  c.heads = get_size_setting(in, "heads");
  c.style_layers = get_size_setting(in, "style_layers");
  c.ff_dim = get_size_setting(in, "ff_dim");
  c.embed_dim = get_size_setting(in, "embed_dim");
  c.clip_length = get_size_setting(in, "clip_length");
  c.style_conditioned = get_setting(in, "style_conditioned") != 0.0;
  return c;
}

template <typename T>
LipExpert<T>::LipExpert(const LipExpertConfig& config, FaceBasis basis, std::uint64_t seed)
    : config_(config), basis_(std::move(basis)) {
  basis_.validate();
  if (basis_.motion_dim() != config_.motion_dim) {
    throw std::invalid_argument("lip expert: face basis motion width does not match the config");
  }
  mouth_mean_ = basis_.mouth_mean().template cast<T>();
  mouth_bases_t_ = basis_.mouth_bases_t().template cast<T>();

  const auto& c = config_;
  const std::size_t d = c.model_dim, E = c.embed_dim, hidden = 128;
  Rng rng(seed);
  Builder<T> root(store_, rng);

  Builder<T> style = root.sub("style_encoder");
  style_in_ = Linear<T>::make(style.sub("in"), c.motion_dim, d);
  for (std::size_t i = 0; i < c.style_layers; ++i) {
    style_layers_.push_back(EncoderLayer<T>::make(style.sub("layer" + std::to_string(i)), d, c.heads, c.ff_dim));
  }
  style_norm_ = LayerNorm<T>::make(style.sub("norm"), d);
  style_pool_ = AttentionPool<T>::make(style.sub("pool"), d);

  Builder<T> audio = root.sub("audio_embed");
  audio_conv1_ = ConvBlock<T>::make(audio.sub("conv1"), c.feature_dim, 32, 3, 2, false);
  audio_conv2_ = ConvBlock<T>::make(audio.sub("conv2"), 32 + d, 64, 3, 2, false);
  audio_conv3_ = ConvBlock<T>::make(audio.sub("conv3"), 64, hidden, 3, 2, false);
  audio_fc1_ = Linear<T>::make(audio.sub("fc1"), hidden, hidden);
  audio_fc2_ = Linear<T>::make(audio.sub("fc2"), hidden, E);

  Builder<T> mouth = root.sub("mouth_embed");
  mouth_in_ = Linear<T>::make(mouth.sub("in"), basis_.mouth_coords(), hidden);
  mouth_mix_ = Linear<T>::make(mouth.sub("mix"), hidden + d, hidden);
  mouth_res1_ = ConvBlock<T>::make(mouth.sub("res1"), hidden, hidden, 3, 1, true);
  mouth_res2_ = ConvBlock<T>::make(mouth.sub("res2"), hidden, hidden, 3, 1, true);
  mouth_fc1_ = Linear<T>::make(mouth.sub("fc1"), hidden, hidden);
  mouth_fc2_ = Linear<T>::make(mouth.sub("fc2"), hidden, E);
}

template <typename T>
Var<T> LipExpert<T>::style_features(const Context<T>& ctx, const Tensor<T>& references,
                                    std::size_t frames) const {
  if (frames == 0 || references.cols() != config_.motion_dim || references.rows() % frames != 0) {
    throw std::invalid_argument("lip expert: malformed style references");
  }
  const std::size_t segments = references.rows() / frames;
  if (!config_.style_conditioned) return ctx.constant(Tensor<T>::matrix(segments, config_.model_dim));
  Var<T> x = style_in_(ctx, ctx.constant(references));
  x = ag::add(x, ctx.constant(positional_rows<T>(segments, frames, config_.model_dim)));
  for (const auto& layer : style_layers_) x = layer(ctx, x, segments, frames);
  return style_pool_(ctx, style_norm_(ctx, x), frames);
}

template <typename T>
Var<T> LipExpert<T>::mouth(const Context<T>& ctx, Var<T> motion) const {
  const Var<T> bases = ctx.constant(mouth_bases_t_);
  const Var<T> mean = ctx.constant(Tensor<T>({mouth_mean_.size()}, mouth_mean_.storage()));
  return ag::linear(motion, bases, mean);
}

template <typename T>
Var<T> LipExpert<T>::embed_audio(const Context<T>& ctx, Var<T> audio, Var<T> style) const {
  const std::size_t n = config_.clip_length;
  if (audio.cols() != config_.feature_dim || audio.rows() != style.rows() * n) {
    throw std::invalid_argument("lip expert: audio clip length does not match the style batch");
  }
  Var<T> h = audio_conv1_(ctx, audio, n);
  std::size_t len = audio_conv1_.output_length(n);
  h = ag::concat_cols(h, ag::repeat_rows(style, len));
  h = audio_conv2_(ctx, h, len);
  len = audio_conv2_.output_length(len);
  h = audio_conv3_(ctx, h, len);
  len = audio_conv3_.output_length(len);
  h = ag::segment_mean(h, len);
  h = ag::relu(audio_fc1_(ctx, h));
  return ag::relu(audio_fc2_(ctx, h));
}

template <typename T>
Var<T> LipExpert<T>::embed_mouth(const Context<T>& ctx, Var<T> mouth_coords, Var<T> style) const {
  const std::size_t n = config_.clip_length;
  if (mouth_coords.cols() != basis_.mouth_coords() || mouth_coords.rows() != style.rows() * n) {
    throw std::invalid_argument("lip expert: mouth clip length does not match the style batch");
  }
  Var<T> h = ag::relu(mouth_in_(ctx, mouth_coords));
  h = ag::relu(mouth_mix_(ctx, ag::concat_cols(h, ag::repeat_rows(style, n))));
  h = mouth_res1_(ctx, h, n);
  h = mouth_res2_(ctx, h, n);
  h = ag::segment_mean(h, n);
  h = ag::relu(mouth_fc1_(ctx, h));
  return ag::relu(mouth_fc2_(ctx, h));
}

template <typename T>
Var<T> LipExpert<T>::sync_probability(const Context<T>& ctx, Var<T> audio, Var<T> motion, Var<T> style) const {
  const Var<T> e_mouth = embed_mouth(ctx, mouth(ctx, motion), style);
  const Var<T> e_audio = embed_audio(ctx, audio, style);
  return ag::row_cosine(e_mouth, e_audio, static_cast<T>(kCosineEps));
}

template <typename T>
TensorMap LipExpert<T>::state() const {
  TensorMap out = store_.snapshot();
  config_.store_into(out);
  basis_.store_into(out);
  return out;
}

template <typename T>
std::unique_ptr<LipExpert<T>> LipExpert<T>::from_state(const TensorMap& state) {
  auto model = std::make_unique<LipExpert<T>>(LipExpertConfig::load_from(state), FaceBasis::load_from(state), 0);
  model->store_.restore(state);
  return model;
}

double sync_probability(const std::vector<double>& e_mouth, const std::vector<double>& e_audio) {
  if (e_mouth.size() != e_audio.size()) throw std::invalid_argument("sync_probability: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < e_mouth.size(); ++i) {
    dot += e_mouth[i] * e_audio[i];
    na += e_mouth[i] * e_mouth[i];
    nb += e_audio[i] * e_audio[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), kCosineEps);
}

double expert_loss(double probability, bool in_sync) {
  const double p = std::clamp(probability, kProbabilityEps, 1.0 - kProbabilityEps);
  return in_sync ? -std::log(p) : -std::log(1.0 - p);
}

template class LipExpert<float>;
template class LipExpert<double>;

}  // namespace stylediff
