#include "stylediff/denoiser.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

#include "stylediff/config_tensors.hpp"

namespace stylediff {

DenoiserConfig DenoiserConfig::full_scale() {
  DenoiserConfig c;
  c.feature_dim = 1024;
  c.model_dim = 256;
  c.heads = 8;
  c.audio_layers = 3;
  c.style_layers = 3;
  c.decoder_layers = 3;
  c.ff_dim = 1024;
  return c;
}

void DenoiserConfig::store_into(TensorMap& out) const {
  put_setting(out, "feature_dim", double(feature_dim));
  put_setting(out, "motion_dim", double(motion_dim));
  put_setting(out, "model_dim", double(model_dim));
  put_setting(out, "heads", double(heads));
  put_setting(out, "audio_layers", double(audio_layers));
  put_setting(out, "style_layers", double(style_layers));
  put_setting(out, "decoder_layers", double(decoder_layers));
  put_setting(out, "ff_dim", double(ff_dim));
  put_setting(out, "half_window", double(half_window));
  put_setting(out, "null_frames", double(null_frames));
}

DenoiserConfig DenoiserConfig::load_from(const TensorMap& in) {
  DenoiserConfig c;
  c.feature_dim = get_size_setting(in, "feature_dim");
  c.motion_dim = get_size_setting(in, "motion_dim");
  c.model_dim = get_size_setting(in, "model_dim");
  c.heads = get_size_setting(in, "heads");
  c.audio_layers = get_size_setting(in, "audio_layers");
  c.style_layers = get_size_setting(in, "style_layers");
  c.decoder_layers = get_size_setting(in, "decoder_layers");
  c.ff_dim = get_size_setting(in, "ff_dim");
  c.half_window = get_size_setting(in, "half_window");
  c.null_frames = get_size_setting(in, "null_frames");
  return c;
}

template <typename T>
Tensor<T> audio_windows(const Tensor<float>& audio, const std::vector<std::size_t>& frames,
                        std::size_t half_window) {
  const std::size_t L = audio.rows(), F = audio.cols(), W = 2 * half_window + 1;
  if (L == 0) throw std::invalid_argument("audio_windows: empty audio");
  Tensor<T> out = Tensor<T>::matrix(frames.size() * W, F);
  for (std::size_t b = 0; b < frames.size(); ++b) {
    if (frames[b] >= L) throw std::out_of_range("audio_windows: frame index beyond audio length");
    for (std::size_t j = 0; j < W; ++j) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(
          std::ptrdiff_t(frames[b] + j) - std::ptrdiff_t(half_window), 0, std::ptrdiff_t(L) - 1);
      const auto row = audio.row(std::size_t(src));
      std::copy(row.begin(), row.end(), out.row(b * W + j).begin());
    }
  }
  return out;
}

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  if (c.half_window == 0 || c.motion_dim == 0 || c.feature_dim == 0 || c.model_dim % 2 != 0) {
    throw std::invalid_argument("denoiser: invalid configuration");
  }
  Rng rng(seed);
  Builder<T> root(store_, rng);
  const std::size_t d = c.model_dim;

  Builder<T> audio = root.sub("audio_encoder");
  audio_in_ = Linear<T>::make(audio.sub("in"), c.feature_dim, d);
  for (std::size_t i = 0; i < c.audio_layers; ++i) {
    audio_layers_.push_back(EncoderLayer<T>::make(audio.sub("layer" + std::to_string(i)), d, c.heads, c.ff_dim));
  }
  audio_norm_ = LayerNorm<T>::make(audio.sub("norm"), d);
  audio_out_ = Linear<T>::make(audio.sub("out"), d, d);

  Builder<T> style = root.sub("style_encoder");
  style_in_ = Linear<T>::make(style.sub("in"), c.motion_dim, d);
  for (std::size_t i = 0; i < c.style_layers; ++i) {
    style_layers_.push_back(EncoderLayer<T>::make(style.sub("layer" + std::to_string(i)), d, c.heads, c.ff_dim));
  }
  style_norm_ = LayerNorm<T>::make(style.sub("norm"), d);
  style_pool_ = AttentionPool<T>::make(style.sub("pool"), d);

  Builder<T> dec = root.sub("decoder");
  kv_in_ = Linear<T>::make(dec.sub("kv_in"), d + c.motion_dim, d);
  step_embed_ = StepEmbedding<T>::make(dec.sub("step"), d);
  for (std::size_t i = 0; i < c.decoder_layers; ++i) {
    decoder_layers_.push_back(DecoderLayer<T>::make(dec.sub("layer" + std::to_string(i)), d, c.heads, c.ff_dim));
  }
  decoder_norm_ = LayerNorm<T>::make(dec.sub("norm"), d);
  head_ = Linear<T>::make(dec.sub("head"), d, c.motion_dim, true);
}

template <typename T>
Var<T> Denoiser<T>::encode_audio(const Context<T>& ctx, const Tensor<T>& windows) const {
  const std::size_t W = config_.window();
  if (windows.cols() != config_.feature_dim || windows.rows() == 0 || windows.rows() % W != 0) {
    throw std::invalid_argument("encode_audio: expected stacked windows of " + std::to_string(W) +
                                " x " + std::to_string(config_.feature_dim) + ", got " +
                                shape_string(windows.shape()));
  }
  const std::size_t segments = windows.rows() / W;
  Var<T> x = audio_in_(ctx, ctx.constant(windows));
  x = ag::add(x, ctx.constant(positional_rows<T>(segments, W, config_.model_dim)));
  for (const auto& layer : audio_layers_) x = layer(ctx, x, segments, W);
  return audio_out_(ctx, audio_norm_(ctx, x));
}

template <typename T>
Var<T> Denoiser<T>::encode_style(const Context<T>& ctx, const Tensor<T>& references,
                                 std::size_t frames) const {
  if (frames == 0 || frames > config_.max_reference) {
    throw std::invalid_argument("encode_style: reference length " + std::to_string(frames) +
                                " outside [1, " + std::to_string(config_.max_reference) + "]");
  }
  if (references.cols() != config_.motion_dim || references.rows() == 0 || references.rows() % frames != 0) {
    throw std::invalid_argument("encode_style: references must be stacked clips of " +
                                std::to_string(frames) + " frames");
  }
  const std::size_t segments = references.rows() / frames;
  Var<T> x = style_in_(ctx, ctx.constant(references));
  x = ag::add(x, ctx.constant(positional_rows<T>(segments, frames, config_.model_dim)));
  for (const auto& layer : style_layers_) x = layer(ctx, x, segments, frames);
  return style_pool_(ctx, style_norm_(ctx, x), frames);
}

template <typename T>
Var<T> Denoiser<T>::decode(const Context<T>& ctx, Var<T> noisy, const std::vector<std::size_t>& steps,
                           Var<T> audio_tokens, Var<T> codes) const {
  const std::size_t W = config_.window();
  const std::size_t batch = noisy.rows();
  if (noisy.cols() != config_.motion_dim || steps.size() != batch || codes.rows() != batch ||
      audio_tokens.rows() != batch * W) {
    throw std::invalid_argument("decode: batch layout mismatch");
  }
  Var<T> kv = kv_in_(ctx, ag::concat_cols(audio_tokens, ag::repeat_rows(noisy, W)));
  kv = ag::add(kv, ag::repeat_rows(step_embed_(ctx, steps), W));
  Var<T> q = ag::add(ag::repeat_rows(codes, W), ctx.constant(positional_rows<T>(batch, W, config_.model_dim)));
  for (const auto& layer : decoder_layers_) q = layer(ctx, q, kv, batch, W, W);
  std::vector<std::size_t> middle(batch);
  for (std::size_t b = 0; b < batch; ++b) middle[b] = b * W + config_.half_window;
  return head_(ctx, ag::select_rows(decoder_norm_(ctx, q), std::move(middle)));
}

template <typename T>
Tensor<T> Denoiser<T>::style_code(const Tensor<T>& reference) const {
  const std::size_t n = reference.rows();
  if (n < 64 || n > 256) {
    std::clog << "warning: style reference of " << n << " frames is outside the 64-256 training range\n";
  }
  Tape<T> tape(false);
  const Context<T> ctx{tape, false, false};
  return encode_style(ctx, reference, n).value();
}

template <typename T>
Tensor<T> Denoiser<T>::null_code() const {
  Tape<T> tape(false);
  const Context<T> ctx{tape, false, false};
  return encode_style(ctx, Tensor<T>::matrix(config_.null_frames, config_.motion_dim), config_.null_frames).value();
}

template <typename T>
Tensor<T> Denoiser<T>::audio_tokens(const Tensor<T>& windows) const {
  Tape<T> tape(false);
  const Context<T> ctx{tape, false, false};
  return encode_audio(ctx, windows).value();
}

template <typename T>
Tensor<T> Denoiser<T>::predict(const Tensor<T>& noisy, const std::vector<std::size_t>& steps,
                               const Tensor<T>& audio_tokens, const Tensor<T>& codes) const {
  Tape<T> tape(false);
  const Context<T> ctx{tape, false, false};
  return decode(ctx, ctx.constant(noisy), steps, ctx.constant(audio_tokens), ctx.constant(codes)).value();
}

template <typename T>
Tensor<T> Denoiser<T>::cfg_predict(const Tensor<T>& noisy, const std::vector<std::size_t>& steps,
                                   const Tensor<T>& audio_tokens, const Tensor<T>& codes,
                                   const Tensor<T>& null_codes, double omega) const {
  if (omega == 1.0) return predict(noisy, steps, audio_tokens, codes);
  if (omega == 0.0) return predict(noisy, steps, audio_tokens, null_codes);
  Tensor<T> cond = predict(noisy, steps, audio_tokens, codes);
  const Tensor<T> uncond = predict(noisy, steps, audio_tokens, null_codes);
  const T w = static_cast<T>(omega);
  for (std::size_t i = 0; i < cond.size(); ++i) cond[i] = w * cond[i] + (T(1) - w) * uncond[i];
  return cond;
}

template <typename T>
TensorMap Denoiser<T>::state() const {
  TensorMap out = store_.snapshot();
  config_.store_into(out);
  return out;
}

template <typename T>
std::unique_ptr<Denoiser<T>> Denoiser<T>::from_state(const TensorMap& state) {
  auto model = std::make_unique<Denoiser<T>>(DenoiserConfig::load_from(state), 0);
  model->store_.restore(state);
  return model;
}

template class Denoiser<float>;
template class Denoiser<double>;
template Tensor<float> audio_windows<float>(const Tensor<float>&, const std::vector<std::size_t>&, std::size_t);
template Tensor<double> audio_windows<double>(const Tensor<float>&, const std::vector<std::size_t>&, std::size_t);

}  // namespace stylediff
