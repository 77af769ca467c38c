#pragma once

// Denoising network: predicts a clean motion frame from a noisy frame, the
// diffusion step, an audio window and a style code. Audio tokens come from a
// transformer encoder; the style code comes from a second encoder pooled by
// self-attention over a reference motion clip. A transformer decoder uses the
// repeated style code as queries and the (audio, noisy motion, step) tokens as
// keys/values; the middle output token is projected to the motion frame.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "stylediff/layers.hpp"
#include "stylediff/params.hpp"

namespace stylediff {

struct DenoiserConfig {
  std::size_t feature_dim = 32;
  std::size_t motion_dim = 64;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t audio_layers = 2;
  std::size_t style_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ff_dim = 256;
  std::size_t half_window = 5;
  std::size_t null_frames = 64;
  std::size_t max_reference = 4096;

  std::size_t window() const { return 2 * half_window + 1; }
  std::size_t code_dim() const { return model_dim; }

  /// Widths and depths of the full-size network (shape tests only).
  static DenoiserConfig full_scale();
  void store_into(TensorMap& out) const;
  static DenoiserConfig load_from(const TensorMap& in);
};

/// Replicate-padded windows of 2w+1 rows centered on each requested frame,
/// stacked as [frames.size() * (2w+1) x F].
template <typename T>
Tensor<T> audio_windows(const Tensor<float>& audio, const std::vector<std::size_t>& frames,
                        std::size_t half_window);

template <typename T>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  /// [B*W x F] windows -> [B*W x d] tokens.
  Var<T> encode_audio(const Context<T>& ctx, const Tensor<T>& windows) const;
  /// [B*N x D] reference clips of N frames each -> [B x d] style codes.
  Var<T> encode_style(const Context<T>& ctx, const Tensor<T>& references, std::size_t frames) const;
  /// Noisy frames [B x D], one step per row, audio tokens [B*W x d], codes [B x d].
  Var<T> decode(const Context<T>& ctx, Var<T> noisy, const std::vector<std::size_t>& steps,
                Var<T> audio_tokens, Var<T> codes) const;

  /// Inference helpers (no gradient tape kept).
  Tensor<T> style_code(const Tensor<T>& reference) const;
  Tensor<T> null_code() const;
  Tensor<T> audio_tokens(const Tensor<T>& windows) const;
  Tensor<T> predict(const Tensor<T>& noisy, const std::vector<std::size_t>& steps,
                    const Tensor<T>& audio_tokens, const Tensor<T>& codes) const;
  /// omega * conditional + (1 - omega) * unconditional. omega = 1 and omega = 0
  /// evaluate only the corresponding branch.
  Tensor<T> cfg_predict(const Tensor<T>& noisy, const std::vector<std::size_t>& steps,
                        const Tensor<T>& audio_tokens, const Tensor<T>& codes,
                        const Tensor<T>& null_codes, double omega) const;

  TensorMap state() const;
  static std::unique_ptr<Denoiser> from_state(const TensorMap& state);

 private:
  DenoiserConfig config_;
  // Layers keep raw pointers into the store, so the object is pinned.
  ParameterStore<T> store_;
  Linear<T> audio_in_, audio_out_;
  std::vector<EncoderLayer<T>> audio_layers_;
  LayerNorm<T> audio_norm_;
  Linear<T> style_in_;
  std::vector<EncoderLayer<T>> style_layers_;
  LayerNorm<T> style_norm_;
  AttentionPool<T> style_pool_;
  Linear<T> kv_in_;
  StepEmbedding<T> step_embed_;
  std::vector<DecoderLayer<T>> decoder_layers_;
  LayerNorm<T> decoder_norm_;
  Linear<T> head_;

 public:
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;
  Denoiser(Denoiser&&) = delete;
};

}  // namespace stylediff
