#pragma once

// Diffusion style predictor. A transformer encoder reads, in order: the audio
// frame embeddings, a diffusion-step token, a speaker token built from
// identity parameters, the noised style-code token and a learned query. The
// encoder output at the query position alone is projected to the clean code.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "stylediff/layers.hpp"
#include "stylediff/schedule.hpp"

namespace stylediff {

struct PredictorConfig {
  std::size_t feature_dim = 32;
  std::size_t code_dim = 64;
  std::size_t identity_dim = 16;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_dim = 256;
  /// Zero the identity input everywhere (speaker-info ablation).
  bool use_speaker = true;
  /// One-shot regression: the step token is pinned at T and the noisy code is zero.
  bool regression = false;

  static PredictorConfig full_scale();
  void store_into(TensorMap& out) const;
  static PredictorConfig load_from(const TensorMap& in);
};

template <typename T>
class StylePredictor {
 public:
  StylePredictor(const PredictorConfig& config, std::uint64_t seed);
  StylePredictor(const StylePredictor&) = delete;
  StylePredictor& operator=(const StylePredictor&) = delete;

  const PredictorConfig& config() const { return config_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  /// Token count for an audio clip of `frames` frames.
  static std::size_t token_count(std::size_t frames) { return frames + 4; }

  /// Encoder outputs for B sequences of audio_frames + 4 tokens. `audio` is
  /// [B*L x F], `identity` [B x I], `noisy_codes` [B x C].
  Var<T> encode(const Context<T>& ctx, const Tensor<T>& audio, std::size_t frames,
                const std::vector<std::size_t>& steps, const Tensor<T>& identity,
                Var<T> noisy_codes) const;
  /// Prediction head applied to the learned-query rows of `encoded`.
  Var<T> head(const Context<T>& ctx, Var<T> encoded, std::size_t frames) const;
  Var<T> predict(const Context<T>& ctx, const Tensor<T>& audio, std::size_t frames,
                 const std::vector<std::size_t>& steps, const Tensor<T>& identity,
                 Var<T> noisy_codes) const;

  /// Full ancestral DDPM sampling of one code per sequence, or a single
  /// forward pass for the regression variant. `noise_seed` drives x_T and
  /// the injected noise.
  Tensor<T> sample(const Tensor<T>& audio, std::size_t frames, const Tensor<T>& identity,
                   const DiffusionSchedule& schedule, std::uint64_t noise_seed) const;

  TensorMap state() const;
  static std::unique_ptr<StylePredictor> from_state(const TensorMap& state);

 private:
  PredictorConfig config_;
  ParameterStore<T> store_;
  Linear<T> audio_in_;
  StepEmbedding<T> step_embed_;
  Linear<T> speaker_in_, speaker_out_;
  Linear<T> code_in_;
  Parameter<T>* query_ = nullptr;
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

}  // namespace stylediff
