#pragma once

// Style-aware lip-sync expert. Audio and mouth-vertex clips are embedded into
// nonnegative vectors (both embedders end in ReLU) with style features from
// the expert's own style encoder concatenated onto intermediate feature maps.
// The sync probability is their cosine similarity, which nonnegativity keeps
// in [0, 1].

#include <cstddef>
#include <cstdint>
#include <memory>

#include "stylediff/face_basis.hpp"
#include "stylediff/layers.hpp"

namespace stylediff {

struct LipExpertConfig {
  std::size_t feature_dim = 32;
  std::size_t motion_dim = 64;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t style_layers = 2;
  std::size_t ff_dim = 256;
  std::size_t embed_dim = 128;
  std::size_t clip_length = 5;
  /// False gives the unconditional expert: style features are zeroed.
  bool style_conditioned = true;

  void store_into(TensorMap& out) const;
  static LipExpertConfig load_from(const TensorMap& in);
};

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kProbabilityEps = 1e-7;

template <typename T>
class LipExpert {
 public:
  LipExpert(const LipExpertConfig& config, FaceBasis basis, std::uint64_t seed);
  LipExpert(const LipExpert&) = delete;
  LipExpert& operator=(const LipExpert&) = delete;

  const LipExpertConfig& config() const { return config_; }
  const FaceBasis& basis() const { return basis_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  /// [B*N x D] references -> [B x model_dim]; zeros for the unconditional expert.
  Var<T> style_features(const Context<T>& ctx, const Tensor<T>& references, std::size_t frames) const;
  /// Motion rows [R x D] -> flattened mouth vertices [R x 3M]; differentiable.
  Var<T> mouth(const Context<T>& ctx, Var<T> motion) const;
  /// Audio [B*n x F] -> [B x E], every coordinate >= 0.
  Var<T> embed_audio(const Context<T>& ctx, Var<T> audio, Var<T> style) const;
  /// Mouth vertices [B*n x 3M] -> [B x E], every coordinate >= 0.
  Var<T> embed_mouth(const Context<T>& ctx, Var<T> mouth_coords, Var<T> style) const;
  /// Per-clip probability [B x 1] that audio and motion are in sync.
  Var<T> sync_probability(const Context<T>& ctx, Var<T> audio, Var<T> motion, Var<T> style) const;

  TensorMap state() const;
  static std::unique_ptr<LipExpert> from_state(const TensorMap& state);

 private:
  LipExpertConfig config_;
  FaceBasis basis_;
  Tensor<T> mouth_mean_;
  Tensor<T> mouth_bases_t_;
  ParameterStore<T> store_;

  Linear<T> style_in_;
  std::vector<EncoderLayer<T>> style_layers_;
  LayerNorm<T> style_norm_;
  AttentionPool<T> style_pool_;

  ConvBlock<T> audio_conv1_, audio_conv2_, audio_conv3_;
  Linear<T> audio_fc1_, audio_fc2_;

  Linear<T> mouth_in_, mouth_mix_;
  ConvBlock<T> mouth_res1_, mouth_res2_;
  Linear<T> mouth_fc1_, mouth_fc2_;
};

/// Sync probability from two embeddings: cos(a, b) with the denominator
/// floored at kCosineEps.
double sync_probability(const std::vector<double>& e_mouth, const std::vector<double>& e_audio);

/// Binary cross-entropy of one probability, clamped to [eps_p, 1 - eps_p].
double expert_loss(double probability, bool in_sync);

}  // namespace stylediff
