#pragma once

// Procedural talking-face world with closed-form ground truth.
//
// Audio features: dims [0, phonetic) are unit-variance AR(1) noise that
// drives the lips; the remaining prosody dims hold a constant emotion cue
// (whose code is permuted per speaker) plus smooth noise. A latent
// z = W * mean(phonetic window) feeds the base response tanh(P z); mouth dims
// are tanh(Q z) for an orthogonal Q, so z is recoverable from the mouth. A
// speaking style keeps the mouth dims untouched and maps the rest through
// gain * (mix * base) + offset.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "stylediff/face_basis.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t speakers = 8;
  std::size_t train_speakers = 6;
  std::size_t styles = 8;
  std::size_t clips_per_pair = 6;
  std::size_t feature_dim = 32;
  std::size_t phonetic_dim = 24;
  std::size_t motion_dim = 64;
  std::size_t mouth_dims = 8;
  std::size_t identity_dim = 16;
  std::size_t half_window = 5;
  std::size_t min_length = 64;
  std::size_t max_length = 256;
  double audio_rho = 0.7;
  double cue_noise = 0.3;
  double speaker_bias = 0.05;
  double identity_leak = 0.5;
  double identity_noise = 0.05;
  double latent_scale = 0.3;
  double mix_scale = 0.15;
  double offset_scale = 0.4;
};

struct StyleArchetype {
  std::size_t id = 0;
  Eigen::VectorXd gain;    // 1 on mouth dims
  Eigen::VectorXd offset;  // 0 on mouth dims
  Eigen::MatrixXd mix;     // identity on the mouth block
};

struct SynthClip {
  std::size_t speaker = 0;
  std::size_t style = 0;
  std::size_t index = 0;
  Tensor<float> audio;   // [L x F]
  Tensor<float> motion;  // [L x motion_dim]
  std::vector<float> identity;

  std::size_t length() const { return audio.rows(); }
};

class SynthWorld {
 public:
  explicit SynthWorld(WorldConfig config);

  const WorldConfig& config() const { return config_; }
  const FaceBasis& face_basis() const { return basis_; }
  const StyleArchetype& archetype(std::size_t style) const { return archetypes_.at(style); }
  bool is_train_speaker(std::size_t speaker) const { return speaker < config_.train_speakers; }

  SynthClip generate_clip(std::size_t speaker, std::size_t style, std::size_t length,
                          std::uint64_t seed) const;
  /// The clip's derived length and seed inside the default dataset.
  std::size_t clip_length(std::size_t speaker, std::size_t style, std::size_t index) const;
  std::uint64_t clip_seed(std::size_t speaker, std::size_t style, std::size_t index) const;
  SynthClip dataset_clip(std::size_t speaker, std::size_t style, std::size_t index) const;
  /// Every clip, ordered by (speaker, style, index).
  std::vector<SynthClip> generate_dataset() const;

  /// Base response tanh(P z) per frame from replicate-padded audio windows.
  Tensor<float> base_response(const Tensor<float>& audio) const;
  Tensor<float> apply_style(const Tensor<float>& base, std::size_t style) const;
  /// Style transform averaged over all archetypes (the "neutral" style).
  Tensor<float> apply_mean_style(const Tensor<float>& base) const;
  /// Base response reconstructed from the mouth dims of a motion sequence.
  Tensor<float> base_from_mouth(const Tensor<float>& motion) const;

  /// Mean squared non-mouth residual of `motion` against each archetype.
  std::vector<double> style_residuals(const Tensor<float>& motion) const;
  double mean_style_residual(const Tensor<float>& motion) const;
  /// Lowest-residual archetype; ties go to the lowest id.
  std::size_t oracle_style_classify(const Tensor<float>& motion) const;
  /// Mean Pearson correlation of mouth dims against the ground-truth response.
  double oracle_sync_score(const Tensor<float>& audio, const Tensor<float>& motion) const;

 private:
  WorldConfig config_;
  Eigen::MatrixXd latent_map_;    // [mouth_dims x phonetic]
  Eigen::MatrixXd response_map_;  // [motion_dim x mouth_dims]; top block orthogonal
  std::vector<StyleArchetype> archetypes_;
  Eigen::MatrixXd mean_linear_;   // average of diag(gain) * mix
  Eigen::VectorXd mean_offset_;
  Eigen::MatrixXd cue_codes_;     // [styles x prosody]
  std::vector<std::vector<std::size_t>> cue_permutation_;  // per speaker
  Eigen::MatrixXd speaker_bias_;  // [speakers x F]
  Eigen::MatrixXd speaker_embedding_;  // [speakers x identity]
  Eigen::MatrixXd identity_leak_;      // [styles x identity]
  FaceBasis basis_;
};

}  // namespace stylediff
