#pragma once

// End-to-end desk run: pretrain the lip experts, train the denoisers with and
// without expert supervision, train the style predictors, then score every
// model on held-out speakers with the synthetic world's oracles.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "stylediff/config.hpp"
#include "stylediff/denoiser.hpp"
#include "stylediff/lip_expert.hpp"
#include "stylediff/sampler.hpp"
#include "stylediff/style_predictor.hpp"
#include "stylediff/synth_world.hpp"
#include "stylediff/trainer.hpp"

namespace stylediff {

struct PipelineConfig {
  WorldConfig world;
  std::size_t diffusion_steps = 100;

  LipExpertConfig expert_model;
  DenoiserConfig denoiser_model;
  PredictorConfig predictor_model;

  ExpertTrainConfig expert_train;
  DenoiserTrainConfig denoiser_train;
  PredictorTrainConfig predictor_train;

  std::size_t ddim_steps = 10;
  double omega = 1.0;
  std::uint64_t sample_seed = 9;
  /// Leading frames of each evaluation clip that are generated.
  std::size_t eval_frames = 64;
  /// Clips with a lower index train the predictor; the rest are held out.
  std::size_t predictor_train_clips = 4;
  std::vector<double> interpolation_alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  /// Train the comparison models (no expert, unconditional expert,
  /// predictor without speaker info or without cross-identity pairs).
  bool ablations = true;
  /// Also train the one-shot regression predictor.
  bool regression_predictor = false;
  std::uint64_t init_seed = 11;

  /// A few steps per stage, for smoke and determinism runs.
  static PipelineConfig quick();
  /// Overrides any field named in `config` (see README for the keys).
  void apply(const Config& config);
};

struct MetricRow {
  std::string metric;
  std::string model;
  double value = 0.0;
};

struct PipelineReport {
  std::vector<MetricRow> rows;
  /// Throws std::out_of_range when the pair is absent.
  double value(const std::string& metric, const std::string& model) const;
  bool has(const std::string& metric, const std::string& model) const;
};

/// Held-out generation item: audio and ground-truth motion of one clip's
/// leading frames, plus a reference motion of the same speaker and style.
struct EvalItem {
  std::size_t speaker = 0;
  std::size_t style = 0;
  Tensor<float> audio;
  Tensor<float> motion;
  Tensor<float> reference;
};

/// One item per (test speaker, style): clip 0 cropped to `frames`, clip 1 as reference.
std::vector<EvalItem> denoiser_eval_items(const SynthWorld& world, std::size_t frames);

struct DenoiserEval {
  double style_accuracy = 0.0;
  double sync = 0.0;
  double motion_distance = 0.0;
  double neutral_residual = 0.0;
  std::vector<Tensor<float>> samples;
};

/// Generates every item with its reference code (or the null code when
/// `null_style`) and scores the result.
DenoiserEval evaluate_denoiser(const SynthWorld& world, const Denoiser<float>& model,
                               const DiffusionSchedule& schedule, const std::vector<EvalItem>& items,
                               const SamplerConfig& sampler, bool null_style = false);

struct InterpolationPoint {
  std::size_t style_a = 0;
  std::size_t style_b = 0;
  double alpha = 0.0;
  double residual_b = 0.0;
};

/// Blends the codes of style pairs (0,1), (2,3), ... on the first test
/// speaker and records the oracle residual toward the second style.
std::vector<InterpolationPoint> interpolation_sweep(const SynthWorld& world, const Denoiser<float>& model,
                                                    const DiffusionSchedule& schedule, std::size_t frames,
                                                    const std::vector<double>& alphas,
                                                    const SamplerConfig& sampler);

/// Smallest per-pair Spearman correlation between alpha and -residual_b.
double interpolation_monotonicity(const std::vector<InterpolationPoint>& points);

struct PredictorEval {
  double style_accuracy = 0.0;
  double code_distance = 0.0;
};

/// Held-out clips of training speakers: the predictor sees `frames` audio
/// frames and the identity of the same speaker's clip in the next style.
/// Accuracy is nearest-centroid against per-style means of the training codes.
PredictorEval evaluate_predictor(const StylePredictor<float>& predictor, const Denoiser<float>& denoiser,
                                 const DiffusionSchedule& schedule, const std::vector<SynthClip>& train,
                                 const std::vector<SynthClip>& held_out, std::size_t styles,
                                 std::size_t frames, std::uint64_t seed);

/// Trains and evaluates everything, writing checkpoints, loss curves,
/// samples, metrics.csv and interpolation.csv under `out_dir`. Progress and
/// timings go to `progress` (never to the output files).
PipelineReport run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                            std::ostream* progress = nullptr);

}  // namespace stylediff
