#pragma once

// Staged training: lip expert pretraining, denoiser training against the
// frozen expert with classifier-free dropout of the style reference, and
// style predictor training against the frozen denoiser's style encoder.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "stylediff/denoiser.hpp"
#include "stylediff/lip_expert.hpp"
#include "stylediff/schedule.hpp"
#include "stylediff/style_predictor.hpp"
#include "stylediff/synth_world.hpp"

namespace stylediff {

/// Appends (step, term, value) rows to a CSV file; a null path disables logging.
class LossLog {
 public:
  LossLog() = default;
  explicit LossLog(std::filesystem::path path);
  void record(std::size_t step, const std::string& term, double value);
  bool enabled() const { return path_.has_value(); }

 private:
  std::optional<std::filesystem::path> path_;
};

struct SyncSample {
  std::size_t motion_start = 0;
  std::size_t audio_start = 0;
  bool in_sync = true;
};

/// Positive: audio and motion from the same moment. Negative: audio shifted
/// by an offset of at least `clip_length` frames within the same clip.
SyncSample sample_sync_pair(std::size_t clip_frames, std::size_t clip_length, bool positive, Rng& rng);
/// As above with the label drawn 50/50.
SyncSample sample_training_pair(std::size_t clip_frames, std::size_t clip_length, Rng& rng);

/// Index of a clip of the same speaker other than `clip`, or `clip` itself
/// (with a warning) when the speaker has no other clip.
std::size_t cross_id_partner(const std::vector<SynthClip>& clips, std::size_t clip, Rng& rng);

struct ExpertTrainConfig {
  std::size_t steps = 800;
  std::size_t clips_per_batch = 8;
  std::size_t pairs_per_clip = 16;
  std::size_t reference_frames = 64;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  std::size_t log_every = 10;
};

struct ExpertTrainResult {
  double first_loss = 0.0;
  double final_loss = 0.0;  // mean over the last tenth of the run
};

ExpertTrainResult train_expert(LipExpert<float>& expert, const std::vector<SynthClip>& clips,
                               const ExpertTrainConfig& config, LossLog* log = nullptr);

/// Held-out ranking quality of in-sync over shifted pairs.
double expert_auc(const LipExpert<float>& expert, const std::vector<SynthClip>& clips,
                  std::size_t pairs_per_clip, std::size_t reference_frames, std::uint64_t seed);

struct DenoiserTrainConfig {
  std::size_t steps = 1500;
  std::size_t clips_per_batch = 8;
  std::size_t frames_per_clip = 5;
  std::size_t reference_frames = 64;
  double lr = 1e-3;
  double clip_norm = 1.0;
  double null_probability = 0.1;
  double lambda_denoise = 1.0;
  double lambda_sync = 1.0;
  /// DDIM steps used to generate the clip scored by the expert.
  std::size_t sync_generation_steps = 1;
  std::uint64_t seed = 2;
  std::size_t log_every = 10;
};

struct DenoiserTrainResult {
  std::size_t references_seen = 0;
  std::size_t null_references = 0;
  double first_denoise_loss = 0.0;
  double final_denoise_loss = 0.0;
  double final_sync_loss = 0.0;
};

/// `expert` may be null (no sync loss). Its parameters are never modified.
DenoiserTrainResult train_denoiser(Denoiser<float>& model, const LipExpert<float>* expert,
                                   const std::vector<SynthClip>& clips, const DiffusionSchedule& schedule,
                                   const DenoiserTrainConfig& config, LossLog* log = nullptr);

/// Denoising loss on a fixed, seeded batch (references always present).
double denoise_validation_loss(const Denoiser<float>& model, const std::vector<SynthClip>& clips,
                               const DiffusionSchedule& schedule, std::size_t batch_clips,
                               std::size_t reference_frames, std::uint64_t seed);

struct PredictorTrainConfig {
  std::size_t steps = 800;
  std::size_t batch = 16;
  std::size_t min_frames = 64;
  std::size_t max_frames = 96;
  double lr = 1e-3;
  double clip_norm = 1.0;
  bool cross_id = true;
  std::uint64_t seed = 3;
  std::size_t log_every = 10;
};

struct PredictorTrainResult {
  double first_loss = 0.0;
  double final_loss = 0.0;
};

/// Style codes of whole clips from the frozen denoiser's style encoder.
std::vector<std::vector<float>> target_codes(const Denoiser<float>& denoiser, const std::vector<SynthClip>& clips);

PredictorTrainResult train_predictor(StylePredictor<float>& predictor, const Denoiser<float>& denoiser,
                                     const std::vector<SynthClip>& clips, const DiffusionSchedule& schedule,
                                     const PredictorTrainConfig& config, LossLog* log = nullptr);

}  // namespace stylediff
