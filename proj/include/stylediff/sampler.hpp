#pragma once

// Sliding-window motion generation. Every frame runs its own reverse chain on
// its audio window, starting from an x_T drawn from a stream seeded by
// (seed, frame index), so any subset of frames can be regenerated exactly.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "stylediff/denoiser.hpp"
#include "stylediff/schedule.hpp"

namespace stylediff {

enum class SamplerMode { ddpm, ddim };

struct SamplerConfig {
  double omega = 1.0;
  SamplerMode mode = SamplerMode::ddim;
  std::size_t ddim_steps = 10;
  /// DDPM only: false removes the injected posterior noise.
  bool inject_noise = true;
  std::uint64_t seed = 0;
  /// Frames processed together in one batched chain.
  std::size_t chunk = 256;
};

/// x0 estimate for a batch of noisy rows at a shared step t.
using X0Predictor = std::function<Tensor<float>(const Tensor<float>& x_t, std::size_t t)>;

/// Runs the reverse chain on a batch of rows. Row r draws its x_T and any
/// injected noise from stream_rng(config.seed, stream_ids[r]).
Tensor<float> reverse_chain(const DiffusionSchedule& schedule, std::size_t dim,
                            const std::vector<std::uint64_t>& stream_ids, const X0Predictor& predict,
                            const SamplerConfig& config);

/// Generates the requested frames (rows of the result follow `frames`).
Tensor<float> generate_frames(const Denoiser<float>& model, const DiffusionSchedule& schedule,
                              const Tensor<float>& audio, const Tensor<float>& code,
                              const SamplerConfig& config, const std::vector<std::size_t>& frames);

/// One motion frame per audio frame.
Tensor<float> generate_sequence(const Denoiser<float>& model, const DiffusionSchedule& schedule,
                                const Tensor<float>& audio, const Tensor<float>& code,
                                const SamplerConfig& config);

/// (1 - alpha) * a + alpha * b for alpha in [0, 1].
std::vector<float> interpolate_styles(const std::vector<float>& a, const std::vector<float>& b, double alpha);

}  // namespace stylediff
