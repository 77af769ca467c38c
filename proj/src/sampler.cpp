#include "stylediff/sampler.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

#include "stylediff/random.hpp"

namespace stylediff {

Tensor<float> reverse_chain(const DiffusionSchedule& schedule, std::size_t dim,
                            const std::vector<std::uint64_t>& stream_ids, const X0Predictor& predict,
                            const SamplerConfig& config) {
  const std::size_t rows = stream_ids.size();
  std::vector<Rng> streams;
  streams.reserve(rows);
  Tensor<float> x = Tensor<float>::matrix(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    streams.push_back(stream_rng(config.seed, stream_ids[r]));
    const auto draw = normal_vector<float>(streams.back(), dim);
    std::copy(draw.begin(), draw.end(), x.row(r).begin());
  }
  if (config.mode == SamplerMode::ddim) {
    const auto steps = schedule.ddim_timesteps(config.ddim_steps);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const std::size_t t = steps[i];
      const std::size_t t_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
      const Tensor<float> x0 = predict(x, t);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto next = schedule.ddim_step<float>(x.row(r), x0.row(r), t, t_prev);
        std::copy(next.begin(), next.end(), x.row(r).begin());
      }
    }
    return x;
  }
  const std::vector<float> zeros(dim, 0.0f);
  for (std::size_t t = schedule.num_steps(); t >= 1; --t) {
    const Tensor<float> x0 = predict(x, t);
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<float> noise = zeros;
      if (config.inject_noise && t > 1) noise = normal_vector<float>(streams[r], dim);
      const auto next = schedule.posterior_step<float>(x.row(r), x0.row(r), t, noise);
      std::copy(next.begin(), next.end(), x.row(r).begin());
    }
  }
  return x;
}

Tensor<float> generate_frames(const Denoiser<float>& model, const DiffusionSchedule& schedule,
                              const Tensor<float>& audio, const Tensor<float>& code,
                              const SamplerConfig& config, const std::vector<std::size_t>& frames) {
  const auto& mc = model.config();
  if (audio.cols() != mc.feature_dim) throw std::invalid_argument("generate: audio feature width mismatch");
  if (code.size() != mc.code_dim()) throw std::invalid_argument("generate: style code width mismatch");
  if (config.omega < 0.0 || config.omega > 4.0) {
    throw std::invalid_argument("generate: guidance scale outside [0, 4]");
  }
  if (config.omega > 2.0) std::clog << "warning: guidance scale above 2 tends to hurt lip sync\n";
  if (config.chunk == 0) throw std::invalid_argument("generate: zero chunk size");

  const std::size_t D = mc.motion_dim;
  const Tensor<float> null_code = config.omega != 1.0 ? model.null_code() : Tensor<float>();
  Tensor<float> out = Tensor<float>::matrix(frames.size(), D);
  for (std::size_t begin = 0; begin < frames.size(); begin += config.chunk) {
    const std::size_t end = std::min(frames.size(), begin + config.chunk);
    const std::vector<std::size_t> chunk(frames.begin() + std::ptrdiff_t(begin), frames.begin() + std::ptrdiff_t(end));
    const std::size_t B = chunk.size();
    // Audio tokens do not depend on the step, so they are encoded once.
    const Tensor<float> tokens = model.audio_tokens(audio_windows<float>(audio, chunk, mc.half_window));
    Tensor<float> codes = Tensor<float>::matrix(B, mc.code_dim());
    Tensor<float> nulls = Tensor<float>::matrix(B, mc.code_dim());
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(code.data(), code.size(), codes.row(b).begin());
      if (!null_code.empty()) std::copy_n(null_code.data(), null_code.size(), nulls.row(b).begin());
    }
    const X0Predictor predict = [&](const Tensor<float>& x_t, std::size_t t) {
      return model.cfg_predict(x_t, std::vector<std::size_t>(B, t), tokens, codes, nulls, config.omega);
    };
    const std::vector<std::uint64_t> ids(chunk.begin(), chunk.end());
    const Tensor<float> x = reverse_chain(schedule, D, ids, predict, config);
    std::copy_n(x.data(), x.size(), out.data() + begin * D);
  }
  return out;
}

Tensor<float> generate_sequence(const Denoiser<float>& model, const DiffusionSchedule& schedule,
                                const Tensor<float>& audio, const Tensor<float>& code,
                                const SamplerConfig& config) {
  if (audio.rows() == 0) throw std::invalid_argument("generate: empty audio");
  std::vector<std::size_t> frames(audio.rows());
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = i;
  return generate_frames(model, schedule, audio, code, config, frames);
}

std::vector<float> interpolate_styles(const std::vector<float>& a, const std::vector<float>& b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("interpolate: alpha outside [0, 1]");
  if (a.size() != b.size()) throw std::invalid_argument("interpolate: code widths differ");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<float>((1.0 - alpha) * double(a[i]) + alpha * double(b[i]));
  }
  return out;
}

}  // namespace stylediff
