#include "stylediff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>

#include "stylediff/io.hpp"

namespace stylediff {

namespace {

void append_rows(Tensor<float>& dst, std::size_t at, const Tensor<float>& src, std::size_t start,
                 std::size_t count) {
  std::copy_n(src.data() + start * src.cols(), count * src.cols(), dst.data() + at * src.cols());
}

Tensor<float> crop(const Tensor<float>& m, std::size_t start, std::size_t count) {
  Tensor<float> out = Tensor<float>::matrix(count, m.cols());
  append_rows(out, 0, m, start, count);
  return out;
}

void check_finite(double v, const char* stage, const char* term, std::size_t step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string(stage) + ": " + term + " diverged at step " + std::to_string(step));
  }
}

// Averages named terms over the logging interval.
class IntervalMeans {
 public:
  IntervalMeans(LossLog* log, std::size_t every) : log_(log), every_(std::max<std::size_t>(every, 1)) {}
  void add(const std::string& term, double v) {
    auto& [sum, n] = acc_[term];
    sum += v;
    ++n;
  }
  void step_done(std::size_t step) {
    if ((step + 1) % every_ != 0) return;
    if (log_ && log_->enabled()) {
      for (const auto& [term, sn] : acc_) log_->record(step + 1, term, sn.first / double(sn.second));
    }
    acc_.clear();
  }

 private:
  LossLog* log_;
  std::size_t every_;
  std::map<std::string, std::pair<double, std::size_t>> acc_;
};

// Mean of the last tenth of a loss trace.
double tail_mean(const std::vector<double>& trace) {
  if (trace.empty()) return 0.0;
  const std::size_t n = std::max<std::size_t>(trace.size() / 10, 1);
  double s = 0;
  for (std::size_t i = trace.size() - n; i < trace.size(); ++i) s += trace[i];
  return s / double(n);
}

}  // namespace

LossLog::LossLog(std::filesystem::path path) : path_(std::move(path)) {
  CsvWriter(*path_, {"step", "term", "value"});
}

void LossLog::record(std::size_t step, const std::string& term, double value) {
  if (!path_) return;
  CsvWriter(*path_, {"step", "term", "value"}, true).row({std::to_string(step), term, format_real(value)});
}

SyncSample sample_sync_pair(std::size_t clip_frames, std::size_t n, bool positive, Rng& rng) {
  if (n == 0 || clip_frames < 2 * n) {
    throw std::invalid_argument("sync pair: clip of " + std::to_string(clip_frames) +
                                " frames is shorter than twice the window " + std::to_string(n));
  }
  SyncSample s;
  const std::size_t starts = clip_frames - n + 1;
  s.motion_start = uniform_index(rng, starts);
  s.in_sync = positive;
  if (positive) {
    s.audio_start = s.motion_start;
    return s;
  }
  // Valid audio starts are those at least n frames away from the motion start.
  std::vector<std::size_t> candidates;
  for (std::size_t a = 0; a < starts; ++a) {
    const std::size_t gap = a > s.motion_start ? a - s.motion_start : s.motion_start - a;
    if (gap >= n) candidates.push_back(a);
  }
  if (candidates.empty()) {
    // Only possible when the motion start sits mid-clip in a short clip; move it to an end.
    s.motion_start = 0;
    return sample_sync_pair(clip_frames, n, positive, rng);
  }
  s.audio_start = candidates[uniform_index(rng, candidates.size())];
  return s;
}

SyncSample sample_training_pair(std::size_t clip_frames, std::size_t n, Rng& rng) {
  const bool positive = std::bernoulli_distribution(0.5)(rng);
  return sample_sync_pair(clip_frames, n, positive, rng);
}

std::size_t cross_id_partner(const std::vector<SynthClip>& clips, std::size_t clip, Rng& rng) {
  std::vector<std::size_t> same;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (i != clip && clips[i].speaker == clips[clip].speaker) same.push_back(i);
  }
  if (same.empty()) {
    std::clog << "warning: speaker " << clips[clip].speaker << " has a single clip; pairing it with itself\n";
    return clip;
  }
  return same[uniform_index(rng, same.size())];
}

ExpertTrainResult train_expert(LipExpert<float>& expert, const std::vector<SynthClip>& clips,
                               const ExpertTrainConfig& config, LossLog* log) {
  if (clips.empty()) throw std::invalid_argument("train_expert: no clips");
  const auto& ec = expert.config();
  const std::size_t n = ec.clip_length, K = config.clips_per_batch, P = config.pairs_per_clip;
  const std::size_t R = config.reference_frames;
  const std::size_t F = ec.feature_dim, D = ec.motion_dim;
  Rng rng(config.seed);
  Adam<float> adam(expert.params(), {config.lr});
  IntervalMeans means(log, config.log_every);
  std::vector<double> trace;

  for (std::size_t step = 0; step < config.steps; ++step) {
    Tensor<float> refs = Tensor<float>::matrix(K * R, D);
    Tensor<float> audio = Tensor<float>::matrix(K * P * n, F);
    Tensor<float> motion = Tensor<float>::matrix(K * P * n, D);
    std::vector<float> labels;
    for (std::size_t k = 0; k < K; ++k) {
      const SynthClip& clip = clips[uniform_index(rng, clips.size())];
      if (clip.length() < R) throw std::invalid_argument("train_expert: clip shorter than the reference crop");
      append_rows(refs, k * R, clip.motion, uniform_index(rng, clip.length() - R + 1), R);
      for (std::size_t p = 0; p < P; ++p) {
        const SyncSample s = sample_training_pair(clip.length(), n, rng);
        append_rows(audio, (k * P + p) * n, clip.audio, s.audio_start, n);
        append_rows(motion, (k * P + p) * n, clip.motion, s.motion_start, n);
        labels.push_back(s.in_sync ? 1.0f : 0.0f);
      }
    }
    expert.params().zero_grad();
    Tape<float> tape;
    const Context<float> ctx{tape, true, true};
    const Var<float> style = ag::repeat_rows(expert.style_features(ctx, refs, R), P);
    const Var<float> prob = expert.sync_probability(ctx, tape.constant(audio), tape.constant(motion), style);
    const Var<float> loss = ag::bce_mean(prob, labels, float(kProbabilityEps));
    const double value = loss.value()[0];
    check_finite(value, "train_expert", "L_expert", step);
    tape.backward(loss);
    clip_grad_norm(expert.params(), config.clip_norm);
    adam.step();
    trace.push_back(value);
    means.add("expert", value);
    means.step_done(step);
  }
  return {trace.empty() ? 0.0 : trace.front(), tail_mean(trace)};
}

double expert_auc(const LipExpert<float>& expert, const std::vector<SynthClip>& clips,
                  std::size_t pairs_per_clip, std::size_t reference_frames, std::uint64_t seed) {
  const auto& ec = expert.config();
  const std::size_t n = ec.clip_length, R = reference_frames;
  Rng rng(seed);
  std::vector<double> pos, neg;
  for (const SynthClip& clip : clips) {
    const Tensor<float> ref = crop(clip.motion, uniform_index(rng, clip.length() - R + 1), R);
    Tensor<float> audio = Tensor<float>::matrix(2 * pairs_per_clip * n, ec.feature_dim);
    Tensor<float> motion = Tensor<float>::matrix(2 * pairs_per_clip * n, ec.motion_dim);
    for (std::size_t p = 0; p < 2 * pairs_per_clip; ++p) {
      const SyncSample s = sample_sync_pair(clip.length(), n, p % 2 == 0, rng);
      append_rows(audio, p * n, clip.audio, s.audio_start, n);
      append_rows(motion, p * n, clip.motion, s.motion_start, n);
    }
    Tape<float> tape(false);
    const Context<float> ctx{tape, false, false};
    const Var<float> style = ag::repeat_rows(expert.style_features(ctx, ref, R), 2 * pairs_per_clip);
    const Tensor<float>& prob =
        expert.sync_probability(ctx, tape.constant(audio), tape.constant(motion), style).value();
    for (std::size_t p = 0; p < 2 * pairs_per_clip; ++p) (p % 2 == 0 ? pos : neg).push_back(prob[p]);
  }
  // Mann-Whitney statistic with ties counted as one half.
  double wins = 0;
  for (double a : pos) {
    for (double b : neg) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return wins / (double(pos.size()) * double(neg.size()));
}

DenoiserTrainResult train_denoiser(Denoiser<float>& model, const LipExpert<float>* expert,
                                   const std::vector<SynthClip>& clips, const DiffusionSchedule& schedule,
                                   const DenoiserTrainConfig& config, LossLog* log) {
  if (clips.empty()) throw std::invalid_argument("train_denoiser: no clips");
  const auto& mc = model.config();
  const std::size_t K = config.clips_per_batch, n = config.frames_per_clip, R = config.reference_frames;
  const std::size_t D = mc.motion_dim, F = mc.feature_dim, B = K * n;
  if (expert && expert->config().clip_length != n) {
    throw std::invalid_argument("train_denoiser: frames per clip must equal the expert's clip length");
  }
  if (config.sync_generation_steps == 0) throw std::invalid_argument("train_denoiser: zero generation steps");
  Rng rng(config.seed);
  Adam<float> adam(model.params(), {config.lr});
  IntervalMeans means(log, config.log_every);
  DenoiserTrainResult result;
  std::vector<double> denoise_trace, sync_trace;
  std::bernoulli_distribution drop(config.null_probability);

  for (std::size_t step = 0; step < config.steps; ++step) {
    Tensor<float> refs = Tensor<float>::matrix(K * R, D);
    Tensor<float> expert_refs = Tensor<float>::matrix(K * R, D);
    Tensor<float> clean = Tensor<float>::matrix(B, D);
    Tensor<float> noisy = Tensor<float>::matrix(B, D);
    Tensor<float> clip_audio = Tensor<float>::matrix(B, F);
    Tensor<float> windows = Tensor<float>::matrix(B * mc.window(), F);
    std::vector<std::size_t> steps(B);
    for (std::size_t k = 0; k < K; ++k) {
      const SynthClip& clip = clips[uniform_index(rng, clips.size())];
      if (clip.length() < std::max(R, n)) throw std::invalid_argument("train_denoiser: clip too short");
      // The reference is another crop of the same clip.
      const std::size_t ref_start = uniform_index(rng, clip.length() - R + 1);
      append_rows(expert_refs, k * R, clip.motion, ref_start, R);
      ++result.references_seen;
      if (drop(rng)) {
        ++result.null_references;  // rows stay zero: the null reference
      } else {
        append_rows(refs, k * R, clip.motion, ref_start, R);
      }
      const std::size_t t = 1 + uniform_index(rng, schedule.num_steps());
      const std::size_t f0 = uniform_index(rng, clip.length() - n + 1);
      std::vector<std::size_t> frames(n);
      for (std::size_t j = 0; j < n; ++j) frames[j] = f0 + j;
      const Tensor<float> w = audio_windows<float>(clip.audio, frames, mc.half_window);
      std::copy_n(w.data(), w.size(), windows.data() + k * w.size());
      append_rows(clip_audio, k * n, clip.audio, f0, n);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t row = k * n + j;
        steps[row] = t;
        append_rows(clean, row, clip.motion, f0 + j, 1);
        const std::vector<float> eps = normal_vector<float>(rng, D);
        const auto xt = schedule.forward_diffuse<float>(clean.row(row), t, eps);
        std::copy(xt.begin(), xt.end(), noisy.row(row).begin());
      }
    }

    model.params().zero_grad();
    Tape<float> tape;
    const Context<float> ctx{tape, true, true};
    const Var<float> codes = ag::repeat_rows(model.encode_style(ctx, refs, R), n);
    const Var<float> tokens = model.encode_audio(ctx, windows);
    const Var<float> pred = model.decode(ctx, tape.constant(noisy), steps, tokens, codes);
    const Var<float> l_denoise = ag::squared_error(pred, tape.constant(clean));
    Var<float> total = ag::scale(l_denoise, float(config.lambda_denoise));
    const double denoise_value = l_denoise.value()[0];
    check_finite(denoise_value, "train_denoiser", "L_denoise", step);
    denoise_trace.push_back(denoise_value);
    means.add("denoise", denoise_value);

    if (expert) {
      // Generate the clip with k DDIM steps from the sampled noise level.
      Var<float> generated = pred;
      if (config.sync_generation_steps > 1) {
        Var<float> x = tape.constant(noisy);
        const std::size_t t0 = steps.front();
        const std::size_t k_steps = std::min(config.sync_generation_steps, t0);
        Var<float> x0 = pred;
        for (std::size_t i = 0; i < k_steps; ++i) {
          const std::size_t t_cur = t0 - (t0 * i) / k_steps;
          const std::size_t t_next = t0 - (t0 * (i + 1)) / k_steps;
          if (i > 0) x0 = model.decode(ctx, x, std::vector<std::size_t>(B, t_cur), tokens, codes);
          if (t_next == 0) break;
          const double sa = std::sqrt(schedule.alpha_bar(t_cur)), sb = std::sqrt(1 - schedule.alpha_bar(t_cur));
          const double pa = std::sqrt(schedule.alpha_bar(t_next)), pb = std::sqrt(1 - schedule.alpha_bar(t_next));
          x = ag::add(ag::scale(x0, float(pa - pb * sa / sb)), ag::scale(x, float(pb / sb)));
        }
        generated = x0;
      }
      // Frozen expert: constants for its weights, running statistics for its norms.
      const Context<float> frozen{tape, false, false};
      const Var<float> style = expert->style_features(frozen, expert_refs, R);
      const Var<float> prob = expert->sync_probability(frozen, tape.constant(clip_audio), generated, style);
      const Var<float> l_sync = ag::neg_log_mean(prob, float(kProbabilityEps));
      const double sync_value = l_sync.value()[0];
      check_finite(sync_value, "train_denoiser", "L_sync", step);
      sync_trace.push_back(sync_value);
      means.add("sync", sync_value);
      total = ag::add(total, ag::scale(l_sync, float(config.lambda_sync)));
    }
    means.add("total", total.value()[0]);
    tape.backward(total);
    clip_grad_norm(model.params(), config.clip_norm);
    adam.step();
    means.step_done(step);
  }
  result.first_denoise_loss = denoise_trace.empty() ? 0.0 : denoise_trace.front();
  result.final_denoise_loss = tail_mean(denoise_trace);
  result.final_sync_loss = tail_mean(sync_trace);
  return result;
}

double denoise_validation_loss(const Denoiser<float>& model, const std::vector<SynthClip>& clips,
                               const DiffusionSchedule& schedule, std::size_t batch_clips,
                               std::size_t reference_frames, std::uint64_t seed) {
  const auto& mc = model.config();
  const std::size_t R = reference_frames, D = mc.motion_dim;
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t b = 0; b < batch_clips; ++b) {
    const SynthClip& clip = clips[uniform_index(rng, clips.size())];
    const Tensor<float> ref = crop(clip.motion, uniform_index(rng, clip.length() - R + 1), R);
    const std::size_t frame = uniform_index(rng, clip.length());
    const std::size_t t = 1 + uniform_index(rng, schedule.num_steps());
    const std::vector<float> eps = normal_vector<float>(rng, D);
    Tensor<float> noisy = Tensor<float>::matrix(1, D);
    noisy.storage() = schedule.forward_diffuse<float>(clip.motion.row(frame), t, eps);
    const Tensor<float> pred = model.predict(noisy, {t}, model.audio_tokens(audio_windows<float>(clip.audio, {frame}, mc.half_window)),
                                             model.style_code(ref));
    for (std::size_t d = 0; d < D; ++d) {
      const double diff = double(pred[d]) - double(clip.motion(frame, d));
      total += diff * diff;
    }
  }
  return total / double(batch_clips);
}

std::vector<std::vector<float>> target_codes(const Denoiser<float>& denoiser, const std::vector<SynthClip>& clips) {
  std::vector<std::vector<float>> out;
  out.reserve(clips.size());
  for (const SynthClip& clip : clips) out.push_back(denoiser.style_code(clip.motion).storage());
  return out;
}

PredictorTrainResult train_predictor(StylePredictor<float>& predictor, const Denoiser<float>& denoiser,
                                     const std::vector<SynthClip>& clips, const DiffusionSchedule& schedule,
                                     const PredictorTrainConfig& config, LossLog* log) {
  if (clips.empty()) throw std::invalid_argument("train_predictor: no clips");
  const auto& pc = predictor.config();
  if (denoiser.config().code_dim() != pc.code_dim) {
    throw std::invalid_argument("train_predictor: style encoder width does not match the predictor");
  }
  if (config.min_frames == 0 || config.min_frames > config.max_frames) {
    throw std::invalid_argument("train_predictor: invalid crop range");
  }
  const auto targets = target_codes(denoiser, clips);
  const std::size_t B = config.batch, C = pc.code_dim, F = pc.feature_dim, I = pc.identity_dim;
  Rng rng(config.seed);
  Adam<float> adam(predictor.params(), {config.lr});
  IntervalMeans means(log, config.log_every);
  std::vector<double> trace;

  std::size_t longest = 0;
  for (const auto& c : clips) longest = std::max(longest, c.length());
  if (longest < config.min_frames) throw std::invalid_argument("train_predictor: every clip is shorter than the crop");
  const std::size_t max_frames = std::min(config.max_frames, longest);

  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t L = config.min_frames + uniform_index(rng, max_frames - config.min_frames + 1);
    // Crops are drawn only from clips that can hold them.
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (clips[i].length() >= L) eligible.push_back(i);
    }
    Tensor<float> audio = Tensor<float>::matrix(B * L, F);
    Tensor<float> identity = Tensor<float>::matrix(B, I);
    Tensor<float> clean = Tensor<float>::matrix(B, C);
    Tensor<float> noisy = Tensor<float>::matrix(B, C);
    std::vector<std::size_t> steps(B);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t x = eligible[uniform_index(rng, eligible.size())];
      const SynthClip& clip = clips[x];
      append_rows(audio, b * L, clip.audio, uniform_index(rng, clip.length() - L + 1), L);
      const std::size_t y = config.cross_id ? cross_id_partner(clips, x, rng) : x;
      std::copy(clips[y].identity.begin(), clips[y].identity.end(), identity.row(b).begin());
      std::copy(targets[x].begin(), targets[x].end(), clean.row(b).begin());
      if (pc.regression) {
        steps[b] = schedule.num_steps();
      } else {
        steps[b] = 1 + uniform_index(rng, schedule.num_steps());
        const std::vector<float> eps = normal_vector<float>(rng, C);
        const auto st = schedule.forward_diffuse<float>(clean.row(b), steps[b], eps);
        std::copy(st.begin(), st.end(), noisy.row(b).begin());
      }
    }
    predictor.params().zero_grad();
    Tape<float> tape;
    const Context<float> ctx{tape, true, true};
    const Var<float> pred = predictor.predict(ctx, audio, L, steps, identity, tape.constant(noisy));
    const Var<float> loss = ag::squared_error(pred, tape.constant(clean));
    const double value = loss.value()[0];
    check_finite(value, "train_predictor", "L_pred", step);
    tape.backward(loss);
    clip_grad_norm(predictor.params(), config.clip_norm);
    adam.step();
    trace.push_back(value);
    means.add("pred", value);
    means.step_done(step);
  }
  return {trace.empty() ? 0.0 : trace.front(), tail_mean(trace)};
}

}  // namespace stylediff
