#include "stylediff/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>
#include <stdexcept>

#include "stylediff/io.hpp"
#include "stylediff/metrics.hpp"

namespace stylediff {

namespace {

namespace fs = std::filesystem;

Tensor<float> leading_rows(const Tensor<float>& m, std::size_t count) {
  if (m.rows() < count) throw std::invalid_argument("pipeline: clip shorter than the evaluation crop");
  Tensor<float> out = Tensor<float>::matrix(count, m.cols());
  std::copy_n(m.data(), count * m.cols(), out.data());
  return out;
}

Tensor<float> row_tensor(const std::vector<float>& v) {
  return Tensor<float>({1, v.size()}, v);
}

std::vector<float> row_vector(const Tensor<float>& t, std::size_t r = 0) {
  return {t.row(r).begin(), t.row(r).end()};
}

class Stopwatch {
 public:
  explicit Stopwatch(std::ostream* out) : out_(out), start_(std::chrono::steady_clock::now()) {}
  void lap(const std::string& what) {
    const auto now = std::chrono::steady_clock::now();
    if (out_) {
      *out_ << "[" << format_real(std::chrono::duration<double>(now - start_).count()) << " s] " << what
            << std::endl;
    }
  }

 private:
  std::ostream* out_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

PipelineConfig PipelineConfig::quick() {
  PipelineConfig c;
  c.world.clips_per_pair = 3;
  c.world.max_length = 96;
  c.predictor_train_clips = 2;
  c.expert_train.steps = 4;
  c.expert_train.clips_per_batch = 2;
  c.expert_train.pairs_per_clip = 2;
  c.denoiser_train.steps = 4;
  c.denoiser_train.clips_per_batch = 2;
  c.predictor_train.steps = 4;
  c.predictor_train.batch = 2;
  c.predictor_train.max_frames = 64;
  c.diffusion_steps = 20;
  c.ddim_steps = 4;
  c.eval_frames = 16;
  c.expert_train.log_every = c.denoiser_train.log_every = c.predictor_train.log_every = 2;
  return c;
}

void PipelineConfig::apply(const Config& c) {
  auto size = [&](const char* key, std::size_t& field) { field = c.get_uint(key, field); };
  auto real = [&](const char* key, double& field) { field = c.get_double(key, field); };
  auto seed = [&](const char* key, std::uint64_t& field) { field = c.get_uint(key, field); };

  seed("world.seed", world.seed);
  size("world.speakers", world.speakers);
  size("world.train_speakers", world.train_speakers);
  size("world.styles", world.styles);
  size("world.clips_per_pair", world.clips_per_pair);
  size("world.min_length", world.min_length);
  size("world.max_length", world.max_length);
  real("world.audio_rho", world.audio_rho);
  real("world.identity_leak", world.identity_leak);

  size("diffusion_steps", diffusion_steps);
  if (c.has("model.dim")) {
    const std::size_t d = c.get_uint("model.dim", denoiser_model.model_dim);
    denoiser_model.model_dim = expert_model.model_dim = d;
    predictor_model.code_dim = predictor_model.model_dim = d;
  }
  if (c.has("model.heads")) {
    const std::size_t h = c.get_uint("model.heads", denoiser_model.heads);
    denoiser_model.heads = expert_model.heads = predictor_model.heads = h;
  }

  size("expert.steps", expert_train.steps);
  size("expert.clips_per_batch", expert_train.clips_per_batch);
  size("expert.pairs_per_clip", expert_train.pairs_per_clip);
  real("expert.lr", expert_train.lr);
  seed("expert.seed", expert_train.seed);

  size("denoiser.steps", denoiser_train.steps);
  size("denoiser.clips_per_batch", denoiser_train.clips_per_batch);
  size("denoiser.sync_generation_steps", denoiser_train.sync_generation_steps);
  real("denoiser.lr", denoiser_train.lr);
  real("denoiser.lambda_denoise", denoiser_train.lambda_denoise);
  real("denoiser.lambda_sync", denoiser_train.lambda_sync);
  real("denoiser.null_probability", denoiser_train.null_probability);
  seed("denoiser.seed", denoiser_train.seed);

  size("predictor.steps", predictor_train.steps);
  size("predictor.batch", predictor_train.batch);
  size("predictor.min_frames", predictor_train.min_frames);
  size("predictor.max_frames", predictor_train.max_frames);
  real("predictor.lr", predictor_train.lr);
  seed("predictor.seed", predictor_train.seed);
  predictor_train.cross_id = c.get_bool("predictor.cross_id", predictor_train.cross_id);
  predictor_model.use_speaker = c.get_bool("predictor.use_speaker", predictor_model.use_speaker);

  size("sampler.ddim_steps", ddim_steps);
  real("sampler.omega", omega);
  seed("sampler.seed", sample_seed);
  size("eval.frames", eval_frames);
  size("eval.predictor_train_clips", predictor_train_clips);
  ablations = c.get_bool("ablations", ablations);
  regression_predictor = c.get_bool("regression_predictor", regression_predictor);
  seed("init_seed", init_seed);
}

double PipelineReport::value(const std::string& metric, const std::string& model) const {
  for (const auto& r : rows) {
    if (r.metric == metric && r.model == model) return r.value;
  }
  throw std::out_of_range("pipeline report: no " + metric + " for " + model);
}

bool PipelineReport::has(const std::string& metric, const std::string& model) const {
  return std::any_of(rows.begin(), rows.end(),
                     [&](const MetricRow& r) { return r.metric == metric && r.model == model; });
}

std::vector<EvalItem> denoiser_eval_items(const SynthWorld& world, std::size_t frames) {
  const WorldConfig& wc = world.config();
  if (wc.clips_per_pair < 2) throw std::invalid_argument("pipeline: evaluation needs two clips per pair");
  std::vector<EvalItem> items;
  for (std::size_t sp = wc.train_speakers; sp < wc.speakers; ++sp) {
    for (std::size_t st = 0; st < wc.styles; ++st) {
      const SynthClip target = world.dataset_clip(sp, st, 0);
      EvalItem item;
      item.speaker = sp;
      item.style = st;
      item.audio = leading_rows(target.audio, frames);
      item.motion = leading_rows(target.motion, frames);
      item.reference = world.dataset_clip(sp, st, 1).motion;
      items.push_back(std::move(item));
    }
  }
  return items;
}

DenoiserEval evaluate_denoiser(const SynthWorld& world, const Denoiser<float>& model,
                               const DiffusionSchedule& schedule, const std::vector<EvalItem>& items,
                               const SamplerConfig& sampler, bool null_style) {
  DenoiserEval out;
  std::vector<Tensor<float>> truth, audio;
  std::vector<std::size_t> labels;
  double neutral = 0.0;
  for (const auto& item : items) {
    const Tensor<float> code = null_style ? model.null_code() : model.style_code(item.reference);
    out.samples.push_back(generate_sequence(model, schedule, item.audio, code, sampler));
    neutral += world.mean_style_residual(out.samples.back());
    truth.push_back(item.motion);
    audio.push_back(item.audio);
    labels.push_back(item.style);
  }
  out.style_accuracy = metric_sa(world, out.samples, labels);
  out.sync = metric_sync(world, out.samples, audio);
  out.motion_distance = metric_md(out.samples, truth);
  out.neutral_residual = items.empty() ? 0.0 : neutral / double(items.size());
  return out;
}

std::vector<InterpolationPoint> interpolation_sweep(const SynthWorld& world, const Denoiser<float>& model,
                                                    const DiffusionSchedule& schedule, std::size_t frames,
                                                    const std::vector<double>& alphas,
                                                    const SamplerConfig& sampler) {
  const WorldConfig& wc = world.config();
  if (wc.train_speakers >= wc.speakers) throw std::invalid_argument("pipeline: no test speaker to interpolate on");
  const std::size_t speaker = wc.train_speakers;
  std::vector<InterpolationPoint> points;
  for (std::size_t a = 0; a + 1 < wc.styles; a += 2) {
    const std::size_t b = a + 1;
    const std::vector<float> code_a = row_vector(model.style_code(world.dataset_clip(speaker, a, 1).motion));
    const std::vector<float> code_b = row_vector(model.style_code(world.dataset_clip(speaker, b, 1).motion));
    const Tensor<float> audio = leading_rows(world.dataset_clip(speaker, a, 0).audio, frames);
    for (double alpha : alphas) {
      const Tensor<float> code = row_tensor(interpolate_styles(code_a, code_b, alpha));
      const Tensor<float> motion = generate_sequence(model, schedule, audio, code, sampler);
      points.push_back({a, b, alpha, world.style_residuals(motion)[b]});
    }
  }
  return points;
}

double interpolation_monotonicity(const std::vector<InterpolationPoint>& points) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& p : points) {
    if (std::find(pairs.begin(), pairs.end(), std::pair{p.style_a, p.style_b}) == pairs.end()) {
      pairs.emplace_back(p.style_a, p.style_b);
    }
  }
  if (pairs.empty()) throw std::invalid_argument("interpolation: no points");
  double worst = 1.0;
  for (const auto& [a, b] : pairs) {
    std::vector<double> alpha, closeness;
    for (const auto& p : points) {
      if (p.style_a == a && p.style_b == b) {
        alpha.push_back(p.alpha);
        closeness.push_back(-p.residual_b);
      }
    }
    worst = std::min(worst, spearman(alpha, closeness));
  }
  return worst;
}

PredictorEval evaluate_predictor(const StylePredictor<float>& predictor, const Denoiser<float>& denoiser,
                                 const DiffusionSchedule& schedule, const std::vector<SynthClip>& train,
                                 const std::vector<SynthClip>& held_out, std::size_t styles,
                                 std::size_t frames, std::uint64_t seed) {
  if (held_out.empty()) throw std::invalid_argument("evaluate_predictor: no held-out clips");
  const std::size_t C = predictor.config().code_dim, F = predictor.config().feature_dim;
  const std::size_t I = predictor.config().identity_dim;

  const auto train_codes = target_codes(denoiser, train);
  std::vector<std::vector<float>> centroids(styles, std::vector<float>(C, 0.0f));
  std::vector<std::size_t> counts(styles, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t j = 0; j < C; ++j) centroids[train[i].style][j] += train_codes[i][j];
    ++counts[train[i].style];
  }
  for (std::size_t s = 0; s < styles; ++s) {
    if (counts[s] == 0) throw std::invalid_argument("evaluate_predictor: style without training clips");
    for (auto& v : centroids[s]) v /= float(counts[s]);
  }

  const std::size_t n = held_out.size();
  Tensor<float> audio = Tensor<float>::matrix(n * frames, F);
  Tensor<float> identity = Tensor<float>::matrix(n, I);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const SynthClip& clip = held_out[i];
    const Tensor<float> crop = leading_rows(clip.audio, frames);
    std::copy_n(crop.data(), crop.size(), audio.row(i * frames).data());
    // Identity parameters come from another style, so they carry no label.
    const SynthClip* donor = nullptr;
    for (const auto& other : held_out) {
      if (other.speaker != clip.speaker || other.style == clip.style) continue;
      const bool preferred = other.style == (clip.style + 1) % styles && other.index == clip.index;
      if (!donor || preferred) donor = &other;
      if (preferred) break;
    }
    if (!donor) throw std::invalid_argument("evaluate_predictor: speaker has a single style");
    std::copy(donor->identity.begin(), donor->identity.end(), identity.row(i).begin());
    labels.push_back(clip.style);
  }

  const Tensor<float> codes = predictor.sample(audio, frames, identity, schedule, seed);
  std::vector<std::vector<float>> predicted;
  for (std::size_t i = 0; i < n; ++i) predicted.push_back(row_vector(codes, i));
  PredictorEval out;
  out.style_accuracy = nearest_centroid_accuracy(predicted, labels, centroids);
  out.code_distance = metric_scd(predicted, target_codes(denoiser, held_out));
  return out;
}

PipelineReport run_pipeline(const PipelineConfig& config, const fs::path& out_dir, std::ostream* progress) {
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "losses");
  fs::create_directories(out_dir / "samples");
  Stopwatch watch(progress);
  PipelineReport report;
  auto add = [&](const std::string& metric, const std::string& model, double v) {
    report.rows.push_back({metric, model, v});
    if (progress) *progress << "  " << metric << " " << model << " = " << format_real(v) << std::endl;
  };

  const SynthWorld world(config.world);
  const auto dataset = world.generate_dataset();
  std::vector<SynthClip> train, test, predictor_train, predictor_held;
  for (const auto& clip : dataset) {
    if (world.is_train_speaker(clip.speaker)) {
      train.push_back(clip);
      (clip.index < config.predictor_train_clips ? predictor_train : predictor_held).push_back(clip);
    } else {
      test.push_back(clip);
    }
  }
  if (train.empty() || test.empty()) throw std::invalid_argument("pipeline: need train and test speakers");
  watch.lap("dataset: " + std::to_string(train.size()) + " train clips, " + std::to_string(test.size()) +
            " test clips");

  const auto schedule = DiffusionSchedule::default_linear(config.diffusion_steps);
  const fs::path ckpt = out_dir / "checkpoints";
  const fs::path losses = out_dir / "losses";

  LipExpertConfig expert_cfg = config.expert_model;
  expert_cfg.feature_dim = config.world.feature_dim;
  expert_cfg.motion_dim = config.world.motion_dim;
  auto train_one_expert = [&](bool conditioned, const std::string& name) {
    LipExpertConfig ec = expert_cfg;
    ec.style_conditioned = conditioned;
    auto expert = std::make_unique<LipExpert<float>>(ec, world.face_basis(), config.init_seed + 1);
    LossLog log(losses / (name + ".csv"));
    const auto result = train_expert(*expert, train, config.expert_train, &log);
    write_checkpoint(ckpt / (name + ".sdmk"), expert->state());
    add("final_loss", name, result.final_loss);
    add("expert_auc", name, expert_auc(*expert, test, 4, config.denoiser_train.reference_frames, config.init_seed + 2));
    watch.lap("trained " + name);
    return expert;
  };
  const auto expert = train_one_expert(true, "expert");
  const auto expert_uncond = config.ablations ? train_one_expert(false, "expert_uncond") : nullptr;

  DenoiserConfig den_cfg = config.denoiser_model;
  den_cfg.feature_dim = config.world.feature_dim;
  den_cfg.motion_dim = config.world.motion_dim;
  den_cfg.half_window = config.world.half_window;
  SamplerConfig sampler;
  sampler.mode = SamplerMode::ddim;
  sampler.ddim_steps = config.ddim_steps;
  sampler.omega = config.omega;
  sampler.seed = config.sample_seed;
  const auto items = denoiser_eval_items(world, config.eval_frames);

  auto train_one_denoiser = [&](const LipExpert<float>* supervisor, const std::string& name) {
    // Same initialization and batch stream for every variant; only the expert differs.
    auto model = std::make_unique<Denoiser<float>>(den_cfg, config.init_seed + 3);
    LossLog log(losses / (name + ".csv"));
    const auto result = train_denoiser(*model, supervisor, train, schedule, config.denoiser_train, &log);
    write_checkpoint(ckpt / (name + ".sdmk"), model->state());
    add("final_loss", name, result.final_denoise_loss);
    const DenoiserEval eval = evaluate_denoiser(world, *model, schedule, items, sampler);
    add("sa", name, eval.style_accuracy);
    add("sync", name, eval.sync);
    add("md", name, eval.motion_distance);
    add("neutral_residual", name, eval.neutral_residual);
    watch.lap("trained and sampled " + name);
    return std::make_pair(std::move(model), eval);
  };

  auto [denoiser, full_eval] = train_one_denoiser(expert.get(), "denoiser");
  fs::create_directories(out_dir / "samples" / "denoiser");
  for (std::size_t i = 0; i < items.size(); ++i) {
    write_matrix(out_dir / "samples" / "denoiser" /
                     ("s" + std::to_string(items[i].speaker) + "_style" + std::to_string(items[i].style) + ".sdmo"),
                 full_eval.samples[i]);
  }

  // Audio-only baseline: the same network driven by the null style code.
  const DenoiserEval baseline = evaluate_denoiser(world, *denoiser, schedule, items, sampler, true);
  add("sa", "baseline_null_style", baseline.style_accuracy);
  add("sync", "baseline_null_style", baseline.sync);
  add("md", "baseline_null_style", baseline.motion_distance);
  add("neutral_residual", "baseline_null_style", baseline.neutral_residual);

  const auto points = interpolation_sweep(world, *denoiser, schedule, config.eval_frames,
                                          config.interpolation_alphas, sampler);
  {
    CsvWriter csv(out_dir / "interpolation.csv", {"style_a", "style_b", "alpha", "residual_b"});
    for (const auto& p : points) {
      csv.row({std::to_string(p.style_a), std::to_string(p.style_b), format_real(p.alpha), format_real(p.residual_b)});
    }
  }
  add("interp_spearman_min", "denoiser", interpolation_monotonicity(points));
  watch.lap("baseline and interpolation");

  if (config.ablations) {
    train_one_denoiser(nullptr, "denoiser_no_expert");
    train_one_denoiser(expert_uncond.get(), "denoiser_uncond_expert");
  }

  PredictorConfig pred_cfg = config.predictor_model;
  pred_cfg.feature_dim = config.world.feature_dim;
  pred_cfg.identity_dim = config.world.identity_dim;
  pred_cfg.code_dim = den_cfg.code_dim();
  const std::size_t pred_frames = config.predictor_train.min_frames;
  auto train_one_predictor = [&](PredictorConfig pc, PredictorTrainConfig tc, const std::string& name) {
    StylePredictor<float> predictor(pc, config.init_seed + 4);
    LossLog log(losses / (name + ".csv"));
    const auto result = train_predictor(predictor, *denoiser, predictor_train, schedule, tc, &log);
    write_checkpoint(ckpt / (name + ".sdmk"), predictor.state());
    add("final_loss", name, result.final_loss);
    const PredictorEval eval = evaluate_predictor(predictor, *denoiser, schedule, predictor_train, predictor_held,
                                                  config.world.styles, pred_frames, config.sample_seed);
    add("predictor_sa", name, eval.style_accuracy);
    add("scd", name, eval.code_distance);
    watch.lap("trained and sampled " + name);
  };
  train_one_predictor(pred_cfg, config.predictor_train, "predictor");
  if (config.ablations) {
    PredictorConfig no_speaker = pred_cfg;
    no_speaker.use_speaker = false;
    train_one_predictor(no_speaker, config.predictor_train, "predictor_no_speaker");
    PredictorTrainConfig no_cross = config.predictor_train;
    no_cross.cross_id = false;
    train_one_predictor(pred_cfg, no_cross, "predictor_no_cross_id");
  }
  if (config.regression_predictor) {
    PredictorConfig regression = pred_cfg;
    regression.regression = true;
    train_one_predictor(regression, config.predictor_train, "predictor_regression");
  }

  CsvWriter csv(out_dir / "metrics.csv", {"metric", "model", "value"});
  for (const auto& r : report.rows) csv.row({r.metric, r.model, format_real(r.value)});
  watch.lap("done");
  return report;
}

}  // namespace stylediff
