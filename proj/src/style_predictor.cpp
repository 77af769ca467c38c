#include "stylediff/style_predictor.hpp"

#include <numeric>
#include <stdexcept>

#include "stylediff/config_tensors.hpp"

namespace stylediff {

PredictorConfig PredictorConfig::full_scale() {
  PredictorConfig c;
  c.feature_dim = 1024;
  c.code_dim = 256;
  c.model_dim = 256;
  c.heads = 8;
  c.layers = 6;
  c.ff_dim = 1024;
  return c;
}

void PredictorConfig::store_into(TensorMap& out) const {
  put_setting(out, "feature_dim", double(feature_dim));
  put_setting(out, "code_dim", double(code_dim));
  put_setting(out, "identity_dim", double(identity_dim));
  put_setting(out, "model_dim", double(model_dim));
  put_setting(out, "heads", double(heads));
  put_setting(out, "layers", double(layers));
  put_setting(out, "ff_dim", double(ff_dim));
  put_setting(out, "use_speaker", use_speaker ? 1.0 : 0.0);
  put_setting(out, "regression", regression ? 1.0 : 0.0);
}

PredictorConfig PredictorConfig::load_from(const TensorMap& in) {
  PredictorConfig c;
  c.feature_dim = get_size_setting(in, "feature_dim");
  c.code_dim = get_size_setting(in, "code_dim");
  c.identity_dim = get_size_setting(in, "identity_dim");
  c.model_dim = get_size_setting(in, "model_dim");
  c.heads = get_size_setting(in, "heads");
  c.layers = get_size_setting(in, "layers");
  c.ff_dim = get_size_setting(in, "ff_dim");
  c.use_speaker = get_setting(in, "use_speaker") != 0.0;
  c.regression = get_setting(in, "regression") != 0.0;
  return c;
}

template <typename T>
StylePredictor<T>::StylePredictor(const PredictorConfig& config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  const std::size_t d = c.model_dim;
  Rng rng(seed);
  Builder<T> root(store_, rng);
  audio_in_ = Linear<T>::make(root.sub("audio_in"), c.feature_dim, d);
  step_embed_ = StepEmbedding<T>::make(root.sub("step"), d);
  speaker_in_ = Linear<T>::make(root.sub("speaker/in"), c.identity_dim, d);
  speaker_out_ = Linear<T>::make(root.sub("speaker/out"), d, d);
  code_in_ = Linear<T>::make(root.sub("code_in"), c.code_dim, d);
  query_ = &root.normal("query", {1, d}, 0.02);
  for (std::size_t i = 0; i < c.layers; ++i) {
    layers_.push_back(EncoderLayer<T>::make(root.sub("layer" + std::to_string(i)), d, c.heads, c.ff_dim));
  }
  norm_ = LayerNorm<T>::make(root.sub("norm"), d);
  head_ = Linear<T>::make(root.sub("head"), d, c.code_dim, true);
}

template <typename T>
Var<T> StylePredictor<T>::encode(const Context<T>& ctx, const Tensor<T>& audio, std::size_t frames,
                                 const std::vector<std::size_t>& steps, const Tensor<T>& identity,
                                 Var<T> noisy_codes) const {
  const auto& c = config_;
  if (frames == 0) throw std::invalid_argument("style predictor: empty audio");
  const std::size_t batch = steps.size();
  if (audio.cols() != c.feature_dim || audio.rows() != batch * frames || identity.rows() != batch ||
      identity.cols() != c.identity_dim || noisy_codes.rows() != batch || noisy_codes.cols() != c.code_dim) {
    throw std::invalid_argument("style predictor: batch layout mismatch");
  }
  const std::size_t d = c.model_dim;
  Var<T> audio_tok = ag::add(audio_in_(ctx, ctx.constant(audio)),
                             ctx.constant(positional_rows<T>(batch, frames, d)));
  Var<T> step_tok = step_embed_(ctx, steps);
  Tensor<T> id = identity;
  if (!c.use_speaker) id.fill(T(0));
  Var<T> speaker_tok = speaker_out_(ctx, ag::gelu(speaker_in_(ctx, ctx.constant(std::move(id)))));
  Var<T> code_tok = code_in_(ctx, noisy_codes);
  Var<T> query_tok = ag::repeat_rows(ctx.bind(*query_), batch);

  // Stack each token kind, then gather rows into per-sequence order.
  const Var<T> stacked = ag::concat_rows<T>({audio_tok, step_tok, speaker_tok, code_tok, query_tok});
  const std::size_t len = token_count(frames);
  const std::size_t tail = batch * frames;
  std::vector<std::size_t> order;
  order.reserve(batch * len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < frames; ++i) order.push_back(b * frames + i);
    for (std::size_t k = 0; k < 4; ++k) order.push_back(tail + k * batch + b);
  }
  Var<T> x = ag::select_rows(stacked, std::move(order));
  for (const auto& layer : layers_) x = layer(ctx, x, batch, len);
  return norm_(ctx, x);
}

template <typename T>
Var<T> StylePredictor<T>::head(const Context<T>& ctx, Var<T> encoded, std::size_t frames) const {
  const std::size_t len = token_count(frames);
  if (encoded.rows() % len != 0) throw std::invalid_argument("style predictor: ragged encoder output");
  std::vector<std::size_t> query_rows(encoded.rows() / len);
  for (std::size_t b = 0; b < query_rows.size(); ++b) query_rows[b] = b * len + len - 1;
  return head_(ctx, ag::select_rows(encoded, std::move(query_rows)));
}

template <typename T>
Var<T> StylePredictor<T>::predict(const Context<T>& ctx, const Tensor<T>& audio, std::size_t frames,
                                  const std::vector<std::size_t>& steps, const Tensor<T>& identity,
                                  Var<T> noisy_codes) const {
  return head(ctx, encode(ctx, audio, frames, steps, identity, noisy_codes), frames);
}

template <typename T>
Tensor<T> StylePredictor<T>::sample(const Tensor<T>& audio, std::size_t frames, const Tensor<T>& identity,
                                    const DiffusionSchedule& schedule, std::uint64_t noise_seed) const {
  const std::size_t batch = identity.rows();
  const std::size_t C = config_.code_dim;
  const std::size_t T_steps = schedule.num_steps();
  auto run = [&](const Tensor<T>& codes, std::size_t t) {
    Tape<T> tape(false);
    const Context<T> ctx{tape, false, false};
    return predict(ctx, audio, frames, std::vector<std::size_t>(batch, t), identity, ctx.constant(codes)).value();
  };
  if (config_.regression) return run(Tensor<T>::matrix(batch, C), T_steps);

  Rng rng(noise_seed);
  Tensor<T> x = Tensor<T>::matrix(batch, C);
  x.storage() = normal_vector<T>(rng, batch * C);
  for (std::size_t t = T_steps; t >= 1; --t) {
    const Tensor<T> x0 = run(x, t);
    const std::vector<T> noise = t > 1 ? normal_vector<T>(rng, batch * C) : std::vector<T>(batch * C);
    x.storage() = schedule.posterior_step<T>(x.values(), x0.values(), t, noise);
  }
  return x;
}

template <typename T>
TensorMap StylePredictor<T>::state() const {
  TensorMap out = store_.snapshot();
  config_.store_into(out);
  return out;
}

template <typename T>
std::unique_ptr<StylePredictor<T>> StylePredictor<T>::from_state(const TensorMap& state) {
  auto model = std::make_unique<StylePredictor<T>>(PredictorConfig::load_from(state), 0);
  model->store_.restore(state);
  return model;
}

template class StylePredictor<float>;
template class StylePredictor<double>;

}  // namespace stylediff
