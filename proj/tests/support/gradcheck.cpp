#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stylediff/denoiser.hpp"
#include "stylediff/layers.hpp"
#include "stylediff/lip_expert.hpp"
#include "stylediff/random.hpp"
#include "stylediff/style_predictor.hpp"

namespace stylediff::testing {

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double sd = 1.0) {
  const std::size_t n = shape_size(shape);
  return Tensor<double>(std::move(shape), normal_vector<double>(rng, n, sd));
}

Tensor<double> uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = uniform_real(rng, lo, hi);
  return t;
}

// Contracts an output with fixed random weights so every coordinate matters.
Var<double> project(Var<double> out, std::uint64_t seed) {
  Rng rng(seed);
  Tape<double>& tape = *out.tape;
  return ag::sum(ag::mul(out, tape.constant(random_tensor(rng, out.value().shape()))));
}

void note(GradCheck& check, double analytic, double numeric, const std::string& where) {
  const double err = relative_error(analytic, numeric);
  ++check.checked;
  if (err >= check.max_rel_error) {
    check.max_rel_error = err;
    std::ostringstream os;
    os << where << " analytic " << analytic << " numeric " << numeric;
    check.worst = os.str();
  }
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-4);
}

template <typename T>
void randomize_store(ParameterStore<T>& store, std::uint64_t seed, double sd) {
  Rng rng(seed);
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    for (auto& v : p.value.storage()) v += T(normal_vector<double>(rng, 1, sd)[0]);
  }
}

void randomize(ParameterStore<double>& store, std::uint64_t seed, double sd) { randomize_store(store, seed, sd); }
void randomize(ParameterStore<float>& store, std::uint64_t seed, double sd) { randomize_store(store, seed, sd); }

GradCheck check_parameters(const std::string& name, ParameterStore<double>& store, const ParamLoss& loss,
                           std::size_t samples, std::uint64_t seed, double step) {
  GradCheck check{name};
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  std::vector<std::pair<Parameter<double>*, std::string>> trainable;
  std::size_t total = 0;
  for (auto& [pname, p] : store.entries()) {
    if (!p.trainable) continue;
    trainable.emplace_back(&p, pname);
    total += p.value.size();
  }
  if (trainable.empty()) return check;

  auto evaluate = [&] {
    Tape<double> tape(false);
    return loss(tape).value()[0];
  };
  auto probe = [&](Parameter<double>& p, const std::string& pname, std::size_t i) {
    const double saved = p.value[i];
    p.value[i] = saved + step;
    const double up = evaluate();
    p.value[i] = saved - step;
    const double down = evaluate();
    p.value[i] = saved;
    note(check, p.grad[i], (up - down) / (2 * step), pname + "[" + std::to_string(i) + "]");
  };

  Rng rng(seed);
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = uniform_index(rng, total);
    for (auto& [p, pname] : trainable) {
      if (flat < p->value.size()) {
        probe(*p, pname, flat);
        break;
      }
      flat -= p->value.size();
    }
  }
  for (auto& [p, pname] : trainable) probe(*p, pname, uniform_index(rng, p->value.size()));
  return check;
}

GradCheck check_inputs(const std::string& name, std::vector<Tensor<double>> inputs, const InputLoss& loss,
                       double step) {
  GradCheck check{name};
  std::vector<Tensor<double>> grads;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.input(in));
    tape.backward(loss(tape, vars));
    for (const auto& v : vars) grads.push_back(tape.has_grad(v) ? tape.grad(v) : Tensor<double>(tape.value(v).shape()));
  }
  auto evaluate = [&] {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.constant(in));
    return loss(tape, vars).value()[0];
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + step;
      const double up = evaluate();
      inputs[k][i] = saved - step;
      const double down = evaluate();
      inputs[k][i] = saved;
      note(check, grads[k][i], (up - down) / (2 * step),
           "input" + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  return check;
}

std::vector<GradCheck> op_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheck> out;
  auto rt = [&](Shape s) { return random_tensor(rng, std::move(s)); };
  using Vars = std::vector<Var<double>>;
  using T = Tape<double>;

  out.push_back(check_inputs("matmul", {rt({3, 4}), rt({4, 5})},
                             [](T&, const Vars& v) { return project(ag::matmul(v[0], v[1]), 1); }));
  out.push_back(check_inputs("linear", {rt({3, 4}), rt({4, 5}), rt({5})},
                             [](T&, const Vars& v) { return project(ag::linear(v[0], v[1], v[2]), 2); }));
  out.push_back(check_inputs("add", {rt({3, 4}), rt({3, 4})},
                             [](T&, const Vars& v) { return project(ag::add(v[0], v[1]), 3); }));
  out.push_back(check_inputs("sub", {rt({3, 4}), rt({3, 4})},
                             [](T&, const Vars& v) { return project(ag::sub(v[0], v[1]), 4); }));
  out.push_back(check_inputs("mul", {rt({3, 4}), rt({3, 4})},
                             [](T&, const Vars& v) { return project(ag::mul(v[0], v[1]), 5); }));
  out.push_back(check_inputs("scale", {rt({3, 4})},
                             [](T&, const Vars& v) { return project(ag::scale(v[0], -1.7), 6); }));
  out.push_back(check_inputs("repeat_rows", {rt({2, 3})},
                             [](T&, const Vars& v) { return project(ag::repeat_rows(v[0], 3), 7); }));
  out.push_back(check_inputs("concat_cols", {rt({3, 2}), rt({3, 4})},
                             [](T&, const Vars& v) { return project(ag::concat_cols(v[0], v[1]), 8); }));
  out.push_back(check_inputs("concat_rows", {rt({2, 3}), rt({4, 3}), rt({1, 3})},
                             [](T&, const Vars& v) { return project(ag::concat_rows(v), 9); }));
  out.push_back(check_inputs("select_rows", {rt({4, 3})}, [](T&, const Vars& v) {
    return project(ag::select_rows(v[0], {3, 0, 3, 1}), 10);
  }));
  out.push_back(check_inputs("relu", {rt({4, 5})}, [](T&, const Vars& v) { return project(ag::relu(v[0]), 11); }));
  out.push_back(check_inputs("gelu", {rt({4, 5})}, [](T&, const Vars& v) { return project(ag::gelu(v[0]), 12); }));
  out.push_back(check_inputs("tanh", {rt({4, 5})}, [](T&, const Vars& v) { return project(ag::tanh(v[0]), 13); }));
  out.push_back(check_inputs("layer_norm", {rt({3, 6}), rt({6}), rt({6})}, [](T&, const Vars& v) {
    return project(ag::layer_norm(v[0], v[1], v[2]), 14);
  }));
  kernels::AttentionShape shape{2, 3, 4, 2, 4};
  out.push_back(check_inputs("attention", {rt({6, 4}), rt({8, 4}), rt({8, 4})}, [shape](T&, const Vars& v) {
    return project(ag::attention(v[0], v[1], v[2], shape), 15);
  }));
  out.push_back(check_inputs("attention_pool", {rt({6, 4}), rt({4})}, [](T&, const Vars& v) {
    return project(ag::attention_pool(v[0], v[1], 3), 16);
  }));
  out.push_back(check_inputs("segment_mean", {rt({6, 4})}, [](T&, const Vars& v) {
    return project(ag::segment_mean(v[0], 3), 17);
  }));
  out.push_back(check_inputs("conv1d", {rt({12, 3}), rt({4, 3, 3}), rt({4})}, [](T&, const Vars& v) {
    return project(ag::conv1d(v[0], v[1], v[2], 6, 2, 1), 18);
  }));
  out.push_back(check_inputs("batch_norm_train", {rt({6, 3}), rt({3}), rt({3})}, [](T&, const Vars& v) {
    Tensor<double> mean({3}), var({3}, 1.0);
    return project(ag::batch_norm(v[0], v[1], v[2], mean, var, true), 19);
  }));
  out.push_back(check_inputs("batch_norm_eval", {rt({6, 3}), rt({3}), rt({3})}, [](T&, const Vars& v) {
    Tensor<double> mean({3}, {0.1, -0.2, 0.3}), var({3}, {0.5, 1.5, 2.0});
    return project(ag::batch_norm(v[0], v[1], v[2], mean, var, false), 20);
  }));
  out.push_back(check_inputs("row_cosine", {rt({4, 5}), rt({4, 5})}, [](T&, const Vars& v) {
    return project(ag::row_cosine(v[0], v[1], 1e-8), 21);
  }));
  const std::vector<double> labels{1, 0, 0, 1};
  out.push_back(check_inputs("bce_mean", {uniform_tensor(rng, {4, 1}, 0.1, 0.9)}, [labels](T&, const Vars& v) {
    return ag::bce_mean(v[0], labels, 1e-7);
  }));
  out.push_back(check_inputs("neg_log_mean", {uniform_tensor(rng, {4, 1}, 0.1, 0.9)}, [](T&, const Vars& v) {
    return ag::neg_log_mean(v[0], 1e-7);
  }));
  out.push_back(check_inputs("squared_error", {rt({3, 4}), rt({3, 4})}, [](T&, const Vars& v) {
    return ag::squared_error(v[0], v[1]);
  }));
  out.push_back(check_inputs("sum", {rt({3, 4})}, [](T&, const Vars& v) { return ag::sum(v[0]); }));
  return out;
}

std::vector<GradCheck> layer_checks(std::size_t samples, std::uint64_t seed) {
  std::vector<GradCheck> out;
  Rng data_rng(seed);
  const std::size_t d = 8;
  const Tensor<double> x = random_tensor(data_rng, {6, d});
  const Tensor<double> kv = random_tensor(data_rng, {8, d});

  auto run = [&](const std::string& name, auto make, auto forward) {
    ParameterStore<double> store;
    Rng rng(seed + out.size() + 1);
    Builder<double> b(store, rng, name);
    auto layer = make(b);
    randomize(store, seed + 100 + out.size());
    out.push_back(check_parameters(name, store, [&](Tape<double>& tape) {
      const Context<double> ctx{tape, true, true};
      return project(forward(layer, ctx, tape), seed + 7);
    }, samples, seed + 200 + out.size()));
  };

  using Ctx = Context<double>;
  using Tp = Tape<double>;
  run("linear", [&](Builder<double> b) { return Linear<double>::make(b, d, 5); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x)); });
  run("layer_norm", [&](Builder<double> b) { return LayerNorm<double>::make(b, d); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x)); });
  run("self_attention", [&](Builder<double> b) { return MultiHeadAttention<double>::make(b, d, 2); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), t.constant(x), 2, 3, 3); });
  run("cross_attention", [&](Builder<double> b) { return MultiHeadAttention<double>::make(b, d, 2); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), t.constant(kv), 2, 3, 4); });
  run("feed_forward", [&](Builder<double> b) { return FeedForward<double>::make(b, d, 16); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x)); });
  run("encoder_layer", [&](Builder<double> b) { return EncoderLayer<double>::make(b, d, 2, 16); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), 2, 3); });
  run("decoder_layer", [&](Builder<double> b) { return DecoderLayer<double>::make(b, d, 2, 16); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), t.constant(kv), 2, 3, 4); });
  run("attention_pool", [&](Builder<double> b) { return AttentionPool<double>::make(b, d); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), 3); });
  run("conv_block_strided", [&](Builder<double> b) { return ConvBlock<double>::make(b, d, 5, 3, 2, false); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), 3); });
  run("conv_block_residual", [&](Builder<double> b) { return ConvBlock<double>::make(b, d, d, 3, 1, true); },
      [&](const auto& l, const Ctx& ctx, Tp& t) { return l(ctx, t.constant(x), 3); });
  run("step_embedding", [&](Builder<double> b) { return StepEmbedding<double>::make(b, d); },
      [&](const auto& l, const Ctx& ctx, Tp&) { return l(ctx, std::vector<std::size_t>{1, 7, 50}); });
  return out;
}

std::vector<GradCheck> loss_checks(std::size_t samples, std::uint64_t seed) {
  std::vector<GradCheck> out;
  Rng rng(seed);

  DenoiserConfig dc;
  dc.feature_dim = 6;
  dc.motion_dim = 16;
  dc.model_dim = 8;
  dc.heads = 2;
  dc.audio_layers = dc.style_layers = dc.decoder_layers = 1;
  dc.ff_dim = 16;
  dc.half_window = 2;

  LipExpertConfig ec;
  ec.feature_dim = dc.feature_dim;
  ec.motion_dim = dc.motion_dim;
  ec.model_dim = 8;
  ec.heads = 2;
  ec.style_layers = 1;
  ec.ff_dim = 16;
  ec.embed_dim = 8;
  ec.clip_length = 5;
  const FaceBasis basis = FaceBasis::synthetic(seed, 12, 4, dc.motion_dim, 8);

  const std::size_t K = 2, n = ec.clip_length, R = 6;
  const Tensor<double> refs = random_tensor(rng, {K * R, dc.motion_dim}, 0.5);
  const Tensor<double> audio = random_tensor(rng, {K * n, dc.feature_dim});
  const Tensor<double> motion = random_tensor(rng, {K * n, dc.motion_dim}, 0.5);
  const std::vector<double> labels{1.0, 0.0};

  // Expert loss over the expert's parameters.
  {
    LipExpert<double> expert(ec, basis, seed + 1);
    randomize(expert.params(), seed + 2, 0.1);
    out.push_back(check_parameters("expert_loss", expert.params(), [&](Tape<double>& tape) {
      const Context<double> ctx{tape, true, true};
      const Var<double> style = expert.style_features(ctx, refs, R);
      const Var<double> p = expert.sync_probability(ctx, tape.constant(audio), tape.constant(motion), style);
      return ag::bce_mean(p, labels, kProbabilityEps);
    }, samples, seed + 3));
  }

  Tensor<float> clip_audio = Tensor<float>::matrix(12, dc.feature_dim);
  for (auto& v : clip_audio.storage()) v = float(normal_vector<double>(rng, 1)[0]);
  std::vector<std::size_t> frames;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < n; ++j) frames.push_back(k + j);
  }
  const Tensor<double> windows = audio_windows<double>(clip_audio, frames, dc.half_window);
  const Tensor<double> noisy = random_tensor(rng, {K * n, dc.motion_dim});
  const Tensor<double> clean = random_tensor(rng, {K * n, dc.motion_dim}, 0.5);
  std::vector<std::size_t> steps;
  for (std::size_t k = 0; k < K; ++k) steps.insert(steps.end(), n, 1 + 37 * k);

  auto denoiser_forward = [&](const Denoiser<double>& model, const Context<double>& ctx) {
    const Var<double> codes = ag::repeat_rows(model.encode_style(ctx, refs, R), n);
    const Var<double> tokens = model.encode_audio(ctx, windows);
    return model.decode(ctx, ctx.constant(noisy), steps, tokens, codes);
  };

  // Denoising loss over the denoiser's parameters.
  {
    Denoiser<double> model(dc, seed + 4);
    randomize(model.params(), seed + 5, 0.1);
    out.push_back(check_parameters("denoise_loss", model.params(), [&](Tape<double>& tape) {
      const Context<double> ctx{tape, true, true};
      return ag::squared_error(denoiser_forward(model, ctx), tape.constant(clean));
    }, samples, seed + 6));
  }

  // Sync loss through a frozen expert, over the denoiser's parameters.
  {
    Denoiser<double> model(dc, seed + 7);
    randomize(model.params(), seed + 8, 0.1);
    LipExpert<double> expert(ec, basis, seed + 9);
    randomize(expert.params(), seed + 10, 0.1);
    const std::uint64_t frozen_before = store_fingerprint(expert.params());
    out.push_back(check_parameters("sync_loss", model.params(), [&](Tape<double>& tape) {
      const Context<double> ctx{tape, true, true};
      const Context<double> frozen{tape, false, false};
      const Var<double> generated = denoiser_forward(model, ctx);
      const Var<double> style = expert.style_features(frozen, refs, R);
      const Var<double> p = expert.sync_probability(frozen, tape.constant(audio), generated, style);
      return ag::neg_log_mean(p, kProbabilityEps);
    }, samples, seed + 11));
    if (store_fingerprint(expert.params()) != frozen_before) out.back().max_rel_error = 1.0;
  }

  // Predictor loss over the predictor's parameters.
  {
    PredictorConfig pc;
    pc.feature_dim = dc.feature_dim;
    pc.code_dim = 8;
    pc.identity_dim = 4;
    pc.model_dim = 8;
    pc.heads = 2;
    pc.layers = 1;
    pc.ff_dim = 16;
    StylePredictor<double> predictor(pc, seed + 12);
    randomize(predictor.params(), seed + 13, 0.1);
    const std::size_t B = 2, L = 5;
    const Tensor<double> pa = random_tensor(rng, {B * L, pc.feature_dim});
    const Tensor<double> id = random_tensor(rng, {B, pc.identity_dim});
    const Tensor<double> noisy_code = random_tensor(rng, {B, pc.code_dim});
    const Tensor<double> target = random_tensor(rng, {B, pc.code_dim});
    out.push_back(check_parameters("predictor_loss", predictor.params(), [&](Tape<double>& tape) {
      const Context<double> ctx{tape, true, true};
      const Var<double> pred = predictor.predict(ctx, pa, L, {3, 60}, id, tape.constant(noisy_code));
      return ag::squared_error(pred, tape.constant(target));
    }, samples, seed + 14));
  }
  return out;
}

}  // namespace stylediff::testing
