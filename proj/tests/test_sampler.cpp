#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "gradcheck.hpp"
#include "stylediff/random.hpp"
#include "stylediff/sampler.hpp"

using namespace stylediff;

namespace {

Tensor<float> random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor<float> t = Tensor<float>::matrix(rows, cols);
  for (auto& v : t.storage()) v = float(normal_vector<double>(rng, 1)[0]);
  return t;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

DenoiserConfig tiny_denoiser() {
  DenoiserConfig c;
  c.feature_dim = 6;
  c.motion_dim = 10;
  c.model_dim = 16;
  c.heads = 2;
  c.audio_layers = 1;
  c.style_layers = 1;
  c.decoder_layers = 1;
  c.ff_dim = 32;
  c.half_window = 2;
  c.null_frames = 8;
  return c;
}

}  // namespace

TEST_CASE("a perfect x0 oracle recovers x0 under DDPM and DDIM") {
  const auto schedule = DiffusionSchedule::default_linear(100);
  Rng rng(1);
  const Tensor<float> x0 = random_matrix(rng, 16, 12);
  const X0Predictor oracle = [&](const Tensor<float>&, std::size_t) { return x0; };
  std::vector<std::uint64_t> ids(16);
  for (std::size_t i = 0; i < 16; ++i) ids[i] = i;

  SamplerConfig ddpm;
  ddpm.mode = SamplerMode::ddpm;
  ddpm.inject_noise = false;
  CHECK(max_abs_diff(reverse_chain(schedule, 12, ids, oracle, ddpm), x0) < 1e-3);
  ddpm.inject_noise = true;
  CHECK(max_abs_diff(reverse_chain(schedule, 12, ids, oracle, ddpm), x0) < 1e-3);

  SamplerConfig ddim;
  ddim.ddim_steps = 10;
  CHECK(max_abs_diff(reverse_chain(schedule, 12, ids, oracle, ddim), x0) < 1e-3);
  ddim.ddim_steps = 100;
  CHECK(max_abs_diff(reverse_chain(schedule, 12, ids, oracle, ddim), x0) < 1e-3);
}

TEST_CASE("the reverse chain visits the DDIM timesteps in order") {
  const auto schedule = DiffusionSchedule::default_linear(100);
  std::vector<std::size_t> visited;
  const X0Predictor spy = [&](const Tensor<float>& x, std::size_t t) {
    visited.push_back(t);
    return Tensor<float>::matrix(x.rows(), x.cols());
  };
  SamplerConfig cfg;
  cfg.ddim_steps = 10;
  reverse_chain(schedule, 3, {0}, spy, cfg);
  CHECK(visited == schedule.ddim_timesteps(10));
  visited.clear();
  cfg.mode = SamplerMode::ddpm;
  reverse_chain(schedule, 3, {0}, spy, cfg);
  CHECK(visited.size() == 100);
  CHECK(visited.front() == 100);
  CHECK(visited.back() == 1);
}

TEST_CASE("each row's starting noise depends only on its stream id") {
  const auto schedule = DiffusionSchedule::default_linear(20);
  const X0Predictor keep = [](const Tensor<float>& x, std::size_t) { return x; };
  SamplerConfig cfg;
  cfg.ddim_steps = 1;
  cfg.seed = 5;
  // With t_prev = 0 the DDIM step returns the x0 estimate, here x_T itself.
  const Tensor<float> all = reverse_chain(schedule, 4, {0, 1, 2, 3}, keep, cfg);
  const Tensor<float> one = reverse_chain(schedule, 4, {2}, keep, cfg);
  for (std::size_t j = 0; j < 4; ++j) CHECK(one(0, j) == all(2, j));
  cfg.seed = 6;
  CHECK_FALSE(reverse_chain(schedule, 4, {2}, keep, cfg) == one);
}

TEST_CASE("any subset of frames regenerates bit for bit") {
  Denoiser<float> model(tiny_denoiser(), 2);
  testing::randomize(model.params(), 3, 0.3);
  const auto schedule = DiffusionSchedule::default_linear(20);
  Rng rng(4);
  const Tensor<float> audio = random_matrix(rng, 12, 6);
  const Tensor<float> code = model.style_code(random_matrix(rng, 8, 10));
  SamplerConfig cfg;
  cfg.ddim_steps = 5;
  cfg.seed = 9;
  for (double omega : {1.0, 0.0, 1.5}) {
    cfg.omega = omega;
    const Tensor<float> full = generate_sequence(model, schedule, audio, code, cfg);
    CHECK(full.rows() == 12);
    const std::vector<std::size_t> subset{11, 0, 5};
    const Tensor<float> part = generate_frames(model, schedule, audio, code, cfg, subset);
    for (std::size_t i = 0; i < subset.size(); ++i) {
      for (std::size_t j = 0; j < 10; ++j) CHECK(part(i, j) == full(subset[i], j));
    }
    SamplerConfig chunked = cfg;
    chunked.chunk = 5;
    CHECK(generate_sequence(model, schedule, audio, code, chunked) == full);
  }
}

TEST_CASE("guidance weight 1 and 0 sample the single branches") {
  Denoiser<float> model(tiny_denoiser(), 5);
  testing::randomize(model.params(), 6, 0.3);
  const auto schedule = DiffusionSchedule::default_linear(20);
  Rng rng(7);
  const Tensor<float> audio = random_matrix(rng, 6, 6);
  const Tensor<float> code = model.style_code(random_matrix(rng, 8, 10));
  SamplerConfig cfg;
  cfg.ddim_steps = 4;
  cfg.omega = 0.0;
  const Tensor<float> unconditional = generate_sequence(model, schedule, audio, code, cfg);
  cfg.omega = 1.0;
  CHECK(generate_sequence(model, schedule, audio, model.null_code(), cfg) == unconditional);
  CHECK_FALSE(generate_sequence(model, schedule, audio, code, cfg) == unconditional);
}

TEST_CASE("sampler arguments are validated") {
  Denoiser<float> model(tiny_denoiser(), 8);
  const auto schedule = DiffusionSchedule::default_linear(20);
  Rng rng(9);
  const Tensor<float> audio = random_matrix(rng, 4, 6);
  const Tensor<float> code = model.null_code();
  SamplerConfig cfg;
  cfg.ddim_steps = 4;
  cfg.omega = -0.1;
  CHECK_THROWS_AS(generate_sequence(model, schedule, audio, code, cfg), std::invalid_argument);
  cfg.omega = 4.5;
  CHECK_THROWS_AS(generate_sequence(model, schedule, audio, code, cfg), std::invalid_argument);
  cfg.omega = 3.0;
  CHECK_NOTHROW(generate_sequence(model, schedule, audio, code, cfg));
  cfg.omega = 1.0;
  CHECK_THROWS_AS(generate_sequence(model, schedule, random_matrix(rng, 4, 5), code, cfg), std::invalid_argument);
  CHECK_THROWS_AS(generate_sequence(model, schedule, audio, Tensor<float>::matrix(1, 3), cfg), std::invalid_argument);
  CHECK_THROWS_AS(generate_frames(model, schedule, audio, code, cfg, {4}), std::out_of_range);
  cfg.ddim_steps = 21;
  CHECK_THROWS_AS(generate_sequence(model, schedule, audio, code, cfg), std::invalid_argument);
}

TEST_CASE("style interpolation is linear and exact at the ends") {
  const std::vector<float> a{1.0f, -2.0f, 0.1f}, b{3.0f, 2.0f, 0.7f};
  CHECK(interpolate_styles(a, b, 0.0) == a);
  CHECK(interpolate_styles(a, b, 1.0) == b);
  const auto mid = interpolate_styles(a, b, 0.25);
  CHECK(mid[0] == doctest::Approx(1.5));
  CHECK(mid[1] == doctest::Approx(-1.0));
  CHECK_THROWS_AS(interpolate_styles(a, b, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(interpolate_styles(a, {1.0f}, 0.5), std::invalid_argument);
}
