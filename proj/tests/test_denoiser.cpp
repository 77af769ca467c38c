#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "gradcheck.hpp"
#include "stylediff/denoiser.hpp"
#include "stylediff/io.hpp"
#include "stylediff/random.hpp"
#include "tempdir.hpp"

using namespace stylediff;

namespace {

DenoiserConfig small_config() {
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

Tensor<float> random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor<float> t = Tensor<float>::matrix(rows, cols);
  for (auto& v : t.storage()) v = float(normal_vector<double>(rng, 1)[0]);
  return t;
}

struct Inputs {
  Tensor<float> noisy, tokens, codes, null_codes;
  std::vector<std::size_t> steps;
};

Inputs random_inputs(const Denoiser<float>& model, Rng& rng, std::size_t batch) {
  const auto& c = model.config();
  Inputs in;
  in.noisy = random_matrix(rng, batch, c.motion_dim);
  in.tokens = model.audio_tokens(random_matrix(rng, batch * c.window(), c.feature_dim));
  in.codes = Tensor<float>::matrix(batch, c.code_dim());
  in.null_codes = Tensor<float>::matrix(batch, c.code_dim());
  const Tensor<float> null_code = model.null_code();
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor<float> code = model.style_code(random_matrix(rng, 6 + uniform_index(rng, 10), c.motion_dim));
    std::copy_n(code.data(), c.code_dim(), in.codes.row(b).begin());
    std::copy_n(null_code.data(), c.code_dim(), in.null_codes.row(b).begin());
    in.steps.push_back(1 + uniform_index(rng, 100));
  }
  return in;
}

}  // namespace

TEST_CASE("guidance weights 1 and 0 reproduce the single branches bitwise") {
  Denoiser<float> model(small_config(), 5);
  testing::randomize(model.params(), 6, 0.3);
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Inputs in = random_inputs(model, rng, 1 + std::size_t(trial % 3));
    const Tensor<float> cond = model.predict(in.noisy, in.steps, in.tokens, in.codes);
    const Tensor<float> uncond = model.predict(in.noisy, in.steps, in.tokens, in.null_codes);
    CHECK(model.cfg_predict(in.noisy, in.steps, in.tokens, in.codes, in.null_codes, 1.0) == cond);
    CHECK(model.cfg_predict(in.noisy, in.steps, in.tokens, in.codes, in.null_codes, 0.0) == uncond);
  }
}

TEST_CASE("intermediate guidance blends the two branches") {
  Denoiser<float> model(small_config(), 8);
  testing::randomize(model.params(), 9, 0.3);
  Rng rng(10);
  const Inputs in = random_inputs(model, rng, 3);
  const Tensor<float> cond = model.predict(in.noisy, in.steps, in.tokens, in.codes);
  const Tensor<float> uncond = model.predict(in.noisy, in.steps, in.tokens, in.null_codes);
  for (double omega : {0.5, 2.0, -1.0}) {
    const Tensor<float> mix = model.cfg_predict(in.noisy, in.steps, in.tokens, in.codes, in.null_codes, omega);
    for (std::size_t i = 0; i < mix.size(); ++i) {
      CHECK(mix[i] == doctest::Approx(omega * cond[i] + (1 - omega) * uncond[i]).epsilon(1e-5));
    }
  }
  CHECK_FALSE(cond == uncond);
}

TEST_CASE("a fresh denoiser predicts zeros from its zero-initialized head") {
  Denoiser<float> model(small_config(), 11);
  Rng rng(12);
  const Inputs in = random_inputs(model, rng, 2);
  const Tensor<float> out = model.predict(in.noisy, in.steps, in.tokens, in.codes);
  CHECK(out.rows() == 2);
  CHECK(out.cols() == 10);
  for (float v : out.storage()) CHECK(v == 0.0f);
}

TEST_CASE("batched prediction equals row-by-row prediction") {
  Denoiser<float> model(small_config(), 13);
  testing::randomize(model.params(), 14, 0.3);
  Rng rng(15);
  const Inputs in = random_inputs(model, rng, 4);
  const Tensor<float> batch = model.predict(in.noisy, in.steps, in.tokens, in.codes);
  const std::size_t W = model.config().window(), d = model.config().model_dim;
  for (std::size_t b = 0; b < 4; ++b) {
    Tensor<float> noisy = Tensor<float>::matrix(1, 10), tokens = Tensor<float>::matrix(W, d),
                  code = Tensor<float>::matrix(1, d);
    std::copy_n(in.noisy.row(b).begin(), 10, noisy.data());
    std::copy_n(in.tokens.data() + b * W * d, W * d, tokens.data());
    std::copy_n(in.codes.row(b).begin(), d, code.data());
    const Tensor<float> one = model.predict(noisy, {in.steps[b]}, tokens, code);
    for (std::size_t j = 0; j < 10; ++j) CHECK(one(0, j) == batch(b, j));
  }
}

TEST_CASE("style codes have the model width for any reference length") {
  Denoiser<float> model(small_config(), 16);
  testing::randomize(model.params(), 17, 0.3);
  Rng rng(18);
  for (std::size_t n : {1, 5, 33}) {
    const Tensor<float> code = model.style_code(random_matrix(rng, n, 10));
    CHECK(code.rows() == 1);
    CHECK(code.cols() == 16);
    for (float v : code.storage()) CHECK(std::isfinite(v));
  }
  CHECK(model.null_code().cols() == 16);
  CHECK_FALSE(model.null_code() == model.style_code(random_matrix(rng, 8, 10)));
}

TEST_CASE("the full-size configuration builds and runs") {
  const DenoiserConfig c = DenoiserConfig::full_scale();
  Denoiser<float> model(c, 19);
  Rng rng(20);
  const Tensor<float> tokens = model.audio_tokens(random_matrix(rng, c.window(), c.feature_dim));
  CHECK(tokens.rows() == c.window());
  CHECK(tokens.cols() == c.model_dim);
  const Tensor<float> code = model.style_code(random_matrix(rng, 4, c.motion_dim));
  const Tensor<float> out = model.predict(random_matrix(rng, 1, c.motion_dim), {3}, tokens, code);
  CHECK(out.cols() == c.motion_dim);
}

TEST_CASE("denoiser checkpoints round-trip with identical predictions") {
  testing::TempDir dir;
  Denoiser<float> model(small_config(), 21);
  testing::randomize(model.params(), 22, 0.3);
  write_checkpoint(dir / "a.sdmk", model.state());
  const auto loaded = Denoiser<float>::from_state(read_checkpoint(dir / "a.sdmk"));
  write_checkpoint(dir / "b.sdmk", loaded->state());
  CHECK(testing::file_bytes(dir / "a.sdmk") == testing::file_bytes(dir / "b.sdmk"));
  Rng rng(23), rng2(23);
  const Inputs a = random_inputs(model, rng, 2);
  const Inputs b = random_inputs(*loaded, rng2, 2);
  CHECK(model.predict(a.noisy, a.steps, a.tokens, a.codes) == loaded->predict(b.noisy, b.steps, b.tokens, b.codes));
  CHECK(loaded->config().half_window == 2);
}

TEST_CASE("audio windows replicate edge frames") {
  Tensor<float> audio = Tensor<float>::matrix(4, 2);
  for (std::size_t r = 0; r < 4; ++r) {
    audio(r, 0) = float(r);
    audio(r, 1) = float(10 + r);
  }
  const Tensor<double> w = audio_windows<double>(audio, {0, 3}, 2);
  REQUIRE(w.rows() == 10);
  const double expected[10] = {0, 0, 0, 1, 2, 1, 2, 3, 3, 3};
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(w(i, 0) == expected[i]);
    CHECK(w(i, 1) == 10 + expected[i]);
  }
  CHECK_THROWS_AS(audio_windows<float>(audio, {4}, 2), std::out_of_range);
  CHECK_THROWS_AS(audio_windows<float>(Tensor<float>::matrix(0, 2), {0}, 2), std::invalid_argument);
}

TEST_CASE("invalid denoiser settings are rejected") {
  DenoiserConfig c = small_config();
  c.model_dim = 15;
  CHECK_THROWS_AS(Denoiser<float>(c, 1), std::invalid_argument);
  c = small_config();
  c.half_window = 0;
  CHECK_THROWS_AS(Denoiser<float>(c, 1), std::invalid_argument);
}
