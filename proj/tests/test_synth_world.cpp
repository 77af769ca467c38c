#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <set>

#include "stylediff/dataset_io.hpp"
#include "stylediff/random.hpp"
#include "stylediff/synth_world.hpp"
#include "tempdir.hpp"

using namespace stylediff;

namespace {

const SynthWorld& world() {
  static const SynthWorld w{WorldConfig{}};
  return w;
}

Tensor<float> shifted(const Tensor<float>& m, std::size_t by) {
  Tensor<float> out = Tensor<float>::matrix(m.rows() - by, m.cols());
  std::copy(m.data() + by * m.cols(), m.data() + m.size(), out.data());
  return out;
}

Tensor<float> leading(const Tensor<float>& m, std::size_t rows) {
  Tensor<float> out = Tensor<float>::matrix(rows, m.cols());
  std::copy_n(m.data(), rows * m.cols(), out.data());
  return out;
}

}  // namespace

TEST_CASE("clips are a pure function of ids, length and seed") {
  const SynthClip a = world().generate_clip(2, 3, 100, 99);
  const SynthClip b = world().generate_clip(2, 3, 100, 99);
  CHECK(a.audio == b.audio);
  CHECK(a.motion == b.motion);
  CHECK(a.identity == b.identity);
  CHECK(a.audio.rows() == 100);
  CHECK(a.motion.cols() == 64);
  CHECK(a.audio.cols() == 32);
  const SynthClip c = world().generate_clip(2, 3, 100, 100);
  CHECK_FALSE(a.audio == c.audio);
  const SynthClip other = SynthWorld(WorldConfig{}).generate_clip(2, 3, 100, 99);
  CHECK(other.motion == a.motion);
}

TEST_CASE("motion is the style transform of the audio's base response") {
  const SynthClip clip = world().generate_clip(1, 5, 80, 3);
  const Tensor<float> expected = world().apply_style(world().base_response(clip.audio), 5);
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(clip.motion[i] == doctest::Approx(expected[i]).epsilon(1e-6));
}

TEST_CASE("styles share mouth dims exactly and differ elsewhere") {
  const SynthClip clip = world().generate_clip(0, 0, 64, 11);
  const Tensor<float> base = world().base_response(clip.audio);
  const Tensor<float> a = world().apply_style(base, 2);
  const Tensor<float> b = world().apply_style(base, 6);
  double non_mouth_gap = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(a(r, c) == b(r, c));
    for (std::size_t c = 8; c < 64; ++c) non_mouth_gap += std::abs(a(r, c) - b(r, c));
  }
  CHECK(non_mouth_gap > 1.0);
  for (std::size_t s = 0; s < 8; ++s) {
    const StyleArchetype& arch = world().archetype(s);
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(arch.gain(c) == 1.0);
      CHECK(arch.offset(c) == 0.0);
    }
    for (std::size_t c = 8; c < 64; ++c) CHECK(arch.gain(c) != 0.0);
  }
}

TEST_CASE("dataset lengths, splits and per-style coverage") {
  const auto clips = world().generate_dataset();
  const WorldConfig& c = world().config();
  CHECK(clips.size() == c.speakers * c.styles * c.clips_per_pair);
  std::set<std::size_t> train, test;
  for (const auto& clip : clips) {
    CHECK(clip.length() >= 64);
    CHECK(clip.length() <= 256);
    (world().is_train_speaker(clip.speaker) ? train : test).insert(clip.speaker);
  }
  CHECK(train.size() == 6);
  CHECK(test.size() == 2);
  for (std::size_t s : train) CHECK(test.count(s) == 0);
  CHECK(c.clips_per_pair >= 2);
  const SynthClip again = world().dataset_clip(4, 2, 1);
  CHECK(again.motion == clips[(4 * c.styles + 2) * c.clips_per_pair + 1].motion);
}

TEST_CASE("dataset regeneration from a manifest is byte-identical") {
  testing::TempDir a, b;
  WorldConfig small;
  small.speakers = 3;
  small.train_speakers = 2;
  small.styles = 2;
  small.clips_per_pair = 2;
  write_dataset(SynthWorld(small), a.path());
  const LoadedDataset loaded = load_dataset(a.path());
  write_dataset(SynthWorld(loaded.world), b.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CHECK(testing::file_bytes(entry.path()) == testing::file_bytes(b.path() / rel));
  }
  CHECK(loaded.clips.size() == 12);
  CHECK(loaded.clips[5].motion == SynthWorld(small).dataset_clip(1, 0, 1).motion);
}

TEST_CASE("oracle classifier recovers ground-truth styles") {
  std::size_t correct = 0, total = 0;
  for (std::size_t sp = 0; sp < 8; ++sp) {
    for (std::size_t st = 0; st < 8; ++st) {
      const SynthClip clip = world().dataset_clip(sp, st, 0);
      correct += world().oracle_style_classify(clip.motion) == st;
      ++total;
    }
  }
  CHECK(correct == total);
}

TEST_CASE("oracle classifier tolerates sigma 0.1 noise") {
  Rng rng(17);
  std::size_t correct = 0, total = 0;
  for (std::size_t trial = 0; trial < 200; ++trial) {
    const std::size_t style = trial % 8;
    SynthClip clip = world().generate_clip(trial % 8, style, 64, 500 + trial);
    for (auto& v : clip.motion.storage()) v += float(normal_vector<double>(rng, 1, 0.1)[0]);
    correct += world().oracle_style_classify(clip.motion) == style;
    ++total;
  }
  CHECK(double(correct) / double(total) >= 0.95);
}

TEST_CASE("oracle classifier breaks exact ties toward the lowest id") {
  WorldConfig twin;
  twin.styles = 2;
  twin.offset_scale = 1e-300;  // offsets vanish once cast to float
  const SynthWorld w(twin);
  // Zero motion maps to a zero base, which every archetype reproduces exactly.
  Tensor<float> zero = Tensor<float>::matrix(10, 64);
  const auto residuals = w.style_residuals(zero);
  CHECK(residuals.size() == 2);
  CHECK(residuals[0] == residuals[1]);
  CHECK(w.oracle_style_classify(zero) == 0);
}

TEST_CASE("oracle sync score separates aligned, shifted and random motion") {
  const SynthClip clip = world().generate_clip(3, 4, 160, 21);
  CHECK(world().oracle_sync_score(clip.audio, clip.motion) == doctest::Approx(1.0).epsilon(1e-5));

  const std::size_t L = 128;
  const Tensor<float> audio = leading(clip.audio, L);
  const double aligned = world().oracle_sync_score(audio, leading(clip.motion, L));
  for (std::size_t shift : {8, 12, 20}) {
    const double moved = world().oracle_sync_score(audio, leading(shifted(clip.motion, shift), L));
    INFO("shift " << shift);
    CHECK(aligned - moved >= 0.3);
  }

  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<float> noise = Tensor<float>::matrix(L, 64);
    for (auto& v : noise.storage()) v = float(normal_vector<double>(rng, 1)[0]);
    CHECK(std::abs(world().oracle_sync_score(audio, noise)) < 0.2);
  }
  CHECK_THROWS_AS(world().oracle_sync_score(audio, leading(clip.motion, 100)), std::invalid_argument);
}

TEST_CASE("the mean style sits between archetypes") {
  const SynthClip clip = world().generate_clip(0, 1, 64, 5);
  const Tensor<float> neutral = world().apply_mean_style(world().base_response(clip.audio));
  CHECK(world().mean_style_residual(neutral) == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  CHECK(world().mean_style_residual(clip.motion) > 0.01);
  const Tensor<float> base = world().base_from_mouth(clip.motion);
  const Tensor<float> truth = world().base_response(clip.audio);
  for (std::size_t r = 0; r < base.rows(); ++r) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(base(r, c) == doctest::Approx(truth(r, c)).epsilon(1e-3));
  }
}

TEST_CASE("identity parameters carry the speaker and leak the style") {
  const SynthClip a = world().dataset_clip(0, 0, 0);
  const SynthClip b = world().dataset_clip(0, 0, 1);
  const SynthClip c = world().dataset_clip(0, 5, 0);
  const SynthClip d = world().dataset_clip(1, 0, 0);
  auto dist = [](const std::vector<float>& x, const std::vector<float>& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  };
  CHECK(a.identity.size() == 16);
  CHECK(dist(a.identity, b.identity) < dist(a.identity, c.identity));
  CHECK(dist(a.identity, b.identity) < dist(a.identity, d.identity));
}

TEST_CASE("generation rejects out-of-range requests") {
  CHECK_THROWS_AS(world().generate_clip(0, 0, 7, 1), std::invalid_argument);
  CHECK_THROWS_AS(world().generate_clip(0, 0, 4097, 1), std::invalid_argument);
  CHECK_THROWS_AS(world().generate_clip(8, 0, 64, 1), std::invalid_argument);
  CHECK_THROWS_AS(world().generate_clip(0, 8, 64, 1), std::invalid_argument);
  WorldConfig bad;
  bad.clips_per_pair = 1;
  CHECK_THROWS_AS(SynthWorld{bad}, std::invalid_argument);
}
