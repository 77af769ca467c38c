#include "stylediff/dataset_io.hpp"

#include <fstream>
#include <stdexcept>

#include "stylediff/io.hpp"

namespace stylediff {

namespace {

namespace fs = std::filesystem;

std::string clip_stem(std::size_t speaker, std::size_t style, std::size_t index) {
  return "s" + std::to_string(speaker) + "_y" + std::to_string(style) + "_c" + std::to_string(index);
}

}  // namespace

Config world_to_config(const WorldConfig& w) {
  Config c;
  auto u = [&](const char* key, std::uint64_t v) { c.set(key, std::to_string(v)); };
  auto r = [&](const char* key, double v) { c.set(key, format_real(v)); };
  u("world.seed", w.seed);
  u("world.speakers", w.speakers);
  u("world.train_speakers", w.train_speakers);
  u("world.styles", w.styles);
  u("world.clips_per_pair", w.clips_per_pair);
  u("world.feature_dim", w.feature_dim);
  u("world.phonetic_dim", w.phonetic_dim);
  u("world.motion_dim", w.motion_dim);
  u("world.mouth_dims", w.mouth_dims);
  u("world.identity_dim", w.identity_dim);
  u("world.half_window", w.half_window);
  u("world.min_length", w.min_length);
  u("world.max_length", w.max_length);
  r("world.audio_rho", w.audio_rho);
  r("world.cue_noise", w.cue_noise);
  r("world.speaker_bias", w.speaker_bias);
  r("world.identity_leak", w.identity_leak);
  r("world.identity_noise", w.identity_noise);
  r("world.latent_scale", w.latent_scale);
  r("world.mix_scale", w.mix_scale);
  r("world.offset_scale", w.offset_scale);
  return c;
}

WorldConfig world_from_config(const Config& c, WorldConfig w) {
  auto u = [&](const char* key, std::size_t& v) { v = c.get_uint(key, v); };
  auto r = [&](const char* key, double& v) { v = c.get_double(key, v); };
  w.seed = c.get_uint("world.seed", w.seed);
  u("world.speakers", w.speakers);
  u("world.train_speakers", w.train_speakers);
  u("world.styles", w.styles);
  u("world.clips_per_pair", w.clips_per_pair);
  u("world.feature_dim", w.feature_dim);
  u("world.phonetic_dim", w.phonetic_dim);
  u("world.motion_dim", w.motion_dim);
  u("world.mouth_dims", w.mouth_dims);
  u("world.identity_dim", w.identity_dim);
  u("world.half_window", w.half_window);
  u("world.min_length", w.min_length);
  u("world.max_length", w.max_length);
  r("world.audio_rho", w.audio_rho);
  r("world.cue_noise", w.cue_noise);
  r("world.speaker_bias", w.speaker_bias);
  r("world.identity_leak", w.identity_leak);
  r("world.identity_noise", w.identity_noise);
  r("world.latent_scale", w.latent_scale);
  r("world.mix_scale", w.mix_scale);
  r("world.offset_scale", w.offset_scale);
  return w;
}

void write_dataset(const SynthWorld& world, const fs::path& dir) {
  fs::create_directories(dir / "clips");
  const auto clips = world.generate_dataset();
  Config manifest = world_to_config(world.config());
  manifest.set("generator_version", std::to_string(kGeneratorVersion));
  manifest.set("clips", std::to_string(clips.size()));
  for (const auto& clip : clips) {
    const fs::path stem = dir / "clips" / clip_stem(clip.speaker, clip.style, clip.index);
    write_matrix(stem.string() + ".audio.sdmo", clip.audio);
    write_matrix(stem.string() + ".motion.sdmo", clip.motion);
    write_matrix(stem.string() + ".identity.sdmo", Tensor<float>({1, clip.identity.size()}, clip.identity));
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << "# synthetic talking-face dataset\n" << manifest.to_text();
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
}

LoadedDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  if (!fs::exists(manifest_path)) throw std::runtime_error("no dataset manifest at " + manifest_path.string());
  const Config manifest = Config::load(manifest_path);
  const auto version = manifest.get_int("generator_version", -1);
  if (version != kGeneratorVersion) {
    throw std::runtime_error("dataset generator version " + std::to_string(version) + " is not supported");
  }
  LoadedDataset data;
  data.world = world_from_config(manifest);
  const WorldConfig& w = data.world;
  for (std::size_t k = 0; k < w.speakers; ++k) {
    for (std::size_t s = 0; s < w.styles; ++s) {
      for (std::size_t i = 0; i < w.clips_per_pair; ++i) {
        const std::string stem = (dir / "clips" / clip_stem(k, s, i)).string();
        SynthClip clip;
        clip.speaker = k;
        clip.style = s;
        clip.index = i;
        clip.audio = read_matrix(stem + ".audio.sdmo");
        clip.motion = read_matrix(stem + ".motion.sdmo");
        const Tensor<float> id = read_matrix(stem + ".identity.sdmo");
        clip.identity.assign(id.data(), id.data() + id.size());
        if (clip.audio.rows() != clip.motion.rows()) {
          throw std::runtime_error("clip " + stem + ": audio and motion lengths differ");
        }
        data.clips.push_back(std::move(clip));
      }
    }
  }
  return data;
}

}  // namespace stylediff
