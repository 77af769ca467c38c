#pragma once

// On-disk synthetic datasets: a manifest of generator settings plus one
// SDMO file per clip tensor. Reloading rebuilds the same world, so the
// oracles and the face basis stay available to every stage.

#include <filesystem>
#include <vector>

#include "stylediff/config.hpp"
#include "stylediff/synth_world.hpp"

namespace stylediff {

inline constexpr int kGeneratorVersion = 1;

Config world_to_config(const WorldConfig& world);
/// Starts from `base` and overrides every "world.*" key present.
WorldConfig world_from_config(const Config& config, WorldConfig base = {});

/// Writes manifest.txt and clips/ under `dir`.
void write_dataset(const SynthWorld& world, const std::filesystem::path& dir);

struct LoadedDataset {
  WorldConfig world;
  std::vector<SynthClip> clips;
};

/// Throws std::runtime_error on a missing file or a generator version mismatch.
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace stylediff
