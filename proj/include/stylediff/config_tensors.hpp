#pragma once

// Architecture settings travel inside checkpoints as one-element tensors under
// "config/", so a checkpoint alone is enough to rebuild its network.

#include <cstddef>
#include <stdexcept>
#include <string>

#include "stylediff/params.hpp"

namespace stylediff {

inline void put_setting(TensorMap& out, const std::string& key, double value) {
  out["config/" + key] = Tensor<float>({1}, std::vector<float>{static_cast<float>(value)});
}

inline double get_setting(const TensorMap& in, const std::string& key) {
  auto it = in.find("config/" + key);
  if (it == in.end() || it->second.size() != 1) {
    throw std::runtime_error("checkpoint has no setting '" + key + "'");
  }
  return it->second[0];
}

inline std::size_t get_size_setting(const TensorMap& in, const std::string& key) {
  const double v = get_setting(in, key);
  if (v < 0) throw std::runtime_error("checkpoint setting '" + key + "' is negative");
  return static_cast<std::size_t>(v);
}

}  // namespace stylediff
