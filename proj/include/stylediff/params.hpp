#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stylediff/autograd.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

using TensorMap = std::map<std::string, Tensor<float>>;

/// Named parameters in sorted order. Entries live in a std::map, so the
/// references handed out by add() stay valid for the store's lifetime.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init, bool trainable = true);
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::map<std::string, Parameter<T>>& entries() { return entries_; }
  const std::map<std::string, Parameter<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  /// Values as 32-bit tensors, optionally restricted to names under `prefix`.
  TensorMap snapshot(const std::string& prefix = "") const;
  /// Overwrites every entry under `prefix` from `values`; names and shapes must match.
  void restore(const TensorMap& values, const std::string& prefix = "");

 private:
  std::map<std::string, Parameter<T>> entries_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over the trainable entries of a store.
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamConfig config);
  void step();
  std::size_t steps() const { return steps_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  ParameterStore<T>& store_;
  AdamConfig config_;
  std::map<std::string, Moments> moments_;
  std::size_t steps_ = 0;
};

/// Rescales trainable gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm);

/// FNV-1a over names, shapes and raw values; used to prove frozen weights stay put.
template <typename T>
std::uint64_t store_fingerprint(const ParameterStore<T>& store, const std::string& prefix = "");

}  // namespace stylediff
