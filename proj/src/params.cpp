#include "stylediff/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>

namespace stylediff {

namespace {

bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> init, bool trainable) {
  if (name.empty()) throw std::invalid_argument("parameter store: empty name");
  auto [it, inserted] = entries_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("parameter store: duplicate name '" + name + "'");
  it->second.value = std::move(init);
  it->second.trainable = trainable;
  return it->second;
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("parameter store: no entry '" + name + "'");
  return it->second;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("parameter store: no entry '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [name, p] : entries_) p.zero_grad();
}

template <typename T>
TensorMap ParameterStore<T>::snapshot(const std::string& prefix) const {
  TensorMap out;
  for (const auto& [name, p] : entries_) {
    if (has_prefix(name, prefix)) out.emplace(name, p.value.template cast<float>());
  }
  return out;
}

template <typename T>
void ParameterStore<T>::restore(const TensorMap& values, const std::string& prefix) {
  for (auto& [name, p] : entries_) {
    if (!has_prefix(name, prefix)) continue;
    auto it = values.find(name);
    if (it == values.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape_string(it->second.shape()) + ", expected " +
                               shape_string(p.value.shape()));
    }
    p.value = it->second.template cast<T>();
  }
}

template <typename T>
Adam<T>::Adam(ParameterStore<T>& store, AdamConfig config) : store_(store), config_(config) {
  for (auto& [name, p] : store_.entries()) {
    if (!p.trainable) continue;
    moments_[name] = {std::vector<double>(p.value.size(), 0.0),
                      std::vector<double>(p.value.size(), 0.0)};
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, double(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(steps_));
  for (auto& [name, mom] : moments_) {
    Parameter<T>& p = store_.at(name);
    if (p.grad.size() != p.value.size()) {
      throw std::logic_error("adam: parameter '" + name + "' has no gradient");
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = double(p.grad[i]);
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g;
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g * g;
      const double mh = mom.m[i] / c1;
      const double vh = mom.v[i] / c2;
      p.value[i] = static_cast<T>(double(p.value[i]) - config_.lr * mh / (std::sqrt(vh) + config_.eps));
    }
  }
}

template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    for (T g : p.grad.values()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : store.entries()) {
      if (!p.trainable) continue;
      for (T& g : p.grad.values()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
std::uint64_t store_fingerprint(const ParameterStore<T>& store, const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, p] : store.entries()) {
    if (!has_prefix(name, prefix)) continue;
    mix(name.data(), name.size());
    for (std::size_t d : p.value.shape()) mix(&d, sizeof d);
    mix(p.value.data(), p.value.size() * sizeof(T));
  }
  return h;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(ParameterStore<float>&, double);
template double clip_grad_norm(ParameterStore<double>&, double);
template std::uint64_t store_fingerprint(const ParameterStore<float>&, const std::string&);
template std::uint64_t store_fingerprint(const ParameterStore<double>&, const std::string&);

}  // namespace stylediff
