#include "stylediff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace stylediff {

namespace {

template <typename T>
void check_sizes(std::span<const T> a, std::span<const T> b, const char* op) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

}  // namespace

DiffusionSchedule DiffusionSchedule::linear(std::size_t num_steps, double beta_start,
                                            double beta_end) {
  if (num_steps == 0) throw std::invalid_argument("schedule: step count must be positive");
  if (!(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0)) {
    throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.betas_.assign(num_steps + 1, 0.0);
  s.alphas_.assign(num_steps + 1, 1.0);
  s.alpha_bars_.assign(num_steps + 1, 1.0);
  for (std::size_t t = 1; t <= num_steps; ++t) {
    const double frac = num_steps == 1 ? 0.0 : double(t - 1) / double(num_steps - 1);
    s.betas_[t] = beta_start + (beta_end - beta_start) * frac;
    s.alphas_[t] = 1.0 - s.betas_[t];
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * s.alphas_[t];
  }
  return s;
}

DiffusionSchedule DiffusionSchedule::default_linear(std::size_t num_steps) {
  if (num_steps == 0) throw std::invalid_argument("schedule: step count must be positive");
  const double scale = 1000.0 / double(num_steps);
  return linear(num_steps, 1e-4 * scale, std::min(0.02 * scale, 0.999));
}

void DiffusionSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > num_steps()) {
    throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(num_steps()) + "]");
  }
}

template <typename T>
std::vector<T> DiffusionSchedule::forward_diffuse(std::span<const T> x0, std::size_t t,
                                                  std::span<const T> noise) const {
  check_step(t);
  check_sizes(x0, noise, "forward_diffuse");
  const double a = std::sqrt(alpha_bars_[t]);
  const double b = std::sqrt(1.0 - alpha_bars_[t]);
  std::vector<T> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(a * double(x0[i]) + b * double(noise[i]));
  }
  return out;
}

double DiffusionSchedule::posterior_coef_x0(std::size_t t) const {
  check_step(t);
  return std::sqrt(alpha_bars_[t - 1]) * betas_[t] / (1.0 - alpha_bars_[t]);
}

double DiffusionSchedule::posterior_coef_xt(std::size_t t) const {
  check_step(t);
  return std::sqrt(alphas_[t]) * (1.0 - alpha_bars_[t - 1]) / (1.0 - alpha_bars_[t]);
}

double DiffusionSchedule::posterior_variance(std::size_t t) const {
  check_step(t);
  return (1.0 - alpha_bars_[t - 1]) / (1.0 - alpha_bars_[t]) * betas_[t];
}

template <typename T>
std::vector<T> DiffusionSchedule::posterior_step(std::span<const T> x_t, std::span<const T> x0_hat,
                                                 std::size_t t, std::span<const T> noise) const {
  check_sizes(x_t, x0_hat, "posterior_step");
  const double c0 = posterior_coef_x0(t);
  const double ct = posterior_coef_xt(t);
  const bool inject = t > 1;
  if (inject) check_sizes(x_t, noise, "posterior_step");
  const double sigma = inject ? std::sqrt(posterior_variance(t)) : 0.0;
  std::vector<T> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = c0 * double(x0_hat[i]) + ct * double(x_t[i]);
    if (inject) v += sigma * double(noise[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

template <typename T>
std::vector<T> DiffusionSchedule::ddim_step(std::span<const T> x_t, std::span<const T> x0_hat,
                                            std::size_t t, std::size_t t_prev) const {
  check_step(t);
  if (t_prev >= t) {
    throw std::invalid_argument("ddim_step: t_prev " + std::to_string(t_prev) +
                                " must be below t " + std::to_string(t));
  }
  check_sizes(x_t, x0_hat, "ddim_step");
  if (t_prev == 0) return std::vector<T>(x0_hat.begin(), x0_hat.end());
  const double sa = std::sqrt(alpha_bars_[t]);
  const double sb = std::sqrt(1.0 - alpha_bars_[t]);
  const double pa = std::sqrt(alpha_bars_[t_prev]);
  const double pb = std::sqrt(1.0 - alpha_bars_[t_prev]);
  std::vector<T> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = (double(x_t[i]) - sa * double(x0_hat[i])) / sb;
    out[i] = static_cast<T>(pa * double(x0_hat[i]) + pb * eps);
  }
  return out;
}

std::vector<std::size_t> DiffusionSchedule::ddim_timesteps(std::size_t count) const {
  const std::size_t total = num_steps();
  if (count == 0 || count > total) {
    throw std::invalid_argument("ddim: step count " + std::to_string(count) + " outside [1, " +
                                std::to_string(total) + "]");
  }
  std::vector<std::size_t> steps(count);
  if (count == 1) {
    steps[0] = total;
    return steps;
  }
  for (std::size_t i = 0; i < count; ++i) {
    // Round half up on the exact rational position so the ends land on T and 1.
    const std::size_t num = (total - 1) * (count - 1 - i);
    steps[i] = 1 + (2 * num + (count - 1)) / (2 * (count - 1));
  }
  return steps;
}

#define STYLEDIFF_INSTANTIATE_SCHEDULE(T)                                                      \
  template std::vector<T> DiffusionSchedule::forward_diffuse(std::span<const T>, std::size_t,  \
                                                             std::span<const T>) const;        \
  template std::vector<T> DiffusionSchedule::posterior_step(                                   \
      std::span<const T>, std::span<const T>, std::size_t, std::span<const T>) const;          \
  template std::vector<T> DiffusionSchedule::ddim_step(std::span<const T>, std::span<const T>, \
                                                       std::size_t, std::size_t) const;

STYLEDIFF_INSTANTIATE_SCHEDULE(float)
STYLEDIFF_INSTANTIATE_SCHEDULE(double)

}  // namespace stylediff
