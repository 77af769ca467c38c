#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stylediff {

/// Variance schedule tables indexed by step t in 1..T. Index 0 holds the
/// conventional alpha_bar_0 = 1 so DDIM can step all the way to the data.
class DiffusionSchedule {
 public:
  static DiffusionSchedule linear(std::size_t num_steps, double beta_start, double beta_end);
  /// Linear betas from 1e-4 to 0.02 at T = 1000, with both ends scaled by
  /// 1000 / T for shorter chains so the terminal alpha_bar stays near 4e-5.
  static DiffusionSchedule default_linear(std::size_t num_steps);

  std::size_t num_steps() const { return betas_.size() - 1; }
  double beta(std::size_t t) const { return betas_.at(t); }
  double alpha(std::size_t t) const { return alphas_.at(t); }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(t); }

  /// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
  template <typename T>
  std::vector<T> forward_diffuse(std::span<const T> x0, std::size_t t,
                                 std::span<const T> noise) const;

  /// Ancestral DDPM step from x_t given a clean-signal estimate. At t = 1 the
  /// posterior mean is returned and `noise` is ignored.
  template <typename T>
  std::vector<T> posterior_step(std::span<const T> x_t, std::span<const T> x0_hat, std::size_t t,
                                std::span<const T> noise) const;

  /// Posterior mean coefficients (on x0_hat, on x_t) and variance.
  double posterior_coef_x0(std::size_t t) const;
  double posterior_coef_xt(std::size_t t) const;
  double posterior_variance(std::size_t t) const;

  /// Deterministic DDIM update from t to t_prev < t.
  template <typename T>
  std::vector<T> ddim_step(std::span<const T> x_t, std::span<const T> x0_hat, std::size_t t,
                           std::size_t t_prev) const;

  /// Descending, evenly spaced steps from T to 1 (both included).
  std::vector<std::size_t> ddim_timesteps(std::size_t count) const;

 private:
  DiffusionSchedule() = default;
  void check_step(std::size_t t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

}  // namespace stylediff
