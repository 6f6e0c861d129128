// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <vector>

namespace angiodiff {

/// Variance of the noise injected by a reverse step.
enum class ReverseVariance {
  Beta,       // sigma_t^2 = beta_t
  Posterior,  // sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
};

/// beta/alpha/alpha-bar tables. Timesteps are 1-based: t in [1, T].
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
  /// abar_0 = 1 by convention.
  double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar(t - 1); }
  /// Noise scale of the reverse step leaving t; zero at t = 1.
  double sigma(int t, ReverseVariance kind = ReverseVariance::Beta) const;

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  /// alpha-bar gathered at integer timesteps, shape [B].
  torch::Tensor alpha_bar_at(const torch::Tensor& t) const;

 private:
  std::size_t index(int t) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

/// Linear beta schedule from `beta_start` (t = 1) to `beta_end` (t = T).
NoiseSchedule build_schedule(int steps, double beta_start, double beta_end);

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);
/// Batched form with one timestep per leading-dimension entry.
torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);

/// One ancestral step z_t -> z_{t-1}. `eta` may be undefined, which is the
/// same as zero noise. The t = 1 step never injects noise.
torch::Tensor reverse_step(const torch::Tensor& z_t, int t, const torch::Tensor& eps_pred,
                           const NoiseSchedule& schedule, const torch::Tensor& eta = {},
                           ReverseVariance variance = ReverseVariance::Beta);

/// Clean-latent estimate implied by a noise prediction.
torch::Tensor predict_z0(const torch::Tensor& z_t, int t, const torch::Tensor& eps, const NoiseSchedule& schedule);

/// Mean of the true posterior q(z_{t-1} | z_t, z0).
torch::Tensor posterior_mean(const torch::Tensor& z0, const torch::Tensor& z_t, int t,
                             const NoiseSchedule& schedule);

}  // namespace angiodiff
