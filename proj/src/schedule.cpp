// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/schedule.hpp"

#include <cmath>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) throw ValidationError("noise schedule needs at least one step");
  alpha_.reserve(beta_.size());
  alpha_bar_.reserve(beta_.size());
  double running = 1.0;
  for (double b : beta_) {
    if (!(b > 0.0 && b < 1.0)) throw ValidationError(fmt::format("beta {} outside (0, 1)", b));
    alpha_.push_back(1.0 - b);
    running *= 1.0 - b;
    alpha_bar_.push_back(running);
  }
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) throw ValidationError(fmt::format("timestep {} outside [1, {}]", t, steps()));
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::sigma(int t, ReverseVariance kind) const {
  const auto i = index(t);
  if (t == 1) return 0.0;
  if (kind == ReverseVariance::Beta) return std::sqrt(beta_[i]);
  return std::sqrt((1.0 - alpha_bar_[i - 1]) / (1.0 - alpha_bar_[i]) * beta_[i]);
}

torch::Tensor NoiseSchedule::alpha_bar_at(const torch::Tensor& t) const {
  auto table = torch::tensor(alpha_bar_, torch::kFloat64);
  auto idx = t.to(torch::kLong) - 1;
  if (idx.numel() > 0 && (idx.min().item<std::int64_t>() < 0 || idx.max().item<std::int64_t>() >= steps())) {
    throw ValidationError("timestep outside schedule range");
  }
  return table.index_select(0, idx);
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError(fmt::format("need 0 < beta_start <= beta_end < 1, got {} and {}", beta_start, beta_end));
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
  }
  return NoiseSchedule(std::move(betas));
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ValidationError(fmt::format("{}: shape mismatch", what));
  }
}

}  // namespace

torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
  require_same_shape(z0, eps, "forward_diffuse");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
  require_same_shape(z0, eps, "forward_diffuse");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw ValidationError("forward_diffuse: one timestep per sample");
  std::vector<std::int64_t> bshape(static_cast<std::size_t>(z0.dim()), 1);
  bshape[0] = z0.size(0);
  auto ab = schedule.alpha_bar_at(t).to(z0.dtype()).view(bshape);
  return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor reverse_step(const torch::Tensor& z_t, int t, const torch::Tensor& eps_pred,
                           const NoiseSchedule& schedule, const torch::Tensor& eta, ReverseVariance variance) {
  require_same_shape(z_t, eps_pred, "reverse_step");
  const double a = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  auto mean = (z_t - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_pred) / std::sqrt(a);
  const double sigma = schedule.sigma(t, variance);
  if (eta.defined() && sigma > 0.0) {
    require_same_shape(z_t, eta, "reverse_step");
    return mean + sigma * eta;
  }
  return mean;
}

torch::Tensor predict_z0(const torch::Tensor& z_t, int t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(z_t, eps, "predict_z0");
  const double ab = schedule.alpha_bar(t);
  return (z_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

torch::Tensor posterior_mean(const torch::Tensor& z0, const torch::Tensor& z_t, int t,
                             const NoiseSchedule& schedule) {
  require_same_shape(z0, z_t, "posterior_mean");
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar_prev(t);
  const double b = schedule.beta(t);
  const double a = schedule.alpha(t);
  const double c0 = std::sqrt(ab_prev) * b / (1.0 - ab);
  const double ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
  return c0 * z0 + ct * z_t;
}

}  // namespace angiodiff
