// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "angiodiff/dataset.hpp"
#include "angiodiff/schedule.hpp"
#include "angiodiff/text_encoder.hpp"
#include "angiodiff/unet.hpp"
#include "angiodiff/vae.hpp"

namespace angiodiff {

/// Noise predictor eps_theta(z_t, t[, c]).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// `t` holds integer timesteps [B]; `context` is null for unconditional
  /// models and must be null for them.
  virtual torch::Tensor predict_eps(const torch::Tensor& z_t, const torch::Tensor& t,
                                    const TextContext* context) = 0;
  virtual std::optional<int> context_dim() const = 0;
};

/// Small MLP noise predictor for low-dimensional data.
struct ToyMlpImpl : torch::nn::Module {
  ToyMlpImpl(int data_dim, int hidden, int layers, int time_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

  int time_dim;
  torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(ToyMlp);

class ToyMlpDenoiser final : public Denoiser {
 public:
  explicit ToyMlpDenoiser(ToyMlp net) : net_(std::move(net)) {}
  torch::Tensor predict_eps(const torch::Tensor& z_t, const torch::Tensor& t, const TextContext* context) override;
  std::optional<int> context_dim() const override { return std::nullopt; }
  ToyMlp& net() { return net_; }

 private:
  ToyMlp net_;
};

/// UNet noise predictor, optionally fed by a text encoder's token context.
class UnetDenoiser final : public Denoiser {
 public:
  explicit UnetDenoiser(Unet unet) : unet_(std::move(unet)) {}
  torch::Tensor predict_eps(const torch::Tensor& z_t, const torch::Tensor& t, const TextContext* context) override;
  std::optional<int> context_dim() const override { return unet_->config.context_dim; }

 private:
  Unet unet_;
};

/// Mean squared error between eps and eps_theta(forward_diffuse(z0, t, eps), t)
/// over batch and elements, at the given timesteps and noise.
torch::Tensor ddpm_loss_at(Denoiser& denoiser, const torch::Tensor& z0, const torch::Tensor& t,
                           const torch::Tensor& eps, const NoiseSchedule& schedule,
                           const TextContext* context = nullptr);

/// As ddpm_loss_at with t ~ U{1..T} and fresh eps ~ N(0, I) per sample.
torch::Tensor ddpm_loss(Denoiser& denoiser, const torch::Tensor& z0, const NoiseSchedule& schedule,
                        torch::Generator& generator, const TextContext* context = nullptr);

struct SamplerOptions {
  ReverseVariance variance = ReverseVariance::Beta;
  /// Rows evaluated per denoiser call.
  int batch_size = 64;
};

/// Ancestral DDPM sampling. Sample i draws z_T and every step's noise from its
/// own generator seeded with `seeds[i]`, so a single sample can be
/// regenerated in isolation. `sample_shape` excludes the batch dimension.
torch::Tensor sample_with_seeds(Denoiser& denoiser, const NoiseSchedule& schedule,
                                const std::vector<std::int64_t>& sample_shape,
                                const std::vector<std::uint64_t>& seeds, const TextContext* context = nullptr,
                                const SamplerOptions& options = {});

/// n samples with per-sample seeds derive_seed(seed, i).
torch::Tensor sample(Denoiser& denoiser, const NoiseSchedule& schedule, int n,
                     const std::vector<std::int64_t>& sample_shape, std::uint64_t seed,
                     const TextContext* context = nullptr, const SamplerOptions& options = {});

struct LdmConfig {
  UnetConfig unet;
  /// Present for a conditional model; must match unet.context_dim.
  std::optional<TextEncoderConfig> text_encoder = TextEncoderConfig{};
  int timesteps = 1000;
  double beta_start = 0.0015;
  double beta_end = 0.0195;
  ReverseVariance variance = ReverseVariance::Beta;
  double learning_rate = 5e-5;
  int batch_size = 96;
  int max_epochs = 50;
  /// Optimizer step cap across all epochs; 0 means no cap.
  int max_steps = 0;
  /// The text encoder is optimized together with the denoiser; false is a
  /// configuration error for a conditional model.
  bool train_text_encoder = true;
  double grad_clip = 1.0;

  bool conditional() const { return text_encoder.has_value(); }
  void validate() const;
  NoiseSchedule schedule() const { return build_schedule(timesteps, beta_start, beta_end); }
};

void to_json(nlohmann::json& j, const LdmConfig& c);
void from_json(const nlohmann::json& j, LdmConfig& c);

/// Trained latent diffusion model: VAE, denoiser and (conditional) text
/// encoder in one checkpoint.
struct LatentDiffusionModel {
  LatentDiffusionModel(LdmConfig config, VaeModel vae);

  LdmConfig config;
  VaeModel vae;
  Unet unet{nullptr};
  TextEncoder text_encoder{nullptr};
  NoiseSchedule schedule;

  bool conditional() const { return config.conditional(); }
  std::vector<std::int64_t> latent_shape() const;
  /// Scaled latents of [N,1,S,S] frames (posterior means).
  torch::Tensor encode_latents(const torch::Tensor& images, int batch_size = 32);
  /// Images in [0,1], clamped, from scaled latents.
  torch::Tensor decode_latents(const torch::Tensor& latents, int batch_size = 32);
  /// Samples one image per seed. For conditional models `prompts` holds one
  /// prompt per seed; for unconditional ones it must be empty.
  torch::Tensor generate(const std::vector<std::string>& prompts, const std::vector<std::uint64_t>& seeds,
                         const SamplerOptions& options = {});
  void eval();
};

struct JointStepResult {
  double loss = 0.0;
  double denoiser_grad_norm = 0.0;
  double text_encoder_grad_norm = 0.0;
};

/// One optimizer step of L_cond (or L_DDPM when unconditional): a single loss
/// backpropagated through denoiser and text encoder alike.
JointStepResult joint_training_step(LatentDiffusionModel& model, torch::optim::Optimizer& optimizer,
                                    const torch::Tensor& z0, const std::vector<std::string>& prompts,
                                    torch::Generator& generator);

/// Optimizer over the UNet and (conditional) text encoder parameters.
std::unique_ptr<torch::optim::Optimizer> make_ldm_optimizer(LatentDiffusionModel& model);

struct LdmTrainResult {
  std::unique_ptr<LatentDiffusionModel> model;
  std::vector<double> epoch_loss;
  int steps = 0;
};

using LdmLog = std::function<void(const std::string&)>;

/// Trains on the manifest's ARTERIAL frames. Conditional models use each
/// frame's own metadata prompt and therefore need AC/PC circulation labels.
LdmTrainResult train_ldm(const CorpusManifest& manifest, const VaeModel& vae, const LdmConfig& config,
                         std::uint64_t seed, const LdmLog& log = {});

void save_ldm(const std::filesystem::path& path, const LatentDiffusionModel& model);
std::unique_ptr<LatentDiffusionModel> load_ldm(const std::filesystem::path& path);

}  // namespace angiodiff
