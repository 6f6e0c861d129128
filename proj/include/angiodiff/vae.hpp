// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "angiodiff/dataset.hpp"
#include "angiodiff/nn_blocks.hpp"

namespace angiodiff {

enum class ReconLoss { L1, Perceptual };

struct VaeConfig {
  int image_side = 256;
  int latent_side = 64;
  int latent_channels = 3;
  int base_channels = 128;
  std::vector<int> channel_multipliers = {1, 2, 4};
  int residual_blocks_per_level = 2;
  double kl_weight = 1e-6;
  double learning_rate = 2e-5;
  int batch_size = 20;
  int max_epochs = 100;
  int early_stop_patience = 10;
  /// Optimizer step cap across all epochs; 0 means no cap.
  int max_steps = 0;
  double val_fraction = 0.1;
  ReconLoss recon_loss = ReconLoss::Perceptual;
  /// "filterbank" or "torchscript:<path>" to an LPIPS-style module.
  std::string perceptual_network = "filterbank";

  void validate() const;
  int downsamples() const { return static_cast<int>(channel_multipliers.size()) - 1; }
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

struct Posterior {
  torch::Tensor mean;
  torch::Tensor logvar;
};

/// Encoder output. `sample` equals `mean` in deterministic mode.
struct LatentCode {
  torch::Tensor sample;
  torch::Tensor mean;
  torch::Tensor logvar;
};

struct VaeEncoderImpl : torch::nn::Module {
  explicit VaeEncoderImpl(const VaeConfig& config);
  torch::Tensor forward(torch::Tensor x);

  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  nn::ResBlock mid{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(VaeEncoder);

struct VaeDecoderImpl : torch::nn::Module {
  explicit VaeDecoderImpl(const VaeConfig& config);
  torch::Tensor forward(torch::Tensor z);

  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  nn::ResBlock mid{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(VaeDecoder);

/// Convolutional VAE for single-channel frames in [0,1].
struct VaeImpl : torch::nn::Module {
  explicit VaeImpl(VaeConfig config);

  Posterior posterior(const torch::Tensor& images);
  /// With `generator` unset the sample is the posterior mean.
  LatentCode encode(const torch::Tensor& images, std::optional<torch::Generator> generator = std::nullopt);
  /// Reconstruction in image units (not clamped).
  torch::Tensor decode(const torch::Tensor& latent);

  VaeConfig config;
  VaeEncoder encoder{nullptr};
  VaeDecoder decoder{nullptr};
};
TORCH_MODULE(Vae);

/// Per-sample perceptual distance, shape [B].
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual torch::Tensor operator()(const torch::Tensor& x, const torch::Tensor& y) const = 0;
  virtual std::string name() const = 0;
};

/// Fixed multi-scale derivative filter bank (Sobel x/y, Laplacian at three
/// scales); needs no weights.
class FilterBankPerceptual final : public PerceptualDistance {
 public:
  torch::Tensor operator()(const torch::Tensor& x, const torch::Tensor& y) const override;
  std::string name() const override { return "filterbank"; }
};

/// Resolves a perceptual network spec. Returns nullptr (and sets `warning`)
/// when the network cannot be loaded, in which case callers use plain L1.
std::unique_ptr<PerceptualDistance> make_perceptual(const std::string& spec, std::string* warning = nullptr);

/// Closed-form KL(N(mean, exp(logvar)) || N(0, I)), summed per sample: [B].
torch::Tensor kl_divergence(const torch::Tensor& mean, const torch::Tensor& logvar);

struct VaeLoss {
  torch::Tensor total;
  torch::Tensor recon;
  torch::Tensor kl;
};

/// total = recon + kl_weight * KL, each term summed per sample and averaged
/// over the batch. The perceptual recon term is pixel L1 plus the perceptual
/// distance; with no perceptual network it reduces to L1.
VaeLoss vae_loss(const torch::Tensor& x, const torch::Tensor& reconstruction, const Posterior& posterior,
                 double kl_weight, ReconLoss kind = ReconLoss::L1, const PerceptualDistance* perceptual = nullptr);

/// Trained VAE plus the global latent scale used by the diffusion stage.
struct VaeModel {
  VaeConfig config;
  Vae net{nullptr};
  double latent_scale = 1.0;
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<double> train_epoch_loss;
  std::vector<double> val_epoch_loss;
  int best_epoch = -1;
  std::vector<std::string> warnings;
};

using LogFn = std::function<void(const std::string&)>;

/// Trains on all records of the manifest with a series-level validation
/// split; early stopping on validation total loss.
VaeTrainResult train_vae(const CorpusManifest& manifest, const VaeConfig& config, std::uint64_t seed,
                         const LogFn& log = {});

/// 1 / std of posterior means over `images` [N,1,S,S].
double compute_latent_scale(Vae& vae, const torch::Tensor& images, int batch_size = 32);

void save_vae(torch::serialize::OutputArchive& archive, const VaeModel& model);
VaeModel load_vae(torch::serialize::InputArchive& archive);
void save_vae(const std::filesystem::path& path, const VaeModel& model);
VaeModel load_vae(const std::filesystem::path& path);

}  // namespace angiodiff
