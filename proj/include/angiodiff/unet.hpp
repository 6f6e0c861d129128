// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include "json.hpp"
#include "angiodiff/nn_blocks.hpp"

namespace angiodiff {

struct UnetConfig {
  int latent_channels = 3;
  int latent_side = 64;
  int base_channels = 224;
  std::vector<int> channel_multipliers = {1, 2, 4, 4};
  int residual_blocks_per_level = 2;
  /// Feature-map sides (in latent pixels) that get a transformer block.
  std::vector<int> attention_resolutions = {8, 16, 32};
  int attention_head_channels = 32;
  /// Cross-attention context width; absent for an unconditional model.
  std::optional<int> context_dim = 512;

  void validate() const;
  int levels() const { return static_cast<int>(channel_multipliers.size()); }
};

void to_json(nlohmann::json& j, const UnetConfig& c);
void from_json(const nlohmann::json& j, UnetConfig& c);

/// One encoder/decoder stage: optional residual block, optional spatial
/// transformer, optional resampling.
struct UnetStageImpl : torch::nn::Module {
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& temb, const torch::Tensor& context,
                        const torch::Tensor& context_mask);

  nn::ResBlock res{nullptr};
  nn::SpatialTransformer attn{nullptr};
  nn::Downsample down{nullptr};
  nn::Upsample up{nullptr};
};
TORCH_MODULE(UnetStage);

/// Noise-prediction UNet with timestep embedding and optional
/// cross-attention conditioning.
struct UnetImpl : torch::nn::Module {
  explicit UnetImpl(UnetConfig config);

  /// x [B,C,S,S], t [B] integer timesteps, context [B,L,D] + mask [B,L]
  /// for conditional models.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& context = {},
                        const torch::Tensor& context_mask = {});

  UnetConfig config;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv2d conv_in{nullptr};
  torch::nn::ModuleList input_stages{nullptr};
  UnetStage middle{nullptr};
  nn::ResBlock middle_out{nullptr};
  torch::nn::ModuleList output_stages{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Unet);

}  // namespace angiodiff
