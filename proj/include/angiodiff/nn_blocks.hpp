// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

namespace angiodiff::nn {

/// Largest group count <= 32 that divides `channels` with >= 2 channels per
/// group (falls back to 1).
int norm_groups(int channels);

torch::nn::GroupNorm make_group_norm(int channels);

/// Sinusoidal embedding of (possibly fractional) timesteps, shape [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim, double max_period = 10000.0);

/// Softmax attention weights for q [B,H,Lq,d], k [B,H,Lk,d]. Keys where
/// `key_mask` [B,Lk] is false receive exactly zero weight.
torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& key_mask);

/// GroupNorm -> SiLU -> conv, twice, with an optional additive timestep
/// projection and a 1x1 skip when the channel count changes.
struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int in_channels, int out_channels, int temb_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear temb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

struct DownsampleImpl : torch::nn::Module {
  explicit DownsampleImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Downsample);

struct UpsampleImpl : torch::nn::Module {
  explicit UpsampleImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Upsample);

/// Multi-head attention. With `context_dim == 0` keys/values come from the
/// query sequence itself.
struct MultiHeadAttentionImpl : torch::nn::Module {
  MultiHeadAttentionImpl(int query_dim, int context_dim, int heads, int head_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context = {},
                        const torch::Tensor& key_mask = {});

  int heads;
  int head_dim;
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

/// Pre-norm transformer block: self-attention, optional cross-attention,
/// feed-forward.
struct TransformerBlockImpl : torch::nn::Module {
  TransformerBlockImpl(int dim, int heads, int head_dim, int context_dim);
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& context = {}, const torch::Tensor& context_mask = {},
                        const torch::Tensor& self_mask = {});

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  MultiHeadAttention self_attn{nullptr}, cross_attn{nullptr};
  torch::nn::Sequential ff{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Feature-map wrapper around one TransformerBlock.
struct SpatialTransformerImpl : torch::nn::Module {
  SpatialTransformerImpl(int channels, int head_channels, int context_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context = {},
                        const torch::Tensor& context_mask = {});

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d proj_in{nullptr}, proj_out{nullptr};
  TransformerBlock block{nullptr};
};
TORCH_MODULE(SpatialTransformer);

/// Global L2 norm of the gradients of `params` (0 when none are set).
double gradient_norm(const std::vector<torch::Tensor>& params);

}  // namespace angiodiff::nn
