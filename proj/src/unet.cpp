// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/unet.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

namespace F = torch::nn::functional;

void UnetConfig::validate() const {
  if (latent_channels < 1) throw ValidationError("unet latent_channels must be >= 1");
  if (base_channels < 1) throw ValidationError("unet base_channels must be >= 1");
  if (channel_multipliers.empty()) throw ValidationError("unet needs at least one level");
  if (residual_blocks_per_level < 1) throw ValidationError("unet residual_blocks_per_level must be >= 1");
  if (attention_head_channels < 1) throw ValidationError("unet attention_head_channels must be >= 1");
  if (context_dim && *context_dim < 1) throw ValidationError("unet context_dim must be positive");
  const int downsamples = levels() - 1;
  if (latent_side < 1 || latent_side % (1 << downsamples) != 0) {
    throw ValidationError(fmt::format("latent_side {} not divisible by 2^{}", latent_side, downsamples));
  }
  for (int r : attention_resolutions) {
    if (r < 1 || (r & (r - 1)) != 0 || latent_side % r != 0) {
      throw ValidationError(fmt::format("attention resolution {} must be a power of two dividing {}", r, latent_side));
    }
  }
}

void to_json(nlohmann::json& j, const UnetConfig& c) {
  j = nlohmann::json{{"latent_channels", c.latent_channels},
                     {"latent_side", c.latent_side},
                     {"base_channels", c.base_channels},
                     {"channel_multipliers", c.channel_multipliers},
                     {"residual_blocks_per_level", c.residual_blocks_per_level},
                     {"attention_resolutions", c.attention_resolutions},
                     {"attention_head_channels", c.attention_head_channels},
                     {"context_dim", c.context_dim ? nlohmann::json(*c.context_dim) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, UnetConfig& c) {
  c.latent_channels = j.at("latent_channels").get<int>();
  c.latent_side = j.at("latent_side").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.residual_blocks_per_level = j.at("residual_blocks_per_level").get<int>();
  c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
  c.attention_head_channels = j.at("attention_head_channels").get<int>();
  const auto& ctx = j.at("context_dim");
  c.context_dim = ctx.is_null() ? std::nullopt : std::optional<int>(ctx.get<int>());
}

torch::Tensor UnetStageImpl::forward(torch::Tensor x, const torch::Tensor& temb, const torch::Tensor& context,
                                     const torch::Tensor& context_mask) {
  if (res) x = res(x, temb);
  if (attn) x = attn(x, context, context_mask);
  if (down) x = down(x);
  if (up) x = up(x);
  return x;
}

UnetImpl::UnetImpl(UnetConfig cfg) : config(std::move(cfg)) {
  config.validate();
  const int base = config.base_channels;
  const int temb_dim = 4 * base;
  const int ctx = config.context_dim.value_or(0);
  const auto wants_attention = [&](int side) {
    return std::find(config.attention_resolutions.begin(), config.attention_resolutions.end(), side) !=
           config.attention_resolutions.end();
  };

  time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(base, temb_dim), torch::nn::SiLU(),
                                                               torch::nn::Linear(temb_dim, temb_dim)));
  conv_in = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.latent_channels, base, 3).padding(1)));

  input_stages = register_module("input_stages", torch::nn::ModuleList());
  output_stages = register_module("output_stages", torch::nn::ModuleList());

  std::vector<int> skip_channels{base};
  int ch = base;
  int side = config.latent_side;
  for (int level = 0; level < config.levels(); ++level) {
    const int out_ch = base * config.channel_multipliers[level];
    for (int i = 0; i < config.residual_blocks_per_level; ++i) {
      UnetStage stage;
      stage->res = stage->register_module("res", nn::ResBlock(ch, out_ch, temb_dim));
      if (wants_attention(side)) {
        stage->attn = stage->register_module("attn", nn::SpatialTransformer(out_ch, config.attention_head_channels, ctx));
      }
      input_stages->push_back(stage);
      ch = out_ch;
      skip_channels.push_back(ch);
    }
    if (level + 1 < config.levels()) {
      UnetStage stage;
      stage->down = stage->register_module("down", nn::Downsample(ch));
      input_stages->push_back(stage);
      skip_channels.push_back(ch);
      side /= 2;
    }
  }

  middle = register_module("middle", UnetStage());
  middle->res = middle->register_module("res", nn::ResBlock(ch, ch, temb_dim));
  middle->attn = middle->register_module("attn", nn::SpatialTransformer(ch, config.attention_head_channels, ctx));
  middle_out = register_module("middle_out", nn::ResBlock(ch, ch, temb_dim));

  for (int level = config.levels() - 1; level >= 0; --level) {
    const int out_ch = base * config.channel_multipliers[level];
    for (int i = 0; i <= config.residual_blocks_per_level; ++i) {
      const int skip = skip_channels.back();
      skip_channels.pop_back();
      UnetStage stage;
      stage->res = stage->register_module("res", nn::ResBlock(ch + skip, out_ch, temb_dim));
      ch = out_ch;
      if (wants_attention(side)) {
        stage->attn = stage->register_module("attn", nn::SpatialTransformer(ch, config.attention_head_channels, ctx));
      }
      if (level > 0 && i == config.residual_blocks_per_level) {
        stage->up = stage->register_module("up", nn::Upsample(ch));
        side *= 2;
      }
      output_stages->push_back(stage);
    }
  }

  norm_out = register_module("norm_out", nn::make_group_norm(ch));
  conv_out = register_module(
      "conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, config.latent_channels, 3).padding(1)));
  torch::NoGradGuard no_grad;
  conv_out->weight.zero_();
  conv_out->bias.zero_();
}

torch::Tensor UnetImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& context,
                                const torch::Tensor& context_mask) {
  if (config.context_dim.has_value() != context.defined()) {
    throw ValidationError(config.context_dim ? "conditional UNet requires a context"
                                             : "unconditional UNet does not accept a context");
  }
  if (context.defined() && context.size(-1) != *config.context_dim) {
    throw ValidationError(
        fmt::format("context dim {} does not match UNet context_dim {}", context.size(-1), *config.context_dim));
  }
  auto temb = time_mlp->forward(nn::timestep_embedding(t, config.base_channels).to(x.dtype()));
  std::vector<torch::Tensor> skips;
  auto h = conv_in(x);
  skips.push_back(h);
  for (const auto& m : *input_stages) {
    h = m->as<UnetStageImpl>()->forward(h, temb, context, context_mask);
    skips.push_back(h);
  }
  h = middle(h, temb, context, context_mask);
  h = middle_out(h, temb);
  for (const auto& m : *output_stages) {
    h = torch::cat({h, skips.back()}, 1);
    skips.pop_back();
    h = m->as<UnetStageImpl>()->forward(h, temb, context, context_mask);
  }
  return conv_out(F::silu(norm_out(h)));
}

}  // namespace angiodiff
