// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>

#include "angiodiff/diffusion.hpp"
#include "angiodiff/vae.hpp"

namespace angiodiff::test {

inline VaeConfig tiny_vae_config() {
  VaeConfig c;
  c.image_side = 16;
  c.latent_side = 8;
  c.latent_channels = 2;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.residual_blocks_per_level = 1;
  return c;
}

inline LdmConfig tiny_ldm_config(bool conditional) {
  LdmConfig c;
  c.unet.latent_channels = 2;
  c.unet.latent_side = 8;
  c.unet.base_channels = 8;
  c.unet.channel_multipliers = {1, 2};
  c.unet.residual_blocks_per_level = 1;
  c.unet.attention_resolutions = {4};
  c.unet.attention_head_channels = 8;
  c.timesteps = 10;
  c.beta_start = 0.05;
  c.beta_end = 0.5;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  if (conditional) {
    c.unet.context_dim = 16;
    c.text_encoder = TextEncoderConfig{1, 16, 8, 64};
  } else {
    c.unet.context_dim.reset();
    c.text_encoder.reset();
  }
  return c;
}

inline std::unique_ptr<LatentDiffusionModel> tiny_ldm(bool conditional, std::uint64_t seed = 0) {
  torch::manual_seed(seed);
  VaeModel vae{tiny_vae_config(), Vae(tiny_vae_config()), 1.0};
  vae.net->eval();
  return std::make_unique<LatentDiffusionModel>(tiny_ldm_config(conditional), std::move(vae));
}

}  // namespace angiodiff::test
