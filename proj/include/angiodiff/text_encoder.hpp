// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "json.hpp"
#include "angiodiff/nn_blocks.hpp"
#include "angiodiff/prompt.hpp"

namespace angiodiff {

struct TextEncoderConfig {
  int layers = 4;
  int embedding_dim = 512;
  int head_dim = 64;
  int max_tokens = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const TextEncoderConfig& c);
void from_json(const nlohmann::json& j, TextEncoderConfig& c);

/// Per-token context for cross-attention. `mask` is true at real tokens.
struct TextContext {
  torch::Tensor tokens;  // [B, L, D]
  torch::Tensor mask;    // [B, L] bool
};

/// Transformer encoder over template prompts, trained from scratch together
/// with the denoiser. No pooling: the whole token sequence is the context.
struct TextEncoderImpl : torch::nn::Module {
  explicit TextEncoderImpl(TextEncoderConfig config);

  /// ids [B, L] (padded with Tokenizer::kPad), mask [B, L].
  torch::Tensor forward(const torch::Tensor& ids, const torch::Tensor& mask);

  /// Tokenizes, pads to the longest prompt and encodes.
  TextContext embed(const std::vector<std::string>& prompts);
  /// Encodes each distinct prompt once and gathers rows per input prompt.
  TextContext embed_batch(const std::vector<std::string>& prompts);

  /// ids/mask tensors for a prompt list. Throws ValidationError when a
  /// prompt exceeds max_tokens.
  std::pair<torch::Tensor, torch::Tensor> tokenize(const std::vector<std::string>& prompts) const;

  TextEncoderConfig config;
  Tokenizer tokenizer;
  torch::nn::Embedding token_embedding{nullptr};
  torch::nn::Embedding position_embedding{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm final_norm{nullptr};
};
TORCH_MODULE(TextEncoder);

}  // namespace angiodiff
