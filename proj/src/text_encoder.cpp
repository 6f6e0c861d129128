// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/text_encoder.hpp"

#include <map>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

void TextEncoderConfig::validate() const {
  if (layers < 1) throw ValidationError("text encoder needs at least one layer");
  if (embedding_dim < 1 || head_dim < 1 || embedding_dim % head_dim != 0) {
    throw ValidationError("text encoder embedding_dim must be a positive multiple of head_dim");
  }
  if (max_tokens < 2) throw ValidationError("text encoder max_tokens must be >= 2");
}

void to_json(nlohmann::json& j, const TextEncoderConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"embedding_dim", c.embedding_dim},
                     {"head_dim", c.head_dim},
                     {"max_tokens", c.max_tokens}};
}

void from_json(const nlohmann::json& j, TextEncoderConfig& c) {
  c.layers = j.at("layers").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.head_dim = j.at("head_dim").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
}

TextEncoderImpl::TextEncoderImpl(TextEncoderConfig cfg) : config(cfg) {
  config.validate();
  token_embedding = register_module("token_embedding",
                                    torch::nn::Embedding(tokenizer.vocab_size(), config.embedding_dim));
  position_embedding = register_module("position_embedding",
                                       torch::nn::Embedding(config.max_tokens, config.embedding_dim));
  blocks = register_module("blocks", torch::nn::ModuleList());
  const int heads = config.embedding_dim / config.head_dim;
  for (int i = 0; i < config.layers; ++i) {
    blocks->push_back(nn::TransformerBlock(config.embedding_dim, heads, config.head_dim, 0));
  }
  final_norm = register_module("final_norm",
                               torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.embedding_dim})));
  torch::NoGradGuard no_grad;
  token_embedding->weight.normal_(0.0, 0.02);
  position_embedding->weight.normal_(0.0, 0.02);
}

std::pair<torch::Tensor, torch::Tensor> TextEncoderImpl::tokenize(const std::vector<std::string>& prompts) const {
  if (prompts.empty()) throw ValidationError("no prompts to embed");
  std::vector<std::vector<std::int64_t>> encoded;
  std::size_t longest = 0;
  for (const auto& p : prompts) {
    auto ids = tokenizer.encode(p);
    if (ids.size() > static_cast<std::size_t>(config.max_tokens)) {
      throw ValidationError(
          fmt::format("prompt has {} tokens, limit is {}: '{}'", ids.size(), config.max_tokens, p));
    }
    longest = std::max(longest, ids.size());
    encoded.push_back(std::move(ids));
  }
  const auto b = static_cast<std::int64_t>(prompts.size());
  const auto l = static_cast<std::int64_t>(longest);
  auto ids = torch::full({b, l}, Tokenizer::kPad, torch::kLong);
  auto mask = torch::zeros({b, l}, torch::kBool);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& row = encoded[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < row.size(); ++k) {
      ids[i][static_cast<std::int64_t>(k)] = row[k];
      mask[i][static_cast<std::int64_t>(k)] = true;
    }
  }
  return {ids, mask};
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& ids, const torch::Tensor& mask) {
  const auto l = ids.size(1);
  auto positions = torch::arange(l, torch::TensorOptions().dtype(torch::kLong).device(ids.device()));
  auto h = token_embedding(ids) + position_embedding(positions).unsqueeze(0);
  for (const auto& m : *blocks) {
    h = m->as<nn::TransformerBlockImpl>()->forward(h, {}, {}, mask);
  }
  return final_norm(h);
}

TextContext TextEncoderImpl::embed(const std::vector<std::string>& prompts) {
  auto [ids, mask] = tokenize(prompts);
  return {forward(ids, mask), mask};
}

TextContext TextEncoderImpl::embed_batch(const std::vector<std::string>& prompts) {
  std::map<std::string, std::int64_t> slot;
  std::vector<std::string> unique;
  std::vector<std::int64_t> index;
  index.reserve(prompts.size());
  for (const auto& p : prompts) {
    auto [it, inserted] = slot.emplace(p, static_cast<std::int64_t>(unique.size()));
    if (inserted) unique.push_back(p);
    index.push_back(it->second);
  }
  auto ctx = embed(unique);
  auto gather = torch::tensor(index, torch::kLong);
  return {ctx.tokens.index_select(0, gather), ctx.mask.index_select(0, gather)};
}

}  // namespace angiodiff
