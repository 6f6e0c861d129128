// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/nn_blocks.hpp"

#include <cmath>

namespace angiodiff::nn {

namespace F = torch::nn::functional;

int norm_groups(int channels) {
  for (int g : {32, 16, 8, 4, 2}) {
    if (channels % g == 0 && channels / g >= 2) return g;
  }
  return 1;
}

torch::nn::GroupNorm make_group_norm(int channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(channels), channels).eps(1e-6));
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim, double max_period) {
  const int half = dim / 2;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64).device(t.device());
  auto freqs = torch::exp(-std::log(max_period) * torch::arange(half, opts) / half);
  auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, opts)}, 1);
  return emb;
}

torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& key_mask) {
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(q.size(-1)));
  if (key_mask.defined()) {
    auto keep = key_mask.to(torch::kBool).unsqueeze(1).unsqueeze(2);  // [B,1,1,Lk]
    scores = scores.masked_fill(keep.logical_not(), -std::numeric_limits<double>::infinity());
  }
  return torch::softmax(scores, -1);
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int temb_dim) {
  norm1 = register_module("norm1", make_group_norm(in_channels));
  conv1 = register_module("conv1",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  norm2 = register_module("norm2", make_group_norm(out_channels));
  conv2 = register_module("conv2",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  if (temb_dim > 0) temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out_channels));
  if (in_channels != out_channels) {
    skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1(F::silu(norm1(x)));
  if (temb_proj && temb.defined()) h = h + temb_proj(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2(F::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

DownsampleImpl::DownsampleImpl(int channels) {
  conv = register_module("conv",
                         torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).stride(2).padding(1)));
}

torch::Tensor DownsampleImpl::forward(const torch::Tensor& x) { return conv(x); }

UpsampleImpl::UpsampleImpl(int channels) {
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) {
  auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kNearest));
  return conv(up);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int query_dim, int context_dim, int heads_, int head_dim_)
    : heads(heads_), head_dim(head_dim_) {
  const int inner = heads * head_dim;
  const int kv_dim = context_dim > 0 ? context_dim : query_dim;
  to_q = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(query_dim, inner).bias(false)));
  to_k = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(kv_dim, inner).bias(false)));
  to_v = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(kv_dim, inner).bias(false)));
  to_out = register_module("to_out", torch::nn::Linear(inner, query_dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                              const torch::Tensor& key_mask) {
  const auto& src = context.defined() ? context : x;
  const auto b = x.size(0);
  const auto split_heads = [&](const torch::Tensor& t) {
    return t.view({b, t.size(1), heads, head_dim}).transpose(1, 2);  // [B,H,L,d]
  };
  auto q = split_heads(to_q(x));
  auto k = split_heads(to_k(src));
  auto v = split_heads(to_v(src));
  auto w = attention_weights(q, k, key_mask);
  auto out = torch::matmul(w, v).transpose(1, 2).reshape({b, x.size(1), heads * head_dim});
  return to_out(out);
}

TransformerBlockImpl::TransformerBlockImpl(int dim, int heads, int head_dim, int context_dim) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  self_attn = register_module("self_attn", MultiHeadAttention(dim, 0, heads, head_dim));
  if (context_dim > 0) {
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    cross_attn = register_module("cross_attn", MultiHeadAttention(dim, context_dim, heads, head_dim));
  }
  norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ff = register_module("ff", torch::nn::Sequential(torch::nn::Linear(dim, 4 * dim), torch::nn::GELU(),
                                                   torch::nn::Linear(4 * dim, dim)));
}

torch::Tensor TransformerBlockImpl::forward(torch::Tensor x, const torch::Tensor& context,
                                            const torch::Tensor& context_mask, const torch::Tensor& self_mask) {
  x = x + self_attn->forward(norm1(x), {}, self_mask);
  if (cross_attn) {
    TORCH_CHECK(context.defined(), "cross-attention block requires a context");
    x = x + cross_attn(norm2(x), context, context_mask);
  }
  return x + ff->forward(norm3(x));
}

SpatialTransformerImpl::SpatialTransformerImpl(int channels, int head_channels, int context_dim) {
  const int heads = std::max(1, channels / head_channels);
  const int head_dim = channels / heads;
  norm = register_module("norm", make_group_norm(channels));
  proj_in = register_module("proj_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  block = register_module("block", TransformerBlock(channels, heads, head_dim, context_dim));
  proj_out = register_module("proj_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  torch::NoGradGuard no_grad;
  proj_out->weight.zero_();
  proj_out->bias.zero_();
}

torch::Tensor SpatialTransformerImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                              const torch::Tensor& context_mask) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto t = proj_in(norm(x)).flatten(2).transpose(1, 2);  // [B, HW, C]
  t = block(t, context, context_mask);
  t = t.transpose(1, 2).reshape({b, c, h, w});
  return x + proj_out(t);
}

double gradient_norm(const std::vector<torch::Tensor>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) acc += p.grad().pow(2).sum().item<double>();
  }
  return std::sqrt(acc);
}

}  // namespace angiodiff::nn
