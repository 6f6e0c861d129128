// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/vae.hpp"

#include <torch/script.h>

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "angiodiff/common.hpp"
#include "angiodiff/frames.hpp"

namespace angiodiff {

namespace F = torch::nn::functional;

void VaeConfig::validate() const {
  if (image_side < 1 || latent_side < 1) throw ValidationError("vae sides must be positive");
  if (channel_multipliers.empty()) throw ValidationError("vae needs at least one level");
  if (image_side != latent_side * (1 << downsamples())) {
    throw ValidationError(fmt::format("vae image_side {} != latent_side {} * 2^{}", image_side, latent_side,
                                      downsamples()));
  }
  if (latent_channels < 1) throw ValidationError("vae latent_channels must be >= 1");
  if (base_channels < 1 || residual_blocks_per_level < 1) throw ValidationError("vae widths must be positive");
  if (!(kl_weight >= 0.0)) throw ValidationError("kl_weight must be non-negative");
  if (!(learning_rate > 0.0)) throw ValidationError("vae learning_rate must be positive");
  if (batch_size < 1 || max_epochs < 0 || early_stop_patience < 1 || max_steps < 0) {
    throw ValidationError("vae batch_size/max_epochs/patience/max_steps out of range");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("vae val_fraction must be in [0,1)");
}

void to_json(nlohmann::json& j, const VaeConfig& c) {
  j = nlohmann::json{{"image_side", c.image_side},
                     {"latent_side", c.latent_side},
                     {"latent_channels", c.latent_channels},
                     {"base_channels", c.base_channels},
                     {"channel_multipliers", c.channel_multipliers},
                     {"residual_blocks_per_level", c.residual_blocks_per_level},
                     {"kl_weight", c.kl_weight},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"early_stop_patience", c.early_stop_patience},
                     {"max_steps", c.max_steps},
                     {"val_fraction", c.val_fraction},
                     {"recon_loss", c.recon_loss == ReconLoss::L1 ? "l1" : "perceptual"},
                     {"perceptual_network", c.perceptual_network}};
}

void from_json(const nlohmann::json& j, VaeConfig& c) {
  c.image_side = j.at("image_side").get<int>();
  c.latent_side = j.at("latent_side").get<int>();
  c.latent_channels = j.at("latent_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.residual_blocks_per_level = j.at("residual_blocks_per_level").get<int>();
  c.kl_weight = j.at("kl_weight").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.early_stop_patience = j.at("early_stop_patience").get<int>();
  c.max_steps = j.at("max_steps").get<int>();
  c.val_fraction = j.at("val_fraction").get<double>();
  const auto kind = j.at("recon_loss").get<std::string>();
  if (kind == "l1") {
    c.recon_loss = ReconLoss::L1;
  } else if (kind == "perceptual") {
    c.recon_loss = ReconLoss::Perceptual;
  } else {
    throw ValidationError(fmt::format("unknown recon_loss '{}' (expected l1 or perceptual)", kind));
  }
  c.perceptual_network = j.at("perceptual_network").get<std::string>();
}

VaeEncoderImpl::VaeEncoderImpl(const VaeConfig& config) {
  const int base = config.base_channels;
  conv_in = register_module("conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, base, 3).padding(1)));
  blocks = register_module("blocks", torch::nn::ModuleList());
  int ch = base;
  const auto levels = static_cast<int>(config.channel_multipliers.size());
  for (int level = 0; level < levels; ++level) {
    const int out = base * config.channel_multipliers[level];
    for (int i = 0; i < config.residual_blocks_per_level; ++i) {
      blocks->push_back(nn::ResBlock(ch, out));
      ch = out;
    }
    if (level + 1 < levels) blocks->push_back(nn::Downsample(ch));
  }
  mid = register_module("mid", nn::ResBlock(ch, ch));
  norm_out = register_module("norm_out", nn::make_group_norm(ch));
  conv_out = register_module(
      "conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 2 * config.latent_channels, 3).padding(1)));
}

torch::Tensor VaeEncoderImpl::forward(torch::Tensor x) {
  x = conv_in(x);
  for (const auto& m : *blocks) {
    if (auto* res = m->as<nn::ResBlockImpl>()) {
      x = res->forward(x);
    } else {
      x = m->as<nn::DownsampleImpl>()->forward(x);
    }
  }
  x = mid(x);
  return conv_out(F::silu(norm_out(x)));
}

VaeDecoderImpl::VaeDecoderImpl(const VaeConfig& config) {
  const int base = config.base_channels;
  const auto levels = static_cast<int>(config.channel_multipliers.size());
  int ch = base * config.channel_multipliers.back();
  conv_in = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.latent_channels, ch, 3).padding(1)));
  mid = register_module("mid", nn::ResBlock(ch, ch));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int level = levels - 1; level >= 0; --level) {
    const int out = base * config.channel_multipliers[level];
    for (int i = 0; i < config.residual_blocks_per_level; ++i) {
      blocks->push_back(nn::ResBlock(ch, out));
      ch = out;
    }
    if (level > 0) blocks->push_back(nn::Upsample(ch));
  }
  norm_out = register_module("norm_out", nn::make_group_norm(ch));
  conv_out = register_module("conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 3).padding(1)));
}

torch::Tensor VaeDecoderImpl::forward(torch::Tensor z) {
  auto x = mid(conv_in(z));
  for (const auto& m : *blocks) {
    if (auto* res = m->as<nn::ResBlockImpl>()) {
      x = res->forward(x);
    } else {
      x = m->as<nn::UpsampleImpl>()->forward(x);
    }
  }
  return conv_out(F::silu(norm_out(x)));
}

VaeImpl::VaeImpl(VaeConfig cfg) : config(std::move(cfg)) {
  config.validate();
  encoder = register_module("encoder", VaeEncoder(config));
  decoder = register_module("decoder", VaeDecoder(config));
}

Posterior VaeImpl::posterior(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != config.image_side ||
      images.size(3) != config.image_side) {
    throw ValidationError(fmt::format("vae expects [N,1,{0},{0}] images", config.image_side));
  }
  auto moments = encoder(images * 2.0 - 1.0);
  auto parts = moments.chunk(2, 1);
  return {parts[0], parts[1].clamp(-30.0, 20.0)};
}

LatentCode VaeImpl::encode(const torch::Tensor& images, std::optional<torch::Generator> generator) {
  auto post = posterior(images);
  LatentCode code{post.mean, post.mean, post.logvar};
  if (generator) {
    auto eps = torch::randn(post.mean.sizes(), *generator, post.mean.options());
    code.sample = post.mean + torch::exp(0.5 * post.logvar) * eps;
  }
  return code;
}

torch::Tensor VaeImpl::decode(const torch::Tensor& latent) {
  if (latent.dim() != 4 || latent.size(1) != config.latent_channels || latent.size(2) != config.latent_side ||
      latent.size(3) != config.latent_side) {
    throw ValidationError(fmt::format("vae expects [N,{0},{1},{1}] latents", config.latent_channels,
                                      config.latent_side));
  }
  return (decoder(latent) + 1.0) * 0.5;
}

torch::Tensor FilterBankPerceptual::operator()(const torch::Tensor& x, const torch::Tensor& y) const {
  auto opts = x.options();
  // Sobel x, Sobel y, Laplacian.
  auto bank = torch::tensor({-1., 0., 1., -2., 0., 2., -1., 0., 1.,   //
                             -1., -2., -1., 0., 0., 0., 1., 2., 1.,   //
                             0., 1., 0., 1., -4., 1., 0., 1., 0.},
                            opts)
                  .view({3, 1, 3, 3});
  const double full_area = static_cast<double>(x.size(-1) * x.size(-2));
  auto total = torch::zeros({x.size(0)}, opts);
  auto a = x, b = y;
  for (int scale = 0; scale < 3 && a.size(-1) >= 4; ++scale) {
    if (scale > 0) {
      a = F::avg_pool2d(a, F::AvgPool2dFuncOptions(2));
      b = F::avg_pool2d(b, F::AvgPool2dFuncOptions(2));
    }
    auto fa = F::conv2d(a, bank, F::Conv2dFuncOptions().padding(1));
    auto fb = F::conv2d(b, bank, F::Conv2dFuncOptions().padding(1));
    total = total + (fa - fb).abs().mean({1, 2, 3}) * full_area;
  }
  return total;
}

namespace {

class TorchScriptPerceptual final : public PerceptualDistance {
 public:
  explicit TorchScriptPerceptual(const std::string& path) : path_(path), module_(torch::jit::load(path)) {
    module_.eval();
  }
  torch::Tensor operator()(const torch::Tensor& x, const torch::Tensor& y) const override {
    // LPIPS convention: 3 channels in [-1, 1].
    auto prep = [](const torch::Tensor& t) { return (t * 2.0 - 1.0).repeat({1, 3, 1, 1}); };
    auto out = const_cast<torch::jit::script::Module&>(module_).forward({prep(x), prep(y)}).toTensor();
    return out.reshape({x.size(0), -1}).mean(1) * static_cast<double>(x.size(-1) * x.size(-2));
  }
  std::string name() const override { return "torchscript:" + path_; }

 private:
  std::string path_;
  torch::jit::script::Module module_;
};

}  // namespace

std::unique_ptr<PerceptualDistance> make_perceptual(const std::string& spec, std::string* warning) {
  if (spec == "filterbank") return std::make_unique<FilterBankPerceptual>();
  constexpr std::string_view prefix = "torchscript:";
  if (spec.rfind(prefix, 0) == 0) {
    const auto path = spec.substr(prefix.size());
    try {
      return std::make_unique<TorchScriptPerceptual>(path);
    } catch (const std::exception& e) {
      if (warning) *warning = fmt::format("perceptual network '{}' unavailable ({}); using L1", path, e.what());
      return nullptr;
    }
  }
  if (warning) *warning = fmt::format("unknown perceptual network '{}'; using L1", spec);
  return nullptr;
}

torch::Tensor kl_divergence(const torch::Tensor& mean, const torch::Tensor& logvar) {
  auto per_elem = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar);
  return per_elem.flatten(1).sum(1);
}

VaeLoss vae_loss(const torch::Tensor& x, const torch::Tensor& reconstruction, const Posterior& posterior,
                 double kl_weight, ReconLoss kind, const PerceptualDistance* perceptual) {
  if (!(kl_weight >= 0.0)) throw ValidationError("kl_weight must be non-negative");
  if (x.sizes() != reconstruction.sizes()) throw ValidationError("vae_loss: image/reconstruction shape mismatch");
  if (posterior.mean.sizes() != posterior.logvar.sizes() || posterior.mean.size(0) != x.size(0)) {
    throw ValidationError("vae_loss: posterior shape mismatch");
  }
  auto recon = (x - reconstruction).abs().flatten(1).sum(1);
  if (kind == ReconLoss::Perceptual && perceptual) recon = recon + (*perceptual)(x, reconstruction);
  auto kl = kl_divergence(posterior.mean, posterior.logvar);
  VaeLoss loss;
  loss.recon = recon.mean();
  loss.kl = kl.mean();
  loss.total = loss.recon + kl_weight * loss.kl;
  return loss;
}

double compute_latent_scale(Vae& vae, const torch::Tensor& images, int batch_size) {
  torch::NoGradGuard no_grad;
  vae->eval();
  std::vector<torch::Tensor> means;
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    const auto end = std::min<std::int64_t>(images.size(0), i + batch_size);
    means.push_back(vae->posterior(images.slice(0, i, end)).mean);
  }
  if (means.empty()) return 1.0;
  const double sd = torch::cat(means).std().item<double>();
  return sd > 0.0 ? 1.0 / sd : 1.0;
}

VaeTrainResult train_vae(const CorpusManifest& manifest, const VaeConfig& config, std::uint64_t seed,
                         const LogFn& log) {
  config.validate();
  if (manifest.records.empty()) throw ValidationError("vae training manifest is empty");
  torch::manual_seed(derive_seed(seed, "vae-init"));

  VaeTrainResult result;
  std::unique_ptr<PerceptualDistance> perceptual;
  if (config.recon_loss == ReconLoss::Perceptual) {
    std::string warning;
    perceptual = make_perceptual(config.perceptual_network, &warning);
    if (!warning.empty()) {
      result.warnings.push_back(warning);
      if (log) log(warning);
    }
  }

  const auto split = split_by_series(manifest.records, config.val_fraction, derive_seed(seed, "vae-split"));
  const auto train_images = load_frames(manifest, split.train, config.image_side);
  const auto val_images = load_frames(manifest, split.val, config.image_side);
  if (train_images.size(0) == 0) throw ValidationError("vae training split is empty");

  Vae vae(config);
  torch::optim::Adam optim(vae->parameters(), torch::optim::AdamOptions(config.learning_rate));
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "vae-batches"));

  const auto evaluate = [&](const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    vae->eval();
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < images.size(0); i += config.batch_size) {
      const auto end = std::min<std::int64_t>(images.size(0), i + config.batch_size);
      auto x = images.slice(0, i, end);
      auto post = vae->posterior(x);
      auto loss = vae_loss(x, vae->decode(post.mean), post, config.kl_weight, config.recon_loss, perceptual.get());
      acc += loss.total.item<double>() * static_cast<double>(end - i);
      n += end - i;
    }
    return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  };

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int steps = 0;
  std::vector<torch::Tensor> best_state;
  const auto snapshot = [&] {
    best_state.clear();
    for (const auto& p : vae->parameters()) best_state.push_back(p.detach().clone());
  };
  snapshot();

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    vae->train();
    auto order = torch::randperm(train_images.size(0), gen, torch::kLong);
    double acc = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t i = 0; i < order.size(0); i += config.batch_size) {
      if (config.max_steps > 0 && steps >= config.max_steps) break;
      const auto end = std::min<std::int64_t>(order.size(0), i + config.batch_size);
      auto x = train_images.index_select(0, order.slice(0, i, end));
      auto code = vae->encode(x, gen);
      auto loss = vae_loss(x, vae->decode(code.sample), Posterior{code.mean, code.logvar}, config.kl_weight,
                           config.recon_loss, perceptual.get());
      optim.zero_grad();
      loss.total.backward();
      optim.step();
      acc += loss.total.item<double>() * static_cast<double>(end - i);
      seen += end - i;
      ++steps;
    }
    if (seen == 0) break;
    result.train_epoch_loss.push_back(acc / static_cast<double>(seen));
    const double val = val_images.size(0) > 0 ? evaluate(val_images) : result.train_epoch_loss.back();
    result.val_epoch_loss.push_back(val);
    if (log) log(fmt::format("vae epoch {} train {:.4f} val {:.4f}", epoch, result.train_epoch_loss.back(), val));
    if (val < best) {
      best = val;
      since_best = 0;
      result.best_epoch = epoch;
      snapshot();
    } else if (++since_best >= config.early_stop_patience) {
      if (log) log(fmt::format("vae early stop at epoch {}", epoch));
      break;
    }
  }
  {
    torch::NoGradGuard no_grad;
    auto params = vae->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(best_state[i]);
  }
  vae->eval();
  result.model = VaeModel{config, vae, compute_latent_scale(vae, train_images)};
  return result;
}

void save_vae(torch::serialize::OutputArchive& archive, const VaeModel& model) {
  torch::serialize::OutputArchive net;
  model.net->save(net);
  archive.write("vae", net);
  write_config_echo(archive, nlohmann::json(model.config).dump());
  archive.write("latent_scale", torch::tensor(model.latent_scale, torch::kFloat64));
}

VaeModel load_vae(torch::serialize::InputArchive& archive) {
  VaeModel model;
  model.config = nlohmann::json::parse(read_config_echo(archive)).get<VaeConfig>();
  model.net = Vae(model.config);
  torch::serialize::InputArchive net;
  archive.read("vae", net);
  model.net->load(net);
  model.net->eval();
  torch::Tensor scale;
  archive.read("latent_scale", scale);
  model.latent_scale = scale.item<double>();
  return model;
}

void save_vae(const std::filesystem::path& path, const VaeModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  save_vae(archive, model);
  archive.save_to(path.string());
}

VaeModel load_vae(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw ValidationError(fmt::format("cannot load VAE checkpoint {}: {}", path.string(), e.what_without_backtrace()));
  }
  return load_vae(archive);
}

}  // namespace angiodiff
