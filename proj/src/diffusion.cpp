// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/diffusion.hpp"

#include <fmt/format.h>

#include "angiodiff/common.hpp"
#include "angiodiff/frames.hpp"
#include "angiodiff/prompt.hpp"

namespace angiodiff {

ToyMlpImpl::ToyMlpImpl(int data_dim, int hidden, int layers, int time_dim_) : time_dim(time_dim_) {
  if (data_dim < 1 || hidden < 1 || layers < 1 || time_dim < 2) throw ValidationError("invalid toy MLP shape");
  net = register_module("net", torch::nn::Sequential());
  net->push_back(torch::nn::Linear(data_dim + time_dim, hidden));
  net->push_back(torch::nn::SiLU());
  for (int i = 1; i < layers; ++i) {
    net->push_back(torch::nn::Linear(hidden, hidden));
    net->push_back(torch::nn::SiLU());
  }
  net->push_back(torch::nn::Linear(hidden, data_dim));
}

torch::Tensor ToyMlpImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  auto temb = nn::timestep_embedding(t, time_dim).to(x.dtype());
  return net->forward(torch::cat({x, temb}, 1));
}

torch::Tensor ToyMlpDenoiser::predict_eps(const torch::Tensor& z_t, const torch::Tensor& t,
                                          const TextContext* context) {
  if (context) throw ValidationError("unconditional denoiser does not accept a conditioning context");
  return net_->forward(z_t, t);
}

torch::Tensor UnetDenoiser::predict_eps(const torch::Tensor& z_t, const torch::Tensor& t,
                                        const TextContext* context) {
  if (context) return unet_->forward(z_t, t, context->tokens, context->mask);
  return unet_->forward(z_t, t);
}

namespace {

void check_context(const Denoiser& denoiser, const TextContext* context, std::int64_t batch) {
  const auto dim = denoiser.context_dim();
  if (!dim && context) throw ValidationError("unconditional denoiser does not accept a conditioning context");
  if (dim && !context) throw ValidationError("conditional denoiser requires a conditioning context");
  if (!context) return;
  if (context->tokens.dim() != 3 || context->tokens.size(2) != *dim) {
    throw ValidationError(fmt::format("conditioning dim {} does not match denoiser context_dim {}",
                                      context->tokens.dim() == 3 ? context->tokens.size(2) : -1, *dim));
  }
  if (context->tokens.size(0) != batch) {
    throw ValidationError(
        fmt::format("{} conditioning rows for a batch of {}", context->tokens.size(0), batch));
  }
}

TextContext slice_context(const TextContext& c, std::int64_t begin, std::int64_t end) {
  return {c.tokens.slice(0, begin, end), c.mask.slice(0, begin, end)};
}

}  // namespace

torch::Tensor ddpm_loss_at(Denoiser& denoiser, const torch::Tensor& z0, const torch::Tensor& t,
                           const torch::Tensor& eps, const NoiseSchedule& schedule, const TextContext* context) {
  check_context(denoiser, context, z0.size(0));
  auto z_t = forward_diffuse(z0, t, eps, schedule);
  return (eps - denoiser.predict_eps(z_t, t, context)).pow(2).mean();
}

torch::Tensor ddpm_loss(Denoiser& denoiser, const torch::Tensor& z0, const NoiseSchedule& schedule,
                        torch::Generator& generator, const TextContext* context) {
  auto t = torch::randint(1, schedule.steps() + 1, {z0.size(0)}, generator, torch::kLong);
  auto eps = torch::randn(z0.sizes(), generator, z0.options());
  return ddpm_loss_at(denoiser, z0, t, eps, schedule, context);
}

torch::Tensor sample_with_seeds(Denoiser& denoiser, const NoiseSchedule& schedule,
                                const std::vector<std::int64_t>& sample_shape,
                                const std::vector<std::uint64_t>& seeds, const TextContext* context,
                                const SamplerOptions& options) {
  const auto n = static_cast<std::int64_t>(seeds.size());
  check_context(denoiser, context, n);
  if (options.batch_size < 1) throw ValidationError("sampler batch_size must be >= 1");
  torch::NoGradGuard no_grad;
  std::vector<torch::Generator> gens;
  gens.reserve(seeds.size());
  for (auto s : seeds) gens.push_back(torch::make_generator<at::CPUGeneratorImpl>(s));
  const auto draw = [&] {
    std::vector<torch::Tensor> rows;
    rows.reserve(gens.size());
    for (auto& g : gens) rows.push_back(torch::randn(sample_shape, g, torch::kFloat32));
    return torch::stack(rows);
  };
  if (n == 0) {
    std::vector<std::int64_t> shape{0};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return torch::empty(shape);
  }
  auto z = draw();
  for (int t = schedule.steps(); t >= 1; --t) {
    std::vector<torch::Tensor> eps;
    for (std::int64_t i = 0; i < n; i += options.batch_size) {
      const auto end = std::min<std::int64_t>(n, i + options.batch_size);
      auto tt = torch::full({end - i}, t, torch::kLong);
      if (context) {
        auto part = slice_context(*context, i, end);
        eps.push_back(denoiser.predict_eps(z.slice(0, i, end), tt, &part));
      } else {
        eps.push_back(denoiser.predict_eps(z.slice(0, i, end), tt, nullptr));
      }
    }
    auto eta = t > 1 ? draw() : torch::Tensor();
    z = reverse_step(z, t, torch::cat(eps), schedule, eta, options.variance);
  }
  return z;
}

torch::Tensor sample(Denoiser& denoiser, const NoiseSchedule& schedule, int n,
                     const std::vector<std::int64_t>& sample_shape, std::uint64_t seed, const TextContext* context,
                     const SamplerOptions& options) {
  if (n < 0) throw ValidationError("sample count must be non-negative");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
  return sample_with_seeds(denoiser, schedule, sample_shape, seeds, context, options);
}

void LdmConfig::validate() const {
  unet.validate();
  if (conditional() != unet.context_dim.has_value()) {
    throw ValidationError("text_encoder must be set exactly when unet.context_dim is set");
  }
  if (text_encoder) {
    text_encoder->validate();
    if (text_encoder->embedding_dim != *unet.context_dim) {
      throw ValidationError(fmt::format("text encoder width {} != unet context_dim {}",
                                        text_encoder->embedding_dim, *unet.context_dim));
    }
    if (!train_text_encoder) {
      throw ValidationError("the text encoder is trained jointly with the denoiser; a frozen encoder is not supported");
    }
  }
  (void)build_schedule(timesteps, beta_start, beta_end);
  if (!(learning_rate > 0.0)) throw ValidationError("ldm learning_rate must be positive");
  if (batch_size < 1 || max_epochs < 0 || max_steps < 0) {
    throw ValidationError("ldm batch_size/max_epochs/max_steps out of range");
  }
  if (!(grad_clip >= 0.0)) throw ValidationError("ldm grad_clip must be non-negative");
}

void to_json(nlohmann::json& j, const LdmConfig& c) {
  j = nlohmann::json{{"unet", c.unet},
                     {"text_encoder", c.text_encoder ? nlohmann::json(*c.text_encoder) : nlohmann::json(nullptr)},
                     {"timesteps", c.timesteps},
                     {"beta_start", c.beta_start},
                     {"beta_end", c.beta_end},
                     {"variance", c.variance == ReverseVariance::Beta ? "beta" : "posterior"},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"max_steps", c.max_steps},
                     {"train_text_encoder", c.train_text_encoder},
                     {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, LdmConfig& c) {
  c.unet = j.at("unet").get<UnetConfig>();
  const auto& te = j.at("text_encoder");
  c.text_encoder = te.is_null() ? std::nullopt : std::optional<TextEncoderConfig>(te.get<TextEncoderConfig>());
  c.timesteps = j.at("timesteps").get<int>();
  c.beta_start = j.at("beta_start").get<double>();
  c.beta_end = j.at("beta_end").get<double>();
  const auto variance = j.at("variance").get<std::string>();
  if (variance == "beta") {
    c.variance = ReverseVariance::Beta;
  } else if (variance == "posterior") {
    c.variance = ReverseVariance::Posterior;
  } else {
    throw ValidationError(fmt::format("unknown variance '{}' (expected beta or posterior)", variance));
  }
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.max_steps = j.at("max_steps").get<int>();
  c.train_text_encoder = j.at("train_text_encoder").get<bool>();
  c.grad_clip = j.at("grad_clip").get<double>();
}

LatentDiffusionModel::LatentDiffusionModel(LdmConfig cfg, VaeModel vae_model)
    : config(std::move(cfg)), vae(std::move(vae_model)), schedule(config.schedule()) {
  config.validate();
  if (!vae.net) throw ValidationError("latent diffusion model needs a VAE");
  if (vae.config.latent_channels != config.unet.latent_channels ||
      vae.config.latent_side != config.unet.latent_side) {
    throw ValidationError(fmt::format("VAE latent {}x{}x{} does not match UNet latent {}x{}x{}",
                                      vae.config.latent_channels, vae.config.latent_side, vae.config.latent_side,
                                      config.unet.latent_channels, config.unet.latent_side,
                                      config.unet.latent_side));
  }
  unet = Unet(config.unet);
  if (config.text_encoder) text_encoder = TextEncoder(*config.text_encoder);
}

std::vector<std::int64_t> LatentDiffusionModel::latent_shape() const {
  return {config.unet.latent_channels, config.unet.latent_side, config.unet.latent_side};
}

torch::Tensor LatentDiffusionModel::encode_latents(const torch::Tensor& images, int batch_size) {
  torch::NoGradGuard no_grad;
  vae.net->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    const auto end = std::min<std::int64_t>(images.size(0), i + batch_size);
    out.push_back(vae.net->posterior(images.slice(0, i, end)).mean * vae.latent_scale);
  }
  if (out.empty()) {
    std::vector<std::int64_t> shape{0};
    const auto ls = latent_shape();
    shape.insert(shape.end(), ls.begin(), ls.end());
    return torch::empty(shape);
  }
  return torch::cat(out);
}

torch::Tensor LatentDiffusionModel::decode_latents(const torch::Tensor& latents, int batch_size) {
  torch::NoGradGuard no_grad;
  vae.net->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < latents.size(0); i += batch_size) {
    const auto end = std::min<std::int64_t>(latents.size(0), i + batch_size);
    out.push_back(vae.net->decode(latents.slice(0, i, end) / vae.latent_scale).clamp(0.0, 1.0));
  }
  if (out.empty()) return torch::empty({0, 1, vae.config.image_side, vae.config.image_side});
  return torch::cat(out);
}

torch::Tensor LatentDiffusionModel::generate(const std::vector<std::string>& prompts,
                                             const std::vector<std::uint64_t>& seeds, const SamplerOptions& options) {
  eval();
  UnetDenoiser denoiser(unet);
  torch::Tensor latents;
  if (conditional()) {
    if (prompts.size() != seeds.size()) {
      throw ValidationError(fmt::format("{} prompts for {} seeds", prompts.size(), seeds.size()));
    }
    if (seeds.empty()) return decode_latents(torch::empty({0, config.unet.latent_channels, 1, 1}));
    torch::NoGradGuard no_grad;
    auto context = text_encoder->embed_batch(prompts);
    latents = sample_with_seeds(denoiser, schedule, latent_shape(), seeds, &context, options);
  } else {
    if (!prompts.empty()) throw ValidationError("unconditional model does not accept prompts");
    latents = sample_with_seeds(denoiser, schedule, latent_shape(), seeds, nullptr, options);
  }
  return decode_latents(latents);
}

void LatentDiffusionModel::eval() {
  unet->eval();
  if (text_encoder) text_encoder->eval();
  vae.net->eval();
}

std::unique_ptr<torch::optim::Optimizer> make_ldm_optimizer(LatentDiffusionModel& model) {
  auto params = model.unet->parameters();
  if (model.text_encoder) {
    auto te = model.text_encoder->parameters();
    params.insert(params.end(), te.begin(), te.end());
  }
  return std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(model.config.learning_rate));
}

JointStepResult joint_training_step(LatentDiffusionModel& model, torch::optim::Optimizer& optimizer,
                                    const torch::Tensor& z0, const std::vector<std::string>& prompts,
                                    torch::Generator& generator) {
  model.unet->train();
  UnetDenoiser denoiser(model.unet);
  torch::Tensor loss;
  std::vector<torch::Tensor> text_params;
  if (model.conditional()) {
    text_params = model.text_encoder->parameters();
    for (const auto& p : text_params) {
      if (!p.requires_grad()) {
        throw ValidationError("text encoder parameters are frozen; the encoder must train jointly");
      }
    }
    if (static_cast<std::int64_t>(prompts.size()) != z0.size(0)) {
      throw ValidationError(fmt::format("{} prompts for a batch of {}", prompts.size(), z0.size(0)));
    }
    model.text_encoder->train();
    auto context = model.text_encoder->embed_batch(prompts);
    loss = ddpm_loss(denoiser, z0, model.schedule, generator, &context);
  } else {
    if (!prompts.empty()) throw ValidationError("unconditional model does not accept prompts");
    loss = ddpm_loss(denoiser, z0, model.schedule, generator);
  }
  optimizer.zero_grad();
  loss.backward();
  JointStepResult result;
  result.loss = loss.item<double>();
  auto unet_params = model.unet->parameters();
  result.denoiser_grad_norm = nn::gradient_norm(unet_params);
  result.text_encoder_grad_norm = nn::gradient_norm(text_params);
  if (model.config.grad_clip > 0.0) {
    auto all = unet_params;
    all.insert(all.end(), text_params.begin(), text_params.end());
    torch::nn::utils::clip_grad_norm_(all, model.config.grad_clip);
  }
  optimizer.step();
  return result;
}

LdmTrainResult train_ldm(const CorpusManifest& manifest, const VaeModel& vae, const LdmConfig& config,
                         std::uint64_t seed, const LdmLog& log) {
  config.validate();
  std::vector<FrameRecord> records;
  std::size_t skipped = 0;
  for (const auto& r : manifest.records) {
    if (r.phase != Phase::ARTERIAL) continue;
    if (config.conditional() && r.circulation == Circulation::OTHER) {
      ++skipped;
      continue;
    }
    records.push_back(r);
  }
  if (records.empty()) throw ValidationError("no ARTERIAL frames to train the diffusion model on");
  if (skipped && log) log(fmt::format("ldm: skipped {} frames without AC/PC circulation", skipped));

  torch::manual_seed(derive_seed(seed, "ldm-init"));
  LdmTrainResult result;
  result.model = std::make_unique<LatentDiffusionModel>(config, vae);
  auto& model = *result.model;

  std::vector<std::string> prompts;
  if (config.conditional()) {
    for (const auto& r : records) prompts.push_back(prompt_for(r));
  }
  const auto latents = model.encode_latents(load_frames(manifest, records, vae.config.image_side));
  if (log) {
    log(fmt::format("ldm: {} frames, latent std {:.4f}", latents.size(0), latents.std().item<double>()));
  }

  auto optimizer = make_ldm_optimizer(model);
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "ldm-batches"));
  const auto n = latents.size(0);
  bool capped = false;
  for (int epoch = 0; epoch < config.max_epochs && !capped; ++epoch) {
    auto order = torch::randperm(n, gen, torch::kLong);
    double acc = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t i = 0; i < n; i += config.batch_size) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        capped = true;
        break;
      }
      const auto end = std::min<std::int64_t>(n, i + config.batch_size);
      auto idx = order.slice(0, i, end);
      std::vector<std::string> batch_prompts;
      if (config.conditional()) {
        auto acc_idx = idx.accessor<std::int64_t, 1>();
        for (std::int64_t k = 0; k < acc_idx.size(0); ++k) batch_prompts.push_back(prompts[acc_idx[k]]);
      }
      const auto step = joint_training_step(model, *optimizer, latents.index_select(0, idx), batch_prompts, gen);
      acc += step.loss * static_cast<double>(end - i);
      seen += end - i;
      ++result.steps;
    }
    if (seen == 0) break;
    result.epoch_loss.push_back(acc / static_cast<double>(seen));
    if (log) log(fmt::format("ldm epoch {} loss {:.5f} steps {}", epoch, result.epoch_loss.back(), result.steps));
  }
  model.eval();
  return result;
}

void save_ldm(const std::filesystem::path& path, const LatentDiffusionModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive vae_archive;
  save_vae(vae_archive, model.vae);
  archive.write("vae_model", vae_archive);
  torch::serialize::OutputArchive unet_archive;
  model.unet->save(unet_archive);
  archive.write("unet", unet_archive);
  if (model.text_encoder) {
    torch::serialize::OutputArchive text_archive;
    model.text_encoder->save(text_archive);
    archive.write("text_encoder", text_archive);
  }
  write_config_echo(archive, nlohmann::json(model.config).dump());
  archive.save_to(path.string());
}

std::unique_ptr<LatentDiffusionModel> load_ldm(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw ValidationError(fmt::format("cannot load diffusion checkpoint {}: {}", path.string(),
                                      e.what_without_backtrace()));
  }
  auto config = nlohmann::json::parse(read_config_echo(archive)).get<LdmConfig>();
  torch::serialize::InputArchive vae_archive;
  archive.read("vae_model", vae_archive);
  auto model = std::make_unique<LatentDiffusionModel>(config, load_vae(vae_archive));
  torch::serialize::InputArchive unet_archive;
  archive.read("unet", unet_archive);
  model->unet->load(unet_archive);
  if (model->text_encoder) {
    torch::serialize::InputArchive text_archive;
    archive.read("text_encoder", text_archive);
    model->text_encoder->load(text_archive);
  }
  model->eval();
  return model;
}

}  // namespace angiodiff
