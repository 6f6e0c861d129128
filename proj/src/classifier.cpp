// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "angiodiff/common.hpp"
#include "angiodiff/frames.hpp"

namespace angiodiff {

namespace F = torch::nn::functional;

double bce_loss(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.empty()) throw ValidationError("bce_loss: empty input");
  if (predictions.size() != labels.size()) {
    throw ValidationError(fmt::format("bce_loss: {} predictions vs {} labels", predictions.size(), labels.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double y = labels[i];
    acc += y * std::log(p) + (1.0 - y) * std::log1p(-p);
  }
  return -acc / static_cast<double>(predictions.size());
}

torch::Tensor bce_loss(const torch::Tensor& predictions, const torch::Tensor& labels) {
  if (predictions.numel() == 0) throw ValidationError("bce_loss: empty input");
  if (predictions.sizes() != labels.sizes()) throw ValidationError("bce_loss: shape mismatch");
  auto p = predictions.clamp(kBceEpsilon, 1.0 - kBceEpsilon);
  return -(labels * torch::log(p) + (1.0 - labels) * torch::log1p(-p)).mean();
}

void ClassifierConfig::validate() const {
  if (input_side <= 0) throw ValidationError("classifier input_side must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("classifier learning_rate must be positive");
  if (weight_decay < 0.0) throw ValidationError("classifier weight_decay must be non-negative");
  if (batch_size < 1) throw ValidationError("classifier batch_size must be >= 1");
  if (max_epochs < 0) throw ValidationError("classifier max_epochs must be >= 0");
  if (base_width < 1) throw ValidationError("classifier base_width must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("classifier threshold must be in (0,1)");
  (void)blocks_per_stage();
}

std::vector<int> ClassifierConfig::blocks_per_stage() const {
  if (architecture == "resnet10") return {1, 1, 1, 1};
  if (architecture == "resnet18") return {2, 2, 2, 2};
  if (architecture == "resnet34") return {3, 4, 6, 3};
  throw ValidationError(fmt::format("unknown classifier architecture '{}' (resnet10|resnet18|resnet34)", architecture));
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = nlohmann::json{{"input_side", c.input_side},
                     {"architecture", c.architecture},
                     {"base_width", c.base_width},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"random_crop", c.random_crop},
                     {"horizontal_flip", c.horizontal_flip},
                     {"intensity_jitter", c.intensity_jitter},
                     {"balance_classes", c.balance_classes},
                     {"threshold", c.threshold}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c.input_side = j.at("input_side").get<int>();
  c.architecture = j.at("architecture").get<std::string>();
  c.base_width = j.at("base_width").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.random_crop = j.at("random_crop").get<bool>();
  c.horizontal_flip = j.at("horizontal_flip").get<bool>();
  c.intensity_jitter = j.at("intensity_jitter").get<bool>();
  c.balance_classes = j.at("balance_classes").get<bool>();
  c.threshold = j.at("threshold").get<double>();
}

ConfusionMatrix confusion_from_scores(std::span<const double> scores, std::span<const double> labels,
                                      double threshold) {
  if (scores.size() != labels.size()) throw ValidationError("confusion: length mismatch");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] >= 0.5;
    if (pred && truth) ++cm.tp;
    if (pred && !truth) ++cm.fp;
    if (!pred && !truth) ++cm.tn;
    if (!pred && truth) ++cm.fn;
  }
  return cm;
}

ClassifierMetrics metrics_from_confusion(const ConfusionMatrix& cm, double threshold) {
  const auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(cm.tp, cm.tp + cm.fp), ratio(cm.tp, cm.tp + cm.fn), ratio(cm.tp + cm.tn, cm.total()), threshold};
}

void to_json(nlohmann::json& j, const ConfusionMatrix& c) {
  j = nlohmann::json{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

void from_json(const nlohmann::json& j, ConfusionMatrix& c) {
  c.tp = j.at("tp").get<std::uint64_t>();
  c.fp = j.at("fp").get<std::uint64_t>();
  c.tn = j.at("tn").get<std::uint64_t>();
  c.fn = j.at("fn").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const ClassifierMetrics& m) {
  j = nlohmann::json{
      {"precision", m.precision}, {"recall", m.recall}, {"accuracy", m.accuracy}, {"threshold", m.threshold}};
}

BasicBlockImpl::BasicBlockImpl(int in_channels, int out_channels, int stride) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3)
                                                         .stride(stride)
                                                         .padding(1)
                                                         .bias(false)));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_channels));
  conv2 = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1).bias(false)));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_channels));
  shortcut = register_module("shortcut", torch::nn::Sequential());
  if (stride != 1 || in_channels != out_channels) {
    shortcut->push_back(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)));
    shortcut->push_back(torch::nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(bn1(conv1(x)));
  h = bn2(conv2(h));
  return torch::relu(h + (shortcut->is_empty() ? x : shortcut->forward(x)));
}

PhaseNetImpl::PhaseNetImpl(const ClassifierConfig& config) {
  config.validate();
  const int w = config.base_width;
  stem = register_module(
      "stem", torch::nn::Sequential(
                  torch::nn::Conv2d(torch::nn::Conv2dOptions(1, w, 7).stride(2).padding(3).bias(false)),
                  torch::nn::BatchNorm2d(w), torch::nn::ReLU(),
                  torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1))));
  stages = register_module("stages", torch::nn::Sequential());
  int ch = w;
  const auto blocks = config.blocks_per_stage();
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const int out = w << s;
    for (int b = 0; b < blocks[s]; ++b) {
      stages->push_back(BasicBlock(ch, out, (b == 0 && s > 0) ? 2 : 1));
      ch = out;
    }
  }
  head = register_module("head", torch::nn::Linear(ch, 1));
}

torch::Tensor PhaseNetImpl::forward(const torch::Tensor& x) {
  auto h = stages->forward(stem->forward(x));
  h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions(1)).flatten(1);
  return head(h).squeeze(1);
}

torch::Tensor PhaseClassifier::predict(const torch::Tensor& frames, int batch_size) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < frames.size(0); i += batch_size) {
    const auto end = std::min<std::int64_t>(frames.size(0), i + batch_size);
    out.push_back(torch::sigmoid(net->forward(frames.slice(0, i, end))));
  }
  if (out.empty()) return torch::empty({0});
  return torch::cat(out);
}

namespace {

struct LabelledFrames {
  torch::Tensor images;
  torch::Tensor labels;
};

LabelledFrames labelled_frames(const CorpusManifest& manifest, int side) {
  std::vector<FrameRecord> records;
  std::vector<float> labels;
  for (const auto& r : manifest.records) {
    if (r.phase == Phase::UNLABELED) continue;
    records.push_back(r);
    labels.push_back(r.phase == Phase::ARTERIAL ? 1.0f : 0.0f);
  }
  return {load_frames(manifest, records, side), torch::tensor(labels, torch::kFloat32)};
}

torch::Tensor augment(torch::Tensor x, const ClassifierConfig& config, torch::Generator& gen) {
  const auto n = x.size(0);
  const auto side = x.size(-1);
  if (config.random_crop) {
    const int pad = std::max<int>(1, static_cast<int>(side / 16));
    auto padded = F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
    auto offs = torch::randint(0, 2 * pad + 1, {n, 2}, gen, torch::kLong);
    std::vector<torch::Tensor> crops;
    crops.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const auto oy = offs[i][0].item<std::int64_t>();
      const auto ox = offs[i][1].item<std::int64_t>();
      crops.push_back(padded[i].slice(1, oy, oy + side).slice(2, ox, ox + side));
    }
    x = torch::stack(crops);
  }
  if (config.horizontal_flip) {
    auto flip = torch::rand({n}, gen) < 0.5;
    x = torch::where(flip.view({n, 1, 1, 1}), x.flip({3}), x);
  }
  if (config.intensity_jitter) {
    auto gain = 1.0 + (torch::rand({n, 1, 1, 1}, gen) - 0.5) * 0.2;
    auto bias = (torch::rand({n, 1, 1, 1}, gen) - 0.5) * 0.1;
    x = (x * gain + bias).clamp(0.0, 1.0);
  }
  return x;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

std::pair<ClassifierMetrics, ConfusionMatrix> evaluate_classifier(PhaseClassifier& model,
                                                                  const CorpusManifest& manifest) {
  auto data = labelled_frames(manifest, model.config.input_side);
  const auto scores = to_vector(model.predict(data.images));
  const auto labels = to_vector(data.labels);
  const auto cm = confusion_from_scores(scores, labels, model.config.threshold);
  return {metrics_from_confusion(cm, model.config.threshold), cm};
}

ClassifierTrainResult train_classifier(const CorpusManifest& train, const CorpusManifest& val,
                                       const ClassifierConfig& config, std::uint64_t seed,
                                       const ClassifierLog& log) {
  config.validate();
  auto data = labelled_frames(train, config.input_side);
  const auto n_pos = data.labels.sum().item<double>();
  const auto n = static_cast<double>(data.labels.numel());
  if (n_pos == 0.0 || n_pos == n) {
    throw ValidationError("classifier training set must contain both ARTERIAL and NON_ARTERIAL frames");
  }

  torch::manual_seed(derive_seed(seed, "classifier-init"));
  ClassifierTrainResult result;
  result.model = PhaseClassifier{config, PhaseNet(config)};
  auto& net = result.model.net;
  torch::optim::AdamW optim(net->parameters(),
                            torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "classifier-batches"));

  std::vector<std::int64_t> pool;
  {
    std::vector<std::int64_t> pos, neg;
    auto labels = data.labels.accessor<float, 1>();
    for (std::int64_t i = 0; i < labels.size(0); ++i) (labels[i] > 0.5f ? pos : neg).push_back(i);
    pool.insert(pool.end(), pos.begin(), pos.end());
    pool.insert(pool.end(), neg.begin(), neg.end());
    if (config.balance_classes) {
      auto& minority = pos.size() < neg.size() ? pos : neg;
      const auto target = std::max(pos.size(), neg.size());
      for (std::size_t i = minority.size(); i < target; ++i) pool.push_back(minority[i % minority.size()]);
    }
  }
  const auto pool_t = torch::tensor(pool, torch::kLong);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    net->train();
    auto order = pool_t.index_select(0, torch::randperm(pool_t.size(0), gen, torch::kLong));
    double acc = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t i = 0; i < order.size(0); i += config.batch_size) {
      const auto end = std::min<std::int64_t>(order.size(0), i + config.batch_size);
      if (end - i < 2) break;  // batch norm needs two samples
      auto idx = order.slice(0, i, end);
      auto x = augment(data.images.index_select(0, idx), config, gen);
      auto y = data.labels.index_select(0, idx);
      auto loss = bce_loss(torch::sigmoid(net->forward(x)), y);
      optim.zero_grad();
      loss.backward();
      optim.step();
      acc += loss.item<double>() * static_cast<double>(end - i);
      seen += end - i;
    }
    result.epoch_loss.push_back(seen ? acc / static_cast<double>(seen) : 0.0);
    if (log) log(fmt::format("classifier epoch {} loss {:.5f}", epoch, result.epoch_loss.back()));
  }

  auto [metrics, cm] = evaluate_classifier(result.model, val);
  result.metrics = metrics;
  result.confusion = cm;
  return result;
}

std::vector<FrameRecord> select_arterial_frames(std::vector<FrameRecord> records, const SelectionOptions& options) {
  if (options.min_per_series < 0) throw ValidationError("min_per_series must be >= 0");
  std::map<std::string, std::vector<std::size_t>> by_series;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].phase_score) {
      throw ValidationError(fmt::format("frame {}/{} has no phase_score", records[i].series_id,
                                        records[i].frame_index));
    }
    by_series[records[i].series_id].push_back(i);
  }
  for (auto& [series, idx] : by_series) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double sa = *records[a].phase_score, sb = *records[b].phase_score;
      if (sa != sb) return sa > sb;
      return records[a].frame_index < records[b].frame_index;
    });
    for (std::size_t rank = 0; rank < idx.size(); ++rank) {
      auto& r = records[idx[rank]];
      const bool top = static_cast<int>(rank) < options.min_per_series;
      r.phase = (top || *r.phase_score >= options.threshold) ? Phase::ARTERIAL : Phase::NON_ARTERIAL;
    }
  }
  return records;
}

CorpusManifest apply_classifier(PhaseClassifier& model, const CorpusManifest& manifest,
                                const SelectionOptions& options) {
  CorpusManifest out = manifest;
  out.records.clear();
  std::vector<torch::Tensor> frames;
  for (const auto& r : manifest.records) {
    try {
      frames.push_back(load_frame(manifest.resolve(r), model.config.input_side));
      out.records.push_back(r);
    } catch (const std::exception& e) {
      out.warnings.push_back(fmt::format("apply-classifier: skipped {}/{} ({}): {}", r.series_id, r.frame_index,
                                         r.image_path, e.what()));
    }
  }
  if (!frames.empty()) {
    const auto scores = to_vector(model.predict(torch::stack(frames)));
    for (std::size_t i = 0; i < scores.size(); ++i) out.records[i].phase_score = scores[i];
  }
  out.records = select_arterial_frames(std::move(out.records), options);
  out.provenance.push_back({"apply-classifier", "frames", manifest.records.size(), out.records.size(),
                            manifest.records.size() - out.records.size()});
  return out;
}

void save_classifier(const std::filesystem::path& path, const PhaseClassifier& model,
                     const nlohmann::json& metrics) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive net;
  model.net->save(net);
  archive.write("classifier", net);
  write_config_echo(archive, nlohmann::json(model.config).dump());
  archive.write("metrics_json", c10::IValue(metrics.dump()));
  archive.save_to(path.string());
}

PhaseClassifier load_classifier(const std::filesystem::path& path, nlohmann::json* metrics) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw ValidationError(
        fmt::format("cannot load classifier checkpoint {}: {}", path.string(), e.what_without_backtrace()));
  }
  PhaseClassifier model;
  model.config = nlohmann::json::parse(read_config_echo(archive)).get<ClassifierConfig>();
  model.net = PhaseNet(model.config);
  torch::serialize::InputArchive net;
  archive.read("classifier", net);
  model.net->load(net);
  model.net->eval();
  if (metrics) {
    c10::IValue v;
    archive.read("metrics_json", v);
    *metrics = nlohmann::json::parse(v.toStringRef());
  }
  return model;
}

}  // namespace angiodiff
