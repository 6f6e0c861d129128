// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "angiodiff/dataset.hpp"

namespace angiodiff {

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
double bce_loss(std::span<const double> predictions, std::span<const double> labels);
torch::Tensor bce_loss(const torch::Tensor& predictions, const torch::Tensor& labels);

struct ClassifierConfig {
  int input_side = 128;
  /// resnet10, resnet18 or resnet34 (basic-block residual nets).
  std::string architecture = "resnet18";
  int base_width = 64;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int max_epochs = 20;
  bool random_crop = true;
  bool horizontal_flip = true;
  bool intensity_jitter = true;
  /// Oversample the minority class so each epoch sees both classes equally.
  bool balance_classes = true;
  double threshold = 0.5;

  void validate() const;
  std::vector<int> blocks_per_stage() const;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassifierMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double threshold = 0.5;
  bool operator==(const ClassifierMetrics&) const = default;
};

ConfusionMatrix confusion_from_scores(std::span<const double> scores, std::span<const double> labels,
                                      double threshold);
/// Precision or recall with an empty denominator is reported as 0.
ClassifierMetrics metrics_from_confusion(const ConfusionMatrix& cm, double threshold);

void to_json(nlohmann::json& j, const ConfusionMatrix& c);
void from_json(const nlohmann::json& j, ConfusionMatrix& c);
void to_json(nlohmann::json& j, const ClassifierMetrics& m);

struct BasicBlockImpl : torch::nn::Module {
  BasicBlockImpl(int in_channels, int out_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(BasicBlock);

/// Residual net with a single logit output.
struct PhaseNetImpl : torch::nn::Module {
  explicit PhaseNetImpl(const ClassifierConfig& config);
  /// x [N,1,S,S] in [0,1] -> logits [N].
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential stem{nullptr};
  torch::nn::Sequential stages{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(PhaseNet);

struct PhaseClassifier {
  ClassifierConfig config;
  PhaseNet net{nullptr};

  /// Arterial probabilities for [N,1,S,S] frames, evaluated in eval mode.
  torch::Tensor predict(const torch::Tensor& frames, int batch_size = 64);
};

struct ClassifierTrainResult {
  PhaseClassifier model;
  ClassifierMetrics metrics;
  ConfusionMatrix confusion;
  std::vector<double> epoch_loss;
};

using ClassifierLog = std::function<void(const std::string&)>;

/// Trains on the labelled (ARTERIAL / NON_ARTERIAL) frames of `train` and
/// evaluates on those of `val` at the configured threshold.
ClassifierTrainResult train_classifier(const CorpusManifest& train, const CorpusManifest& val,
                                       const ClassifierConfig& config, std::uint64_t seed,
                                       const ClassifierLog& log = {});

/// Evaluates a classifier on the labelled frames of a manifest.
std::pair<ClassifierMetrics, ConfusionMatrix> evaluate_classifier(PhaseClassifier& model,
                                                                  const CorpusManifest& manifest);

struct SelectionOptions {
  double threshold = 0.5;
  /// Frames guaranteed per series even when none reaches the threshold.
  int min_per_series = 1;
};

/// Marks frames ARTERIAL when their score reaches the threshold, plus the
/// best `min_per_series` frames of each series (ties -> lowest frame_index).
/// Every record must carry a phase_score.
std::vector<FrameRecord> select_arterial_frames(std::vector<FrameRecord> records, const SelectionOptions& options);

/// Scores every frame and applies select_arterial_frames. Unreadable frames
/// are dropped with a warning and counted in the provenance trail.
CorpusManifest apply_classifier(PhaseClassifier& model, const CorpusManifest& manifest,
                                const SelectionOptions& options = {});

void save_classifier(const std::filesystem::path& path, const PhaseClassifier& model,
                     const nlohmann::json& metrics = nullptr);
PhaseClassifier load_classifier(const std::filesystem::path& path, nlohmann::json* metrics = nullptr);

}  // namespace angiodiff
