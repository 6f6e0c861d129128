// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "angiodiff/dataset.hpp"
#include "angiodiff/generation.hpp"
#include "angiodiff/image.hpp"

namespace angiodiff {

struct GaussianSummary {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::int64_t n = 0;
  /// True when sigma received the 1e-6 ridge because n <= D.
  bool shrunk = false;
};

inline constexpr double kCovarianceShrinkage = 1e-6;

/// Mean and unbiased covariance of the rows of `features` (n x D), n >= 2.
GaussianSummary summarize_features(const Eigen::MatrixXd& features);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
/// Throws ValidationError on a dimension mismatch and ConditioningError when
/// a covariance is not PSD within tolerance.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

/// Deterministic image -> feature-vector map.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  /// Images are resized to this side before extraction.
  virtual int input_side() const = 0;
  /// Preprocessing description recorded in reports.
  virtual std::string fingerprint() const = 0;
  virtual Eigen::VectorXd extract(const GrayImage& image) const = 0;
};

/// 4-D moments: mean intensity, standard deviation, mean squared forward
/// difference, and darkness-weighted vertical centroid (0.5 when the image
/// has no dark mass). Intensities are in [0,1].
class MomentsExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "moments-v1"; }
  int dim() const override { return 4; }
  int input_side() const override { return 256; }
  std::string fingerprint() const override;
  Eigen::VectorXd extract(const GrayImage& image) const override;
};

/// 48-D filter-bank embedding: intensity, |d/dx|, |d/dy| and |Laplacian|
/// responses at sides 64, 32 and 16, mean-pooled on a 2x2 grid.
class FilterBankExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "filterbank-v1"; }
  int dim() const override { return 48; }
  int input_side() const override { return 64; }
  std::string fingerprint() const override;
  Eigen::VectorXd extract(const GrayImage& image) const override;
};

/// "moments-v1", "filterbank-v1" or "torchscript:<path>" (a module mapping
/// [1,3,S,S] in [0,1] to a feature vector, e.g. an Inception pool3 export).
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

/// Rows follow input order.
Eigen::MatrixXd extract_features(const std::vector<GrayImage>& images, const FeatureExtractor& extractor);

struct FidRow {
  std::string group;  // "overall" or a condition id
  std::int64_t n_real = 0;
  std::int64_t n_synth = 0;
  std::optional<double> fid;
  bool shrunk = false;
  std::string warning;
};

struct FidReport {
  std::string extractor;
  std::string fingerprint;
  std::vector<FidRow> rows;
  std::vector<std::string> warnings;

  std::string to_jsonl() const;
  std::string to_table() const;
};

struct LabelledFeatures {
  Eigen::MatrixXd features;
  std::vector<std::optional<ConditionId>> conditions;
};

/// Overall FID plus, optionally, one row per canonical condition.
FidReport fid_report(const LabelledFeatures& real, const LabelledFeatures& synth, bool per_condition,
                     const FeatureExtractor& extractor);

struct FidOptions {
  bool per_condition = true;
  /// Size of the real reference draw; 0 uses every eligible real frame.
  int reference_size = 5000;
  std::uint64_t seed = 0;
};

/// Draws `n` real records proportionally to `target` condition counts
/// (largest remainder), without replacement, seeded.
std::vector<FrameRecord> stratified_reference(const std::vector<FrameRecord>& real,
                                              const std::array<std::uint64_t, 4>& target, int n,
                                              std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

/// Real reference: ARTERIAL frames in canonical conditions, drawn to match
/// the synthetic set's condition mix.
FidReport fid_report(const CorpusManifest& real, const GenerationManifest& synth, const FeatureExtractor& extractor,
                     const FidOptions& options = {});

}  // namespace angiodiff
