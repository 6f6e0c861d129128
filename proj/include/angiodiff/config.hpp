// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "angiodiff/classifier.hpp"
#include "angiodiff/diffusion.hpp"
#include "angiodiff/generation.hpp"
#include "angiodiff/phantom.hpp"
#include "angiodiff/study.hpp"
#include "angiodiff/vae.hpp"

namespace angiodiff {

inline constexpr std::array<std::string_view, 7> kPipelineStages = {"phantom", "classifier", "vae", "ldm",
                                                                    "generate", "fid", "study-stats"};

struct PhantomStageConfig {
  int n_series = 200;
  PhantomConfig phantom;
};

struct ClassifierStageConfig {
  ClassifierConfig model;
  double val_fraction = 0.2;
  SelectionOptions selection;
};

struct GenerateStageConfig {
  int per_condition = 10;
  int batches = 10;
  GenerationOptions options;
};

struct FidStageConfig {
  std::string extractor = "filterbank-v1";
  int n_per_condition = 2500;
  bool per_condition = true;
  int reference_size = 5000;
};

struct StudyStageConfig {
  std::vector<std::pair<std::string, RaterRole>> raters = {
      {"NR1", RaterRole::NR}, {"NR2", RaterRole::NR}, {"NS1", RaterRole::NS}, {"IM1", RaterRole::IM}};
  /// Ratings file to summarize; without it the stage only initializes the
  /// study state.
  std::optional<std::string> ratings;
  IccOptions icc;
};

/// Complete, validated run configuration.
struct RunConfig {
  std::string preset = "desk-scale";
  std::uint64_t seed = 20260101;
  std::vector<std::string> stages{kPipelineStages.begin(), kPipelineStages.end()};
  /// Stages declared safe to run concurrently with their predecessor. The
  /// runner records the declaration; execution stays sequential.
  std::vector<std::string> parallel_safe;
  PhantomStageConfig phantom;
  ClassifierStageConfig classifier;
  VaeConfig vae;
  LdmConfig ldm;
  GenerateStageConfig generate;
  FidStageConfig fid;
  StudyStageConfig study;

  void validate() const;
};

std::vector<std::string> preset_names();
/// Throws ValidationError for an unknown name.
RunConfig preset_config(std::string_view name);

/// Makes the diffusion stage conditional (text encoder present) or not.
void set_conditional(LdmConfig& config, bool conditional);

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);
nlohmann::json config_to_json(const RunConfig& config);

/// Resolves a config document: `include` entries (a path or list of paths,
/// relative to `base_dir`) are merged first, in order, then the document's
/// own keys on top. The `preset` key picks the base (default desk-scale)
/// unless `preset_override` is given. Unknown keys are errors.
RunConfig config_from_json(const nlohmann::json& document, const std::filesystem::path& base_dir = {},
                           std::optional<std::string> preset_override = std::nullopt);

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                       std::optional<std::string> preset_override = std::nullopt);
/// Reads a config file; a run manifest is accepted and its config reused.
RunConfig load_config(const std::filesystem::path& path, std::optional<std::string> preset_override = std::nullopt);
/// Canonical text (sorted keys, two-space indent, trailing newline).
std::string serialize_config(const RunConfig& config);
std::string config_hash(const RunConfig& config);

}  // namespace angiodiff
