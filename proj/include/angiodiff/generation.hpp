// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "angiodiff/dataset.hpp"

namespace angiodiff {

struct LatentDiffusionModel;

/// One exported synthetic frame.
struct GeneratedImage {
  std::string file;  // relative to the manifest directory
  int batch = 0;
  int index = 0;
  ConditionSpec condition;
  std::uint64_t seed = 0;
  bool operator==(const GeneratedImage&) const = default;
};

struct GenerationManifest {
  std::vector<GeneratedImage> images;
  std::filesystem::path base_dir;
  std::filesystem::path resolve(const GeneratedImage& g) const { return base_dir / g.file; }
};

/// Per-image seed: run seed -> batch -> condition -> index.
std::uint64_t image_seed(std::uint64_t run_seed, int batch, ConditionId condition, int index);

/// Lays out `batches` x `conditions` x `per_condition` images ordered by
/// (batch, condition, index) with files `<condition>/<batch>/<index>.png`.
std::vector<GeneratedImage> plan_stratified(const std::vector<ConditionSpec>& conditions, int per_condition,
                                            int batches, std::uint64_t seed);

struct GenerationOptions {
  /// Side of the exported PNGs; frames are resized from the model side.
  int export_side = 256;
  /// Images sampled per denoiser pass.
  int chunk_size = 64;
};

/// Samples and writes every planned image plus `manifest.tsv` under out_dir.
GenerationManifest stratified_generate(LatentDiffusionModel& model, const std::vector<ConditionSpec>& conditions,
                                       int per_condition, int batches, std::uint64_t seed,
                                       const std::filesystem::path& out_dir, const GenerationOptions& options = {});

/// Single-batch stratified run of n_per_condition images per condition.
GenerationManifest fid_sampling_run(LatentDiffusionModel& model, const std::vector<ConditionSpec>& conditions,
                                    int n_per_condition, std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const GenerationOptions& options = {});

/// Writes sampled images with explicit seeds (single condition, batch 0).
GenerationManifest generate_images(LatentDiffusionModel& model, const ConditionSpec& condition, int n,
                                   std::uint64_t seed, const std::filesystem::path& out_dir,
                                   const GenerationOptions& options = {});

/// Unconditional sampling: `<i:04d>.png` files plus a `samples.tsv`
/// (file, seed) sidecar. Per-sample seeds are derive_seed(seed, i). Returns
/// the image paths.
std::vector<std::filesystem::path> generate_unconditional(LatentDiffusionModel& model, int n, std::uint64_t seed,
                                                          const std::filesystem::path& out_dir,
                                                          const GenerationOptions& options = {});

std::string serialize_generation_manifest(const GenerationManifest& manifest);
GenerationManifest parse_generation_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
void write_generation_manifest(const std::filesystem::path& path, const GenerationManifest& manifest);
GenerationManifest read_generation_manifest(const std::filesystem::path& path);

/// Canonical ConditionSpecs with rendered prompts, in the order given.
std::vector<ConditionSpec> canonical_conditions(const std::vector<ConditionId>& ids);

}  // namespace angiodiff
