// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "angiodiff/config.hpp"
#include "angiodiff/dataset.hpp"

namespace angiodiff {

inline constexpr int kRunManifestVersion = 1;

/// Fixed artifact locations inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path corpus() const { return root / "phantom" / "manifest.tsv"; }
  std::filesystem::path classifier() const { return root / "classifier" / "classifier.pt"; }
  std::filesystem::path curated() const { return root / "classifier" / "curated_manifest.tsv"; }
  std::filesystem::path vae() const { return root / "vae" / "vae.pt"; }
  std::filesystem::path ldm() const { return root / "ldm" / "ldm.pt"; }
  std::filesystem::path generated() const { return root / "generate" / "manifest.tsv"; }
  std::filesystem::path fid_dir() const { return root / "fid"; }
  std::filesystem::path study_dir() const { return root / "study"; }
  std::filesystem::path manifest() const { return root / "run_manifest.json"; }
};

/// Copy of a manifest whose relative image paths resolve from `new_dir`.
CorpusManifest rebase_manifest(const CorpusManifest& manifest, const std::filesystem::path& new_dir);

/// Checks that every frame of an external manifest decodes to a square
/// 8-bit grayscale image. Frames that fail are dropped with a warning and
/// counted in an "ingest" provenance entry; the result resolves from `out_dir`.
CorpusManifest ingest_manifest(const CorpusManifest& manifest, const std::filesystem::path& out_dir);

/// Versions of the tool and the libraries it was built against.
nlohmann::json build_versions();

using PipelineLog = std::function<void(const std::string&)>;

/// Runs the configured stages in order under `out_dir`, rewriting
/// run_manifest.json after every stage. Stages that are not requested but
/// whose outputs are needed are read from `out_dir`. On a stage failure the
/// manifest is left with status "partial" and the error is rethrown.
nlohmann::json run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir,
                            const PipelineLog& log = {});

}  // namespace angiodiff
