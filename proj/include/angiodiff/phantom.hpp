// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "angiodiff/dataset.hpp"
#include "angiodiff/image.hpp"

namespace angiodiff {

/// Procedural DSA-like vessel phantoms: a branching 2D tree rendered dark on
/// a light background, with a contrast front that fills the tree, holds
/// (arterial phase) and washes out.
struct PhantomConfig {
  int image_side = 128;
  int frames_per_series = 8;
  /// Number of fully opacified frames per series; these carry ARTERIAL.
  int arterial_frames = 2;
  int branch_depth = 4;
  int series_per_study = 2;
  /// Relative weights for AC-A, PC-A, AC-B, PC-B and non-canonical angles.
  std::array<double, 5> condition_mix = {9.6, 0.9, 26.9, 8.0, 54.6};
  /// Fraction of series labelled with a circulation outside AC/PC.
  double other_circulation_fraction = 0.0;
  double noise_sigma = 0.015;

  void validate() const;
};

/// Condition assigned to one phantom series before rendering.
struct SeriesLabel {
  Circulation circulation = Circulation::AC;
  Plane plane = Plane::A;
  bool canonical_angles = true;
};

struct PhantomSeries {
  std::string study_id;
  std::string series_id;
  Circulation circulation = Circulation::AC;
  Plane plane = Plane::A;
  double primary_angle_deg = 0.0;
  double secondary_angle_deg = 0.0;
  std::vector<GrayImage> frames;
  std::vector<Phase> phases;
};

/// Deterministic apportionment of `n_series` over the configured mix
/// (largest remainder), in a seeded shuffled order.
std::vector<SeriesLabel> allocate_series_labels(int n_series, std::uint64_t seed, const PhantomConfig& config);

PhantomSeries render_phantom_series(std::size_t index, std::uint64_t seed, const SeriesLabel& label,
                                    const PhantomConfig& config);

/// Writes `<out_dir>/images/*.png` and `<out_dir>/manifest.tsv`. Image paths
/// in the manifest are relative to `out_dir`.
CorpusManifest generate_phantom_corpus(int n_series, std::uint64_t seed, const PhantomConfig& config,
                                       const std::filesystem::path& out_dir);

}  // namespace angiodiff
