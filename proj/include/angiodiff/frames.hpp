// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "angiodiff/dataset.hpp"
#include "angiodiff/image.hpp"

namespace angiodiff {

/// Decodes a frame, resizes it to `side` and returns [1, side, side] in [0,1].
torch::Tensor load_frame(const std::filesystem::path& path, int side);

/// Stacks frames into [N, 1, side, side].
torch::Tensor load_frames(const CorpusManifest& manifest, const std::vector<FrameRecord>& records, int side);

torch::Tensor image_to_tensor(const GrayImage& image, int side);
/// [1, H, W] or [H, W] tensor in [0,1] -> 8-bit image (clamped).
GrayImage tensor_to_image(const torch::Tensor& t);

/// Deterministic train/validation split by series id.
struct SeriesSplit {
  std::vector<FrameRecord> train;
  std::vector<FrameRecord> val;
};
SeriesSplit split_by_series(const std::vector<FrameRecord>& records, double val_fraction, std::uint64_t seed);

/// Saves/loads a module plus a JSON config echo and extra tensors in a
/// single archive file.
void write_config_echo(torch::serialize::OutputArchive& archive, const std::string& json_text);
std::string read_config_echo(torch::serialize::InputArchive& archive);

}  // namespace angiodiff
