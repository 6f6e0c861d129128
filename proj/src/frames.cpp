// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/frames.hpp"

#include <algorithm>
#include <map>

#include "angiodiff/common.hpp"

namespace angiodiff {

torch::Tensor image_to_tensor(const GrayImage& image, int side) {
  if (!image.square()) throw ValidationError("frame is not square");
  auto unit = to_unit(image);
  if (image.width != side) unit = resize_bilinear(unit, image.width, image.height, side, side);
  return torch::from_blob(unit.data(), {1, side, side}, torch::kFloat32).clone();
}

torch::Tensor load_frame(const std::filesystem::path& path, int side) { return image_to_tensor(read_png(path), side); }

torch::Tensor load_frames(const CorpusManifest& manifest, const std::vector<FrameRecord>& records, int side) {
  if (records.empty()) return torch::empty({0, 1, side, side});
  std::vector<torch::Tensor> frames;
  frames.reserve(records.size());
  for (const auto& r : records) frames.push_back(load_frame(manifest.resolve(r), side));
  return torch::stack(frames);
}

GrayImage tensor_to_image(const torch::Tensor& t) {
  auto img = t.detach().to(torch::kFloat32).contiguous();
  if (img.dim() == 3) img = img.squeeze(0);
  if (img.dim() != 2) throw ValidationError("expected a single-channel image tensor");
  const auto h = static_cast<int>(img.size(0));
  const auto w = static_cast<int>(img.size(1));
  return from_unit(std::span<const float>(img.data_ptr<float>(), static_cast<std::size_t>(h) * w), w, h);
}

SeriesSplit split_by_series(const std::vector<FrameRecord>& records, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must be in [0,1)");
  std::vector<std::string> series;
  for (const auto& r : records) series.push_back(r.study_id + "/" + r.series_id);
  std::sort(series.begin(), series.end());
  series.erase(std::unique(series.begin(), series.end()), series.end());
  // Rank series by a seeded hash so the split is stable and unbiased.
  std::vector<std::pair<std::uint64_t, std::string>> ranked;
  for (const auto& s : series) ranked.emplace_back(derive_seed(seed, s), s);
  std::sort(ranked.begin(), ranked.end());
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(series.size())));
  std::map<std::string, bool> is_val;
  for (std::size_t i = 0; i < ranked.size(); ++i) is_val[ranked[i].second] = i < n_val;

  SeriesSplit split;
  for (const auto& r : records) {
    (is_val[r.study_id + "/" + r.series_id] ? split.val : split.train).push_back(r);
  }
  return split;
}

void write_config_echo(torch::serialize::OutputArchive& archive, const std::string& json_text) {
  archive.write("config_json", c10::IValue(json_text));
}

std::string read_config_echo(torch::serialize::InputArchive& archive) {
  c10::IValue value;
  archive.read("config_json", value);
  return value.toStringRef();
}

}  // namespace angiodiff
