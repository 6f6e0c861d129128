// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/generation.hpp"

#include <charconv>

#include <fmt/format.h>

#include "angiodiff/common.hpp"
#include "angiodiff/diffusion.hpp"
#include "angiodiff/frames.hpp"
#include "angiodiff/image.hpp"
#include "angiodiff/prompt.hpp"

namespace angiodiff {

namespace {

constexpr std::string_view kHeader =
    "#file\tbatch\tindex\tcondition\tcirculation\tplane\tprimary_angle_deg\tsecondary_angle_deg\tseed\tprompt";

template <class T>
T parse_number(std::string_view s, std::string_view field) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(fmt::format("generation manifest: bad {} '{}'", field, s));
  }
  return value;
}

ConditionSpec with_prompt(ConditionSpec spec) {
  if (spec.circulation == Circulation::OTHER) throw ValidationError("generation needs AC or PC conditions");
  if (spec.prompt.empty()) spec.prompt = render_prompt(spec);
  return spec;
}

void export_images(LatentDiffusionModel& model, GenerationManifest& manifest, const GenerationOptions& options) {
  if (!model.conditional()) {
    throw ValidationError("conditioned generation needs a conditional checkpoint (this one is unconditional)");
  }
  if (options.export_side < 1 || options.chunk_size < 1) throw ValidationError("invalid generation options");
  SamplerOptions sampler;
  sampler.variance = model.config.variance;
  sampler.batch_size = options.chunk_size;
  const auto& images = manifest.images;
  for (std::size_t begin = 0; begin < images.size(); begin += static_cast<std::size_t>(options.chunk_size)) {
    const auto end = std::min(images.size(), begin + static_cast<std::size_t>(options.chunk_size));
    std::vector<std::string> prompts;
    std::vector<std::uint64_t> seeds;
    for (auto i = begin; i < end; ++i) {
      prompts.push_back(images[i].condition.prompt);
      seeds.push_back(images[i].seed);
    }
    auto frames = model.generate(prompts, seeds, sampler);
    for (auto i = begin; i < end; ++i) {
      auto img = tensor_to_image(frames[static_cast<std::int64_t>(i - begin)]);
      if (img.width != options.export_side) img = resize_bilinear(img, options.export_side, options.export_side);
      write_png(manifest.resolve(images[i]), img);
    }
  }
  write_generation_manifest(manifest.base_dir / "manifest.tsv", manifest);
}

}  // namespace

std::uint64_t image_seed(std::uint64_t run_seed, int batch, ConditionId condition, int index) {
  const auto b = derive_seed(derive_seed(run_seed, "batch"), static_cast<std::uint64_t>(batch));
  return derive_seed(derive_seed(b, to_string(condition)), static_cast<std::uint64_t>(index));
}

std::vector<ConditionSpec> canonical_conditions(const std::vector<ConditionId>& ids) {
  std::vector<ConditionSpec> out;
  for (auto id : ids) out.push_back(canonical_condition(id));
  return out;
}

std::vector<GeneratedImage> plan_stratified(const std::vector<ConditionSpec>& conditions, int per_condition,
                                            int batches, std::uint64_t seed) {
  if (conditions.empty()) throw ValidationError("stratified generation needs at least one condition");
  if (per_condition < 1 || batches < 1) throw ValidationError("per_condition and batches must be >= 1");
  std::vector<GeneratedImage> plan;
  plan.reserve(conditions.size() * static_cast<std::size_t>(per_condition * batches));
  for (int b = 0; b < batches; ++b) {
    for (const auto& raw : conditions) {
      const auto spec = with_prompt(raw);
      for (int i = 0; i < per_condition; ++i) {
        GeneratedImage g;
        g.file = fmt::format("{}/{:02d}/{:03d}.png", to_string(spec.id()), b, i);
        g.batch = b;
        g.index = i;
        g.condition = spec;
        g.seed = image_seed(seed, b, spec.id(), i);
        plan.push_back(std::move(g));
      }
    }
  }
  return plan;
}

GenerationManifest stratified_generate(LatentDiffusionModel& model, const std::vector<ConditionSpec>& conditions,
                                       int per_condition, int batches, std::uint64_t seed,
                                       const std::filesystem::path& out_dir, const GenerationOptions& options) {
  GenerationManifest manifest{plan_stratified(conditions, per_condition, batches, seed), out_dir};
  export_images(model, manifest, options);
  return manifest;
}

GenerationManifest fid_sampling_run(LatentDiffusionModel& model, const std::vector<ConditionSpec>& conditions,
                                    int n_per_condition, std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const GenerationOptions& options) {
  return stratified_generate(model, conditions, n_per_condition, 1, seed, out_dir, options);
}

GenerationManifest generate_images(LatentDiffusionModel& model, const ConditionSpec& condition, int n,
                                   std::uint64_t seed, const std::filesystem::path& out_dir,
                                   const GenerationOptions& options) {
  if (n < 1) throw ValidationError("sample count must be >= 1");
  GenerationManifest manifest{{}, out_dir};
  const auto spec = with_prompt(condition);
  for (int i = 0; i < n; ++i) {
    GeneratedImage g;
    g.file = fmt::format("{:04d}.png", i);
    g.index = i;
    g.condition = spec;
    g.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    manifest.images.push_back(std::move(g));
  }
  export_images(model, manifest, options);
  return manifest;
}

std::vector<std::filesystem::path> generate_unconditional(LatentDiffusionModel& model, int n, std::uint64_t seed,
                                                          const std::filesystem::path& out_dir,
                                                          const GenerationOptions& options) {
  if (model.conditional()) throw ValidationError("this checkpoint is conditional; pass a condition");
  if (n < 1) throw ValidationError("sample count must be >= 1");
  if (options.export_side < 1 || options.chunk_size < 1) throw ValidationError("invalid generation options");
  SamplerOptions sampler;
  sampler.variance = model.config.variance;
  sampler.batch_size = options.chunk_size;
  std::vector<std::filesystem::path> files;
  std::string sidecar = "#file\tseed\n";
  for (int begin = 0; begin < n; begin += options.chunk_size) {
    const int end = std::min(n, begin + options.chunk_size);
    std::vector<std::uint64_t> seeds;
    for (int i = begin; i < end; ++i) seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
    auto frames = model.generate({}, seeds, sampler);
    for (int i = begin; i < end; ++i) {
      auto img = tensor_to_image(frames[i - begin]);
      if (img.width != options.export_side) img = resize_bilinear(img, options.export_side, options.export_side);
      const auto name = fmt::format("{:04d}.png", i);
      write_png(out_dir / name, img);
      files.push_back(out_dir / name);
      sidecar += fmt::format("{}\t{}\n", name, seeds[static_cast<std::size_t>(i - begin)]);
    }
  }
  write_text_file(out_dir / "samples.tsv", sidecar);
  return files;
}

std::string serialize_generation_manifest(const GenerationManifest& manifest) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& g : manifest.images) {
    const auto& c = g.condition;
    if (c.prompt.find_first_of("\t\n") != std::string::npos) {
      throw ValidationError("prompt contains a tab or newline");
    }
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", g.file, g.batch, g.index, to_string(c.id()),
                       to_string(c.circulation), to_string(c.plane), c.primary_angle_deg, c.secondary_angle_deg,
                       g.seed, c.prompt);
  }
  return out;
}

GenerationManifest parse_generation_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  GenerationManifest manifest{{}, base_dir};
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 10) {
      throw ValidationError(fmt::format("generation manifest line {}: expected 10 fields, got {}", line_no, f.size()));
    }
    GeneratedImage g;
    g.file = f[0];
    g.batch = parse_number<int>(f[1], "batch");
    g.index = parse_number<int>(f[2], "index");
    g.condition.circulation = parse_circulation(f[4]);
    g.condition.plane = parse_plane(f[5]);
    g.condition.primary_angle_deg = parse_number<double>(f[6], "primary_angle_deg");
    g.condition.secondary_angle_deg = parse_number<double>(f[7], "secondary_angle_deg");
    g.seed = parse_number<std::uint64_t>(f[8], "seed");
    g.condition.prompt = f[9];
    if (to_string(g.condition.id()) != f[3]) {
      throw ValidationError(fmt::format("generation manifest line {}: condition '{}' disagrees with fields",
                                        line_no, f[3]));
    }
    manifest.images.push_back(std::move(g));
  }
  return manifest;
}

void write_generation_manifest(const std::filesystem::path& path, const GenerationManifest& manifest) {
  write_text_file(path, serialize_generation_manifest(manifest));
}

GenerationManifest read_generation_manifest(const std::filesystem::path& path) {
  return parse_generation_manifest(read_text_file(path), path.parent_path());
}

}  // namespace angiodiff
