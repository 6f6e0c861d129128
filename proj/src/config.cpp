// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/config.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

namespace {

using nlohmann::json;

RunConfig desk_scale() {
  RunConfig c;
  c.preset = "desk-scale";
  c.phantom.n_series = 240;
  c.phantom.phantom.image_side = 128;
  c.phantom.phantom.frames_per_series = 8;
  c.phantom.phantom.arterial_frames = 2;
  c.phantom.phantom.condition_mix = {20.0, 20.0, 20.0, 20.0, 20.0};

  c.classifier.model.input_side = 128;
  c.classifier.model.base_width = 8;
  c.classifier.model.max_epochs = 6;
  c.classifier.val_fraction = 0.2;

  c.vae.image_side = 64;
  c.vae.latent_side = 16;
  c.vae.latent_channels = 3;
  c.vae.base_channels = 16;
  c.vae.channel_multipliers = {1, 2, 2};
  c.vae.residual_blocks_per_level = 1;
  c.vae.learning_rate = 1e-3;
  c.vae.batch_size = 16;
  c.vae.max_epochs = 20;
  c.vae.early_stop_patience = 4;
  c.vae.max_steps = 450;

  c.ldm.unet.latent_channels = 3;
  c.ldm.unet.latent_side = 16;
  c.ldm.unet.base_channels = 32;
  c.ldm.unet.channel_multipliers = {1, 2, 2};
  c.ldm.unet.residual_blocks_per_level = 1;
  c.ldm.unet.attention_resolutions = {8, 4};
  c.ldm.unet.attention_head_channels = 32;
  c.ldm.unet.context_dim = 128;
  c.ldm.text_encoder = TextEncoderConfig{2, 128, 32, 64};
  // Fewer steps with betas scaled by 1000/T keep the terminal alpha-bar of
  // the long schedule.
  c.ldm.timesteps = 50;
  c.ldm.beta_start = 0.0015 * 20.0;
  c.ldm.beta_end = 0.0195 * 20.0;
  c.ldm.learning_rate = 5e-4;
  c.ldm.batch_size = 32;
  c.ldm.max_epochs = 1000;
  c.ldm.max_steps = 1800;

  c.generate.per_condition = 10;
  c.generate.batches = 10;
  c.fid.n_per_condition = 50;
  c.fid.reference_size = 0;
  return c;
}

RunConfig full_scale() {
  RunConfig c;
  c.preset = "full-scale";
  c.phantom.n_series = 2000;
  c.phantom.phantom.image_side = 256;
  c.generate.per_condition = 10;
  c.generate.batches = 10;
  c.fid.n_per_condition = 2500;
  c.fid.reference_size = 5000;
  return c;
}

/// Objects merge key-wise; everything else (null included) replaces.
void deep_merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      deep_merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

json resolve_includes(const json& document, const std::filesystem::path& base_dir,
                      std::vector<std::filesystem::path>& stack) {
  if (!document.is_object()) throw ValidationError("config document must be a JSON object");
  json merged = json::object();
  if (document.contains("include")) {
    const auto& inc = document.at("include");
    std::vector<std::string> paths;
    if (inc.is_string()) {
      paths.push_back(inc.get<std::string>());
    } else if (inc.is_array() && std::all_of(inc.begin(), inc.end(), [](const json& v) { return v.is_string(); })) {
      paths = inc.get<std::vector<std::string>>();
    } else {
      throw ValidationError("config key 'include' must be a path or a list of paths");
    }
    for (const auto& p : paths) {
      auto path = std::filesystem::path(p);
      if (path.is_relative()) path = base_dir / path;
      path = std::filesystem::weakly_canonical(path);
      if (std::find(stack.begin(), stack.end(), path) != stack.end()) {
        throw ValidationError(fmt::format("config include cycle at {}", path.string()));
      }
      json child;
      try {
        child = json::parse(read_text_file(path));
      } catch (const json::parse_error& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
      }
      stack.push_back(path);
      deep_merge(merged, resolve_includes(child, path.parent_path(), stack));
      stack.pop_back();
    }
  }
  json own = document;
  own.erase("include");
  deep_merge(merged, own);
  return merged;
}

/// Every key of `doc` must exist in `schema` (which has all optional
/// sections populated).
void check_keys(const json& doc, const json& schema, const std::string& prefix) {
  for (const auto& [key, value] : doc.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ValidationError(fmt::format("unknown config key '{}'", path));
    if (value.is_object() && schema[key].is_object()) check_keys(value, schema[key], path);
  }
}

json schema_template() {
  auto c = full_scale();
  c.study.ratings = "";
  auto j = config_to_json(c);
  return j;
}

template <class T>
T get_field(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("config '{}.{}': {}", section, key, e.what()));
  }
}

}  // namespace

void RunConfig::validate() const {
  std::set<std::string> seen;
  for (const auto& s : stages) {
    if (std::find(kPipelineStages.begin(), kPipelineStages.end(), s) == kPipelineStages.end()) {
      throw ValidationError(fmt::format("unknown stage '{}'", s));
    }
    if (!seen.insert(s).second) throw ValidationError(fmt::format("stage '{}' listed twice", s));
  }
  for (const auto& s : parallel_safe) {
    if (std::find(kPipelineStages.begin(), kPipelineStages.end(), s) == kPipelineStages.end()) {
      throw ValidationError(fmt::format("unknown stage '{}' in parallel_safe", s));
    }
  }
  if (phantom.n_series < 1) throw ValidationError("phantom.n_series must be positive");
  phantom.phantom.validate();
  classifier.model.validate();
  if (!(classifier.val_fraction > 0.0 && classifier.val_fraction < 1.0)) {
    throw ValidationError("classifier.val_fraction must lie in (0,1)");
  }
  if (!(classifier.selection.threshold >= 0.0 && classifier.selection.threshold <= 1.0)) {
    throw ValidationError("classifier.selection.threshold must lie in [0,1]");
  }
  if (classifier.selection.min_per_series < 0) throw ValidationError("classifier.selection.min_per_series < 0");
  vae.validate();
  ldm.validate();
  if (ldm.unet.latent_side != vae.latent_side || ldm.unet.latent_channels != vae.latent_channels) {
    throw ValidationError("ldm.unet latent shape must match the vae latent shape");
  }
  if (generate.per_condition < 1 || generate.batches < 1) throw ValidationError("generate counts must be positive");
  if (generate.options.export_side < 1 || generate.options.chunk_size < 1) {
    throw ValidationError("generate.export_side and chunk_size must be positive");
  }
  if (fid.n_per_condition < 1) throw ValidationError("fid.n_per_condition must be positive");
  if (fid.reference_size < 0) throw ValidationError("fid.reference_size must be >= 0");
  std::set<std::string> ids;
  for (const auto& [id, role] : study.raters) {
    if (id.empty() || !ids.insert(id).second) throw ValidationError("study.raters ids must be unique and non-empty");
  }
}

std::vector<std::string> preset_names() { return {"desk-scale", "full-scale"}; }

RunConfig preset_config(std::string_view name) {
  if (name == "desk-scale") return desk_scale();
  if (name == "full-scale") return full_scale();
  throw ValidationError(fmt::format("unknown preset '{}' (expected desk-scale or full-scale)", name));
}

void set_conditional(LdmConfig& config, bool conditional) {
  if (conditional) {
    if (!config.text_encoder) config.text_encoder = TextEncoderConfig{};
    config.unet.context_dim = config.text_encoder->embedding_dim;
  } else {
    config.text_encoder.reset();
    config.unet.context_dim.reset();
  }
}

void to_json(json& j, const PhantomConfig& c) {
  j = json{{"image_side", c.image_side},
           {"frames_per_series", c.frames_per_series},
           {"arterial_frames", c.arterial_frames},
           {"branch_depth", c.branch_depth},
           {"series_per_study", c.series_per_study},
           {"condition_mix", c.condition_mix},
           {"other_circulation_fraction", c.other_circulation_fraction},
           {"noise_sigma", c.noise_sigma}};
}

void from_json(const json& j, PhantomConfig& c) {
  c.image_side = j.at("image_side").get<int>();
  c.frames_per_series = j.at("frames_per_series").get<int>();
  c.arterial_frames = j.at("arterial_frames").get<int>();
  c.branch_depth = j.at("branch_depth").get<int>();
  c.series_per_study = j.at("series_per_study").get<int>();
  c.condition_mix = j.at("condition_mix").get<std::array<double, 5>>();
  c.other_circulation_fraction = j.at("other_circulation_fraction").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
}

json config_to_json(const RunConfig& c) {
  json raters = json::array();
  for (const auto& [id, role] : c.study.raters) raters.push_back({{"id", id}, {"role", to_string(role)}});
  return json{
      {"preset", c.preset},
      {"seed", c.seed},
      {"stages", c.stages},
      {"parallel_safe", c.parallel_safe},
      {"phantom", {{"n_series", c.phantom.n_series}, {"config", c.phantom.phantom}}},
      {"classifier",
       {{"model", c.classifier.model},
        {"val_fraction", c.classifier.val_fraction},
        {"selection",
         {{"threshold", c.classifier.selection.threshold},
          {"min_per_series", c.classifier.selection.min_per_series}}}}},
      {"vae", c.vae},
      {"ldm", c.ldm},
      {"generate",
       {{"per_condition", c.generate.per_condition},
        {"batches", c.generate.batches},
        {"export_side", c.generate.options.export_side},
        {"chunk_size", c.generate.options.chunk_size}}},
      {"fid",
       {{"extractor", c.fid.extractor},
        {"n_per_condition", c.fid.n_per_condition},
        {"per_condition", c.fid.per_condition},
        {"reference_size", c.fid.reference_size}}},
      {"study",
       {{"raters", raters},
        {"ratings", c.study.ratings ? json(*c.study.ratings) : json(nullptr)},
        {"icc_missing", to_string(c.study.icc.missing)},
        {"icc_overall_unit", to_string(c.study.icc.overall_unit)}}},
  };
}

RunConfig config_from_json(const json& document, const std::filesystem::path& base_dir,
                           std::optional<std::string> preset_override) {
  std::vector<std::filesystem::path> stack;
  const json resolved = resolve_includes(document, base_dir, stack);
  check_keys(resolved, schema_template(), "");

  std::string preset = "desk-scale";
  if (resolved.contains("preset")) preset = get_field<std::string>(resolved, "preset", "");
  if (preset_override) preset = *preset_override;
  json merged = config_to_json(preset_config(preset));
  deep_merge(merged, resolved);
  merged["preset"] = preset;

  RunConfig c;
  c.preset = preset;
  c.seed = get_field<std::uint64_t>(merged, "seed", "");
  c.stages = get_field<std::vector<std::string>>(merged, "stages", "");
  c.parallel_safe = get_field<std::vector<std::string>>(merged, "parallel_safe", "");
  const auto& ph = merged.at("phantom");
  c.phantom.n_series = get_field<int>(ph, "n_series", "phantom");
  c.phantom.phantom = get_field<PhantomConfig>(ph, "config", "phantom");
  const auto& cl = merged.at("classifier");
  c.classifier.model = get_field<ClassifierConfig>(cl, "model", "classifier");
  c.classifier.val_fraction = get_field<double>(cl, "val_fraction", "classifier");
  c.classifier.selection.threshold = get_field<double>(cl.at("selection"), "threshold", "classifier.selection");
  c.classifier.selection.min_per_series = get_field<int>(cl.at("selection"), "min_per_series", "classifier.selection");
  c.vae = get_field<VaeConfig>(merged, "vae", "");
  c.ldm = get_field<LdmConfig>(merged, "ldm", "");
  const auto& g = merged.at("generate");
  c.generate.per_condition = get_field<int>(g, "per_condition", "generate");
  c.generate.batches = get_field<int>(g, "batches", "generate");
  c.generate.options.export_side = get_field<int>(g, "export_side", "generate");
  c.generate.options.chunk_size = get_field<int>(g, "chunk_size", "generate");
  const auto& f = merged.at("fid");
  c.fid.extractor = get_field<std::string>(f, "extractor", "fid");
  c.fid.n_per_condition = get_field<int>(f, "n_per_condition", "fid");
  c.fid.per_condition = get_field<bool>(f, "per_condition", "fid");
  c.fid.reference_size = get_field<int>(f, "reference_size", "fid");
  const auto& s = merged.at("study");
  c.study.raters.clear();
  for (const auto& r : s.at("raters")) {
    c.study.raters.emplace_back(get_field<std::string>(r, "id", "study.raters"),
                                parse_rater_role(get_field<std::string>(r, "role", "study.raters")));
  }
  if (!s.at("ratings").is_null()) c.study.ratings = get_field<std::string>(s, "ratings", "study");
  c.study.icc.missing = parse_icc_missing(get_field<std::string>(s, "icc_missing", "study"));
  c.study.icc.overall_unit = parse_icc_overall_unit(get_field<std::string>(s, "icc_overall_unit", "study"));
  c.validate();
  return c;
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       std::optional<std::string> preset_override) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  return config_from_json(doc, base_dir, std::move(preset_override));
}

RunConfig load_config(const std::filesystem::path& path, std::optional<std::string> preset_override) {
  if (!std::filesystem::exists(path)) throw ValidationError(fmt::format("config file not found: {}", path.string()));
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (doc.is_object() && doc.contains("run_manifest_version") && doc.contains("config")) doc = doc.at("config");
  return config_from_json(doc, path.parent_path(), std::move(preset_override));
}

std::string serialize_config(const RunConfig& config) { return config_to_json(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) { return sha256_hex(config_to_json(config).dump()); }

}  // namespace angiodiff
