// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <set>

#include <Eigen/Core>
#include <fmt/format.h>
#include <torch/version.h>

#include "angiodiff/classifier.hpp"
#include "angiodiff/common.hpp"
#include "angiodiff/diffusion.hpp"
#include "angiodiff/fid.hpp"
#include "angiodiff/frames.hpp"
#include "angiodiff/generation.hpp"
#include "angiodiff/image.hpp"
#include "angiodiff/phantom.hpp"
#include "angiodiff/plots.hpp"
#include "angiodiff/rating_service.hpp"
#include "angiodiff/study.hpp"
#include "angiodiff/vae.hpp"
#include "angiodiff/version.hpp"

namespace angiodiff {

namespace fs = std::filesystem;
using nlohmann::json;

CorpusManifest rebase_manifest(const CorpusManifest& manifest, const fs::path& new_dir) {
  CorpusManifest out = manifest;
  out.base_dir = new_dir;
  for (auto& r : out.records) {
    const fs::path p(r.image_path);
    if (p.is_absolute()) continue;
    r.image_path = fs::relative(fs::absolute(manifest.resolve(r)), fs::absolute(new_dir)).generic_string();
  }
  return out;
}

CorpusManifest ingest_manifest(const CorpusManifest& manifest, const fs::path& out_dir) {
  CorpusManifest checked = manifest;
  checked.records.clear();
  for (const auto& r : manifest.records) {
    try {
      const auto img = read_png(manifest.resolve(r));
      if (!img.square()) throw ValidationError("image is not square");
      checked.records.push_back(r);
    } catch (const ValidationError& e) {
      checked.warnings.push_back(fmt::format("{}/{} frame {}: {}", r.study_id, r.series_id, r.frame_index, e.what()));
    }
  }
  checked.provenance.push_back({"ingest", "frames", manifest.records.size(), checked.records.size(),
                                manifest.records.size() - checked.records.size()});
  return rebase_manifest(checked, out_dir);
}

json build_versions() {
  return json{{"angiodiff", kVersion},
              {"torch", TORCH_VERSION},
              {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__}};
}

namespace {

struct StageOutput {
  std::vector<fs::path> artifacts;
  json details = json::object();
};

class Runner {
 public:
  Runner(const RunConfig& config, const fs::path& out_dir, const PipelineLog& log)
      : config_(config), layout_{out_dir}, log_(log) {}

  json run() {
    fs::create_directories(layout_.root);
    write_text_file(layout_.root / "run_config.json", serialize_config(config_));
    manifest_ = json{{"run_manifest_version", kRunManifestVersion},
                     {"versions", build_versions()},
                     {"seed", config_.seed},
                     {"preset", config_.preset},
                     {"config_sha256", config_hash(config_)},
                     {"config", config_to_json(config_)},
                     {"started", iso8601_now()},
                     {"status", "running"},
                     {"stages", json::array()}};
    for (const auto stage : kPipelineStages) {
      const std::string name(stage);
      if (std::find(config_.stages.begin(), config_.stages.end(), name) == config_.stages.end()) continue;
      run_stage(name);
    }
    manifest_["status"] = "complete";
    manifest_["finished"] = iso8601_now();
    flush();
    return manifest_;
  }

 private:
  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  void flush() { write_text_file(layout_.manifest(), manifest_.dump(2) + "\n"); }

  void run_stage(const std::string& name) {
    const auto seed = derive_seed(config_.seed, name);
    json entry{{"name", name},
               {"seed", seed},
               {"status", "running"},
               {"parallel_safe", std::find(config_.parallel_safe.begin(), config_.parallel_safe.end(), name) !=
                                     config_.parallel_safe.end()}};
    manifest_["stages"].push_back(entry);
    flush();
    say(fmt::format("[{}] start", name));
    const auto t0 = std::chrono::steady_clock::now();
    auto& slot = manifest_["stages"].back();
    try {
      StageOutput out = dispatch(name, seed);
      slot["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      json artifacts = json::array();
      for (const auto& p : out.artifacts) {
        artifacts.push_back({{"path", fs::relative(p, layout_.root).generic_string()}, {"sha256", sha256_file(p)}});
      }
      slot["artifacts"] = artifacts;
      slot["details"] = out.details;
      slot["status"] = "ok";
      flush();
      say(fmt::format("[{}] done in {:.1f} s", name, slot["seconds"].get<double>()));
    } catch (const std::exception& e) {
      slot["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      slot["status"] = "failed";
      slot["error"] = e.what();
      manifest_["status"] = "partial";
      manifest_["finished"] = iso8601_now();
      flush();
      throw;
    }
  }

  StageOutput dispatch(const std::string& name, std::uint64_t seed) {
    if (name == "phantom") return phantom(seed);
    if (name == "classifier") return classifier(seed);
    if (name == "vae") return vae(seed);
    if (name == "ldm") return ldm(seed);
    if (name == "generate") return generate(seed);
    if (name == "fid") return fid(seed);
    return study();
  }

  static void require(const fs::path& p, const char* producer) {
    if (!fs::exists(p)) {
      throw ValidationError(fmt::format("missing {} (produced by stage '{}')", p.string(), producer));
    }
  }

  const CorpusManifest& corpus() {
    if (!corpus_) {
      require(layout_.corpus(), "phantom");
      corpus_ = read_manifest(layout_.corpus());
    }
    return *corpus_;
  }

  const CorpusManifest& curated() {
    if (!curated_) {
      require(layout_.curated(), "classifier");
      curated_ = read_manifest(layout_.curated());
    }
    return *curated_;
  }

  const VaeModel& vae_model() {
    if (!vae_) {
      require(layout_.vae(), "vae");
      vae_ = load_vae(layout_.vae());
    }
    return *vae_;
  }

  LatentDiffusionModel& ldm_model() {
    if (!ldm_) {
      require(layout_.ldm(), "ldm");
      ldm_ = load_ldm(layout_.ldm());
    }
    return *ldm_;
  }

  StageOutput phantom(std::uint64_t seed) {
    const auto dir = layout_.corpus().parent_path();
    corpus_ = generate_phantom_corpus(config_.phantom.n_series, seed, config_.phantom.phantom, dir);
    StageOutput out;
    for (const auto& r : corpus_->records) out.artifacts.push_back(corpus_->resolve(r));
    out.artifacts.push_back(layout_.corpus());
    out.details = {{"series", corpus_->series_count()}, {"frames", corpus_->records.size()}};
    return out;
  }

  StageOutput classifier(std::uint64_t seed) {
    const auto filtered = filter_series(corpus());
    const auto split = split_by_series(filtered.records, config_.classifier.val_fraction, seed);
    CorpusManifest train = filtered, val = filtered;
    train.records = split.train;
    val.records = split.val;
    auto result = train_classifier(train, val, config_.classifier.model, derive_seed(seed, "train"), log_);
    const json metrics{{"validation", result.metrics}, {"confusion", result.confusion}};
    save_classifier(layout_.classifier(), result.model, metrics);

    auto scored = apply_classifier(result.model, filtered, config_.classifier.selection);
    // Frame-level recall of the selection against the phantom ground truth.
    std::set<std::pair<std::string, std::uint32_t>> selected;
    for (const auto& r : scored.records) {
      if (r.phase == Phase::ARTERIAL) selected.emplace(r.series_id, r.frame_index);
    }
    std::uint64_t truth = 0, hit = 0;
    for (const auto& r : filtered.records) {
      if (r.phase != Phase::ARTERIAL) continue;
      ++truth;
      hit += selected.count({r.series_id, r.frame_index});
    }
    curated_ = rebase_manifest(arterial_frames(scored), layout_.curated().parent_path());
    write_manifest(layout_.curated(), *curated_);
    StageOutput out;
    out.artifacts = {layout_.classifier(), layout_.curated()};
    out.details = metrics;
    out.details["selection_recall"] = truth ? static_cast<double>(hit) / static_cast<double>(truth) : 0.0;
    out.details["curated_frames"] = curated_->records.size();
    return out;
  }

  StageOutput vae(std::uint64_t seed) {
    auto result = train_vae(curated(), config_.vae, seed, log_);
    save_vae(layout_.vae(), result.model);
    vae_ = std::move(result.model);
    StageOutput out;
    out.artifacts = {layout_.vae()};
    out.details = {{"best_epoch", result.best_epoch},
                   {"val_epoch_loss", result.val_epoch_loss},
                   {"latent_scale", vae_->latent_scale},
                   {"warnings", result.warnings}};
    return out;
  }

  StageOutput ldm(std::uint64_t seed) {
    auto result = train_ldm(curated(), vae_model(), config_.ldm, seed, log_);
    save_ldm(layout_.ldm(), *result.model);
    ldm_ = std::move(result.model);
    StageOutput out;
    out.artifacts = {layout_.ldm()};
    out.details = {{"steps", result.steps}, {"epoch_loss", result.epoch_loss}};
    return out;
  }

  StageOutput generate(std::uint64_t seed) {
    const auto conds = canonical_conditions({kCanonicalConditions.begin(), kCanonicalConditions.end()});
    const auto manifest = stratified_generate(ldm_model(), conds, config_.generate.per_condition,
                                              config_.generate.batches, seed, layout_.generated().parent_path(),
                                              config_.generate.options);
    StageOutput out;
    for (const auto& g : manifest.images) out.artifacts.push_back(manifest.resolve(g));
    out.artifacts.push_back(layout_.generated());
    out.details = {{"images", manifest.images.size()}};
    return out;
  }

  StageOutput fid(std::uint64_t seed) {
    const auto conds = canonical_conditions({kCanonicalConditions.begin(), kCanonicalConditions.end()});
    const auto samples = fid_sampling_run(ldm_model(), conds, config_.fid.n_per_condition, derive_seed(seed, "sample"),
                                          layout_.fid_dir() / "samples", config_.generate.options);
    const auto extractor = make_extractor(config_.fid.extractor);
    FidOptions options;
    options.per_condition = config_.fid.per_condition;
    options.reference_size = config_.fid.reference_size;
    options.seed = derive_seed(seed, "reference");
    const auto report = fid_report(curated(), samples, *extractor, options);
    const auto jsonl = layout_.fid_dir() / "fid.jsonl";
    const auto table = layout_.fid_dir() / "fid.md";
    write_text_file(jsonl, report.to_jsonl());
    write_text_file(table, report.to_table());
    StageOutput out;
    for (const auto& g : samples.images) out.artifacts.push_back(samples.resolve(g));
    out.artifacts.push_back(layout_.fid_dir() / "samples" / "manifest.tsv");
    out.artifacts.push_back(jsonl);
    out.artifacts.push_back(table);
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back({{"group", r.group}, {"fid", r.fid ? json(*r.fid) : json()}});
    out.details = {{"extractor", report.extractor}, {"rows", rows}};
    return out;
  }

  StageOutput study() {
    require(layout_.generated(), "generate");
    const auto generated = read_generation_manifest(layout_.generated());
    const auto dir = layout_.study_dir();
    const auto state = init_study(generated, {}, config_.study.raters, derive_seed(config_.seed, "study"));
    save_study_state(dir / "study_state.json", state);
    StageOutput out;
    out.artifacts.push_back(dir / "study_state.json");
    out.details = {{"images", state.images.size()}, {"retained", state.retained().size()}};
    if (!config_.study.ratings) {
      out.details["ratings"] = nullptr;
      return out;
    }
    const auto ratings = read_ratings(*config_.study.ratings);
    std::map<std::string, Verdict> verdicts;
    std::map<std::string, ConditionId> conditions;
    for (const auto& img : state.images) {
      conditions[img.image_id] = img.condition.id();
      verdicts[img.image_id] = state.verdicts.count(img.image_id) ? state.verdicts.at(img.image_id) : Verdict::KEEP;
    }
    const auto screening = screen(state.images, verdicts);
    const auto scores = aggregate_all(ratings);
    const std::vector<std::pair<fs::path, std::string>> tables = {
        {dir / "screening.md", format_screening_table(screening_table(screening, ratings))},
        {dir / "image_scores.md", format_condition_summary(condition_summary(scores, conditions))},
        {dir / "icc.md", format_icc_table(icc_table(ratings, config_.study.icc))},
    };
    for (const auto& [path, text] : tables) {
      write_text_file(path, text);
      out.artifacts.push_back(path);
    }
    PlotInputs plot{ratings, conditions, {}};
    const auto counts = summarize_conditions(curated_ ? *curated_ : (fs::exists(layout_.curated()) ? curated() : corpus()));
    std::uint64_t canonical = 0;
    for (auto id : kCanonicalConditions) canonical += counts.count(id);
    for (auto id : kCanonicalConditions) {
      plot.prevalence[static_cast<std::size_t>(id)] =
          canonical ? static_cast<double>(counts.count(id)) / static_cast<double>(canonical) : 0.0;
    }
    for (const auto& p : emit_plots(plot, dir / "plots")) out.artifacts.push_back(p);
    out.details["ratings"] = *config_.study.ratings;
    return out;
  }

  const RunConfig& config_;
  RunLayout layout_;
  PipelineLog log_;
  json manifest_;
  std::optional<CorpusManifest> corpus_;
  std::optional<CorpusManifest> curated_;
  std::optional<VaeModel> vae_;
  std::unique_ptr<LatentDiffusionModel> ldm_;
};

}  // namespace

json run_pipeline(const RunConfig& config, const fs::path& out_dir, const PipelineLog& log) {
  config.validate();
  configure_torch_determinism();
  return Runner(config, out_dir, log).run();
}

}  // namespace angiodiff
