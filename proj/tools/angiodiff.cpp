// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

// angiodiff command-line entry point. Exit codes: 0 ok, 1 user error,
// 2 internal error.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "angiodiff/classifier.hpp"
#include "angiodiff/common.hpp"
#include "angiodiff/config.hpp"
#include "angiodiff/dataset.hpp"
#include "angiodiff/diffusion.hpp"
#include "angiodiff/fid.hpp"
#include "angiodiff/frames.hpp"
#include "angiodiff/generation.hpp"
#include "angiodiff/phantom.hpp"
#include "angiodiff/pipeline.hpp"
#include "angiodiff/plots.hpp"
#include "angiodiff/prompt.hpp"
#include "angiodiff/rating_service.hpp"
#include "angiodiff/study.hpp"
#include "angiodiff/vae.hpp"
#include "angiodiff/version.hpp"

namespace fs = std::filesystem;
using namespace angiodiff;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string preset;
};

RunConfig resolve_config(const Globals& g) {
  std::optional<std::string> preset;
  if (!g.preset.empty()) preset = g.preset;
  RunConfig c = g.config.empty() ? preset_config(preset.value_or("desk-scale")) : load_config(g.config, preset);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::uint64_t seed_for(const Globals& g, const RunConfig& c, std::optional<std::uint64_t> local, const char* stage) {
  if (local) return *local;
  if (g.seed) return derive_seed(*g.seed, stage);
  return derive_seed(c.seed, stage);
}

fs::path out_path(const Globals& g, const std::string& local, const std::string& fallback) {
  if (!local.empty()) return local;
  if (!g.out_dir.empty()) return fs::path(g.out_dir) / fallback;
  throw ValidationError("no output location: pass --out or --out-dir");
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::vector<std::pair<std::string, RaterRole>> parse_raters(const std::string& spec) {
  std::vector<std::pair<std::string, RaterRole>> out;
  for (const auto& item : split(spec, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2 || parts[0].empty()) {
      throw ValidationError(fmt::format("rater '{}' is not of the form id:ROLE", item));
    }
    out.emplace_back(parts[0], parse_rater_role(parts[1]));
  }
  return out;
}

std::map<std::string, Verdict> read_verdicts(const fs::path& path) {
  std::map<std::string, Verdict> out;
  for (const auto& line : split(read_text_file(path), '\n')) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 2 || (f[1] != "KEEP" && f[1] != "EXCLUDE")) {
      throw ValidationError(fmt::format("verdict line '{}' must be <file>\\t<KEEP|EXCLUDE>", line));
    }
    out[f[0]] = f[1] == "KEEP" ? Verdict::KEEP : Verdict::EXCLUDE;
  }
  return out;
}

std::map<std::string, ConditionId> study_conditions(const StudyState& state) {
  std::map<std::string, ConditionId> out;
  for (const auto& img : state.images) out[img.image_id] = img.condition.id();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion pipeline for angiography frame synthesis"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));
  Globals g;
  app.add_option("--config", g.config, "Run configuration file (JSON, with include support)");
  app.add_option("--seed", g.seed, "Global seed; stage seeds are derived from it");
  app.add_option("--out-dir", g.out_dir, "Default output directory");
  app.add_option("--preset", g.preset, "Base preset: desk-scale or full-scale");

  std::function<void()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate an external frame manifest and rewrite it");
  std::string ingest_in, ingest_out;
  ingest->add_option("--manifest", ingest_in)->required();
  ingest->add_option("--out", ingest_out, "Output manifest path");
  ingest->callback([&] {
    action = [&] {
      const auto out = out_path(g, ingest_out, "manifest.tsv");
      const auto checked = ingest_manifest(read_manifest(ingest_in), out.parent_path());
      write_manifest(out, checked);
      for (const auto& w : checked.warnings) log_line("warning: " + w);
      std::cout << fmt::format("{} frames ingested, {} rejected\n", checked.records.size(),
                               checked.provenance.back().excluded);
    };
  });

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Render a procedural vessel-phantom corpus");
  std::optional<int> n_series;
  std::optional<std::uint64_t> phantom_seed;
  std::string phantom_out;
  phantom->add_option("--n-series", n_series);
  phantom->add_option("--seed", phantom_seed);
  phantom->add_option("--out", phantom_out, "Output directory");
  phantom->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      const auto seed = phantom_seed ? *phantom_seed : seed_for(g, c, std::nullopt, "phantom");
      const auto out = out_path(g, phantom_out, "phantom");
      const auto m = generate_phantom_corpus(n_series.value_or(c.phantom.n_series), seed, c.phantom.phantom, out);
      std::cout << fmt::format("{} series, {} frames -> {}\n", m.series_count(), m.records.size(),
                               (out / "manifest.tsv").string());
    };
  });

  // summarize
  auto* summarize = app.add_subcommand("summarize", "Print condition counts and the provenance trail");
  std::string summarize_manifest;
  summarize->add_option("--manifest", summarize_manifest)->required();
  summarize->callback([&] {
    action = [&] {
      const auto m = read_manifest(summarize_manifest);
      std::cout << format_condition_table(summarize_conditions(m));
      for (const auto& a : m.provenance) {
        std::cout << fmt::format("stage {}: {} {} in, {} retained, {} excluded\n", a.stage, a.input, a.unit,
                                 a.retained, a.excluded);
      }
      for (const auto& w : m.warnings) std::cout << "warning: " << w << '\n';
    };
  });

  // train-classifier
  auto* tc = app.add_subcommand("train-classifier", "Train the arterial-phase classifier");
  std::string tc_train, tc_val, tc_out;
  tc->add_option("--train", tc_train)->required();
  tc->add_option("--val", tc_val)->required();
  tc->add_option("--out", tc_out, "Checkpoint path");
  tc->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      configure_torch_determinism();
      auto result = train_classifier(read_manifest(tc_train), read_manifest(tc_val), c.classifier.model,
                                     seed_for(g, c, std::nullopt, "classifier"), log_line);
      const nlohmann::json metrics{{"validation", result.metrics}, {"confusion", result.confusion}};
      const auto out = out_path(g, tc_out, "classifier.pt");
      save_classifier(out, result.model, metrics);
      std::cout << metrics.dump(2) << '\n';
    };
  });

  // apply-classifier
  auto* ac = app.add_subcommand("apply-classifier", "Score frames and select arterial-phase frames");
  std::string ac_ckpt, ac_manifest, ac_out;
  ac->add_option("--checkpoint", ac_ckpt)->required();
  ac->add_option("--manifest", ac_manifest)->required();
  ac->add_option("--out", ac_out, "Scored manifest path (default: scored_manifest.tsv next to the input)");
  ac->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      configure_torch_determinism();
      auto model = load_classifier(ac_ckpt);
      const auto in = read_manifest(ac_manifest);
      const fs::path out = ac_out.empty() ? fs::path(ac_manifest).parent_path() / "scored_manifest.tsv" : fs::path(ac_out);
      auto scored = rebase_manifest(apply_classifier(model, in, c.classifier.selection), out.parent_path());
      write_manifest(out, scored);
      const auto arterial = std::count_if(scored.records.begin(), scored.records.end(),
                                          [](const FrameRecord& r) { return r.phase == Phase::ARTERIAL; });
      std::cout << fmt::format("{} of {} frames selected as arterial -> {}\n", arterial, scored.records.size(),
                               out.string());
    };
  });

  // train-vae
  auto* tv = app.add_subcommand("train-vae", "Train the latent autoencoder");
  std::string tv_manifest, tv_out;
  tv->add_option("--manifest", tv_manifest)->required();
  tv->add_option("--out", tv_out, "Checkpoint path");
  tv->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      configure_torch_determinism();
      auto result = train_vae(read_manifest(tv_manifest), c.vae, seed_for(g, c, std::nullopt, "vae"), log_line);
      save_vae(out_path(g, tv_out, "vae.pt"), result.model);
      for (const auto& w : result.warnings) log_line("warning: " + w);
      std::cout << fmt::format("best epoch {}, latent scale {:.6g}\n", result.best_epoch, result.model.latent_scale);
    };
  });

  // train-ldm
  auto* tl = app.add_subcommand("train-ldm", "Train the latent diffusion model");
  std::string tl_manifest, tl_vae, tl_out;
  bool tl_conditional = false;
  tl->add_option("--manifest", tl_manifest)->required();
  tl->add_option("--vae-checkpoint", tl_vae)->required();
  tl->add_flag("--conditional", tl_conditional, "Train with the text encoder on metadata prompts");
  tl->add_option("--out", tl_out, "Checkpoint path");
  tl->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      set_conditional(c.ldm, tl_conditional);
      c.ldm.validate();
      configure_torch_determinism();
      auto result = train_ldm(read_manifest(tl_manifest), load_vae(tl_vae), c.ldm, seed_for(g, c, std::nullopt, "ldm"),
                              log_line);
      save_ldm(out_path(g, tl_out, "ldm.pt"), *result.model);
      std::cout << fmt::format("{} steps, final epoch loss {:.6f}\n", result.steps,
                               result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back());
    };
  });

  // sample
  auto* sm = app.add_subcommand("sample", "Sample images from a diffusion checkpoint");
  std::string sm_ckpt, sm_prompt, sm_cond_id, sm_out;
  int sm_n = 1;
  std::optional<std::uint64_t> sm_seed;
  sm->add_option("--checkpoint", sm_ckpt)->required();
  sm->add_option("--n", sm_n)->check(CLI::PositiveNumber);
  auto* prompt_opt = sm->add_option("--condition", sm_prompt, "Prompt sentence, verbatim");
  sm->add_option("--condition-id", sm_cond_id, "AC-A, PC-A, AC-B or PC-B")->excludes(prompt_opt);
  sm->add_option("--seed", sm_seed);
  sm->add_option("--out-dir", sm_out);
  sm->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      configure_torch_determinism();
      auto model = load_ldm(sm_ckpt);
      model->eval();
      const auto seed = sm_seed ? *sm_seed : seed_for(g, c, std::nullopt, "sample");
      const fs::path out = sm_out.empty() ? out_path(g, "", "samples") : fs::path(sm_out);
      GenerationOptions options = c.generate.options;
      if (!model->conditional()) {
        if (!sm_prompt.empty() || !sm_cond_id.empty()) {
          throw ValidationError("this checkpoint is unconditional; drop --condition/--condition-id");
        }
        generate_unconditional(*model, sm_n, seed, out, options);
      } else {
        if (sm_prompt.empty() && sm_cond_id.empty()) {
          throw ValidationError("conditional checkpoint: pass --condition or --condition-id");
        }
        const auto spec = sm_prompt.empty() ? canonical_condition(parse_condition_id(sm_cond_id)) : parse_prompt(sm_prompt);
        generate_images(*model, spec, sm_n, seed, out, options);
      }
      std::cout << fmt::format("{} images -> {}\n", sm_n, out.string());
    };
  });

  // generate-study
  auto* gs = app.add_subcommand("generate-study", "Stratified generation for the reader study");
  std::string gs_ckpt, gs_out;
  std::optional<int> gs_per, gs_batches;
  gs->add_option("--checkpoint", gs_ckpt)->required();
  gs->add_option("--per-condition", gs_per);
  gs->add_option("--batches", gs_batches);
  gs->add_option("--out", gs_out, "Output directory");
  gs->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      configure_torch_determinism();
      auto model = load_ldm(gs_ckpt);
      model->eval();
      const auto conds = canonical_conditions({kCanonicalConditions.begin(), kCanonicalConditions.end()});
      const auto out = out_path(g, gs_out, "generate");
      const auto m = stratified_generate(*model, conds, gs_per.value_or(c.generate.per_condition),
                                         gs_batches.value_or(c.generate.batches),
                                         seed_for(g, c, std::nullopt, "generate"), out, c.generate.options);
      std::cout << fmt::format("{} images -> {}\n", m.images.size(), (out / "manifest.tsv").string());
    };
  });

  // fid
  auto* fd = app.add_subcommand("fid", "Frechet distance between real frames and generated images");
  std::string fd_real, fd_synth, fd_extractor, fd_out;
  bool fd_per = true;
  std::optional<int> fd_ref;
  fd->add_option("--real", fd_real, "Frame manifest (arterial frames are used)")->required();
  fd->add_option("--synth", fd_synth, "Generation manifest")->required();
  fd->add_option("--extractor", fd_extractor, "filterbank-v1, moments-v1 or torchscript:<path>");
  fd->add_option("--per-condition", fd_per, "Also report one row per canonical condition");
  fd->add_option("--reference-size", fd_ref, "Real reference draw size (0 = all)");
  fd->add_option("--out", fd_out, "Directory for fid.jsonl and fid.md");
  fd->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      const auto extractor = make_extractor(fd_extractor.empty() ? c.fid.extractor : fd_extractor);
      FidOptions options;
      options.per_condition = fd_per;
      options.reference_size = fd_ref.value_or(c.fid.reference_size);
      options.seed = seed_for(g, c, std::nullopt, "fid");
      const auto report = fid_report(read_manifest(fd_real), read_generation_manifest(fd_synth), *extractor, options);
      if (!fd_out.empty() || !g.out_dir.empty()) {
        const auto dir = out_path(g, fd_out, "fid");
        write_text_file(dir / "fid.jsonl", report.to_jsonl());
        write_text_file(dir / "fid.md", report.to_table());
      }
      for (const auto& w : report.warnings) log_line("warning: " + w);
      std::cout << report.to_table();
    };
  });

  // study
  auto* study = app.add_subcommand("study", "Reader study: init, serve, export, stats, plots");
  study->require_subcommand(1);
  auto* si = study->add_subcommand("init", "Create a blinded study from generated images");
  std::string si_generated, si_verdicts, si_raters, si_out;
  std::optional<std::uint64_t> si_seed;
  si->add_option("--generated", si_generated, "Generation manifest")->required();
  si->add_option("--verdicts", si_verdicts, "Screening verdicts: <file>\\t<KEEP|EXCLUDE> per line");
  si->add_option("--raters", si_raters, "Comma-separated id:ROLE list (roles NR, NS, IM)");
  si->add_option("--seed", si_seed);
  si->add_option("--out", si_out, "Study directory");
  si->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      const auto raters = si_raters.empty() ? c.study.raters : parse_raters(si_raters);
      const auto verdicts = si_verdicts.empty() ? std::map<std::string, Verdict>{} : read_verdicts(si_verdicts);
      const auto state = init_study(read_generation_manifest(si_generated), verdicts, raters,
                                    si_seed ? *si_seed : seed_for(g, c, std::nullopt, "study"));
      const auto dir = out_path(g, si_out, "study");
      save_study_state(dir / "study_state.json", state);
      std::cout << fmt::format("{} images, {} retained -> {}\n", state.images.size(), state.retained().size(),
                               (dir / "study_state.json").string());
      for (const auto& r : state.raters) std::cout << fmt::format("rater {} ({}) token {}\n", r.rater_id, to_string(r.role), r.token);
      std::cout << "admin token " << state.admin_token << '\n';
    };
  });
  auto* ss = study->add_subcommand("serve", "Serve the rating API (and optionally the reader UI)");
  std::string ss_dir, ss_host = "127.0.0.1", ss_ui;
  int ss_port = 8080;
  ss->add_option("--study", ss_dir, "Study directory")->required();
  ss->add_option("--host", ss_host);
  ss->add_option("--port", ss_port);
  ss->add_option("--ui-dir", ss_ui, "Static reader UI bundle");
  ss->callback([&] {
    action = [&] {
      RatingService service(load_study_state(fs::path(ss_dir) / "study_state.json"), ss_dir);
      ServeOptions options{ss_host, ss_port, std::nullopt};
      if (!ss_ui.empty()) options.ui_dir = ss_ui;
      log_line(fmt::format("serving on http://{}:{}", ss_host, ss_port));
      serve_study(service, options);
    };
  });
  auto* se = study->add_subcommand("export", "Write the collected ratings file");
  std::string se_dir, se_out;
  se->add_option("--study", se_dir, "Study directory")->required();
  se->add_option("--out", se_out, "Ratings file (default: stdout)");
  se->callback([&] {
    action = [&] {
      const auto state = load_study_state(fs::path(se_dir) / "study_state.json");
      const auto admin = state.admin_token;
      RatingService service(state, se_dir);
      const auto text = service.export_ratings(admin);
      if (se_out.empty()) {
        std::cout << *text;
      } else {
        write_text_file(se_out, *text);
      }
    };
  });
  auto* st = study->add_subcommand("stats", "Screening, image-wise score and reliability tables");
  std::string st_dir, st_ratings, st_out;
  st->add_option("--study", st_dir, "Study directory")->required();
  st->add_option("--ratings", st_ratings, "Ratings file")->required();
  st->add_option("--out", st_out, "Directory for the markdown tables (default: print)");
  std::string st_missing, st_unit;
  st->add_option("--icc-missing", st_missing, "complete-case or row-mean");
  st->add_option("--icc-overall-unit", st_unit, "rater-mean or segment-pooled");
  st->callback([&] {
    action = [&] {
      const auto c = resolve_config(g);
      IccOptions icc = c.study.icc;
      if (!st_missing.empty()) icc.missing = parse_icc_missing(st_missing);
      if (!st_unit.empty()) icc.overall_unit = parse_icc_overall_unit(st_unit);
      const auto state = load_study_state(fs::path(st_dir) / "study_state.json");
      const auto ratings = read_ratings(st_ratings);
      std::map<std::string, Verdict> verdicts;
      for (const auto& img : state.images) {
        const auto it = state.verdicts.find(img.image_id);
        verdicts[img.image_id] = it == state.verdicts.end() ? Verdict::KEEP : it->second;
      }
      const auto screening = screen(state.images, verdicts);
      const std::vector<std::pair<std::string, std::string>> tables = {
          {"screening.md", format_screening_table(screening_table(screening, ratings))},
          {"image_scores.md", format_condition_summary(condition_summary(aggregate_all(ratings), study_conditions(state)))},
          {"icc.md", format_icc_table(icc_table(ratings, icc))},
      };
      for (const auto& [name, text] : tables) {
        if (st_out.empty()) {
          std::cout << text << '\n';
        } else {
          write_text_file(fs::path(st_out) / name, text);
        }
      }
    };
  });
  auto* sp = study->add_subcommand("plots", "Render the reader-study figures as SVG");
  std::string sp_dir, sp_ratings, sp_out, sp_corpus;
  sp->add_option("--study", sp_dir, "Study directory")->required();
  sp->add_option("--ratings", sp_ratings, "Ratings file")->required();
  sp->add_option("--corpus", sp_corpus, "Training frame manifest for condition prevalence");
  sp->add_option("--out", sp_out, "Output directory");
  sp->callback([&] {
    action = [&] {
      const auto state = load_study_state(fs::path(sp_dir) / "study_state.json");
      PlotInputs inputs{read_ratings(sp_ratings), study_conditions(state), {}};
      if (!sp_corpus.empty()) {
        const auto counts = summarize_conditions(arterial_frames(read_manifest(sp_corpus)));
        std::uint64_t canonical = 0;
        for (auto id : kCanonicalConditions) canonical += counts.count(id);
        for (auto id : kCanonicalConditions) {
          inputs.prevalence[static_cast<std::size_t>(id)] =
              canonical ? static_cast<double>(counts.count(id)) / static_cast<double>(canonical) : 0.0;
        }
      }
      for (const auto& p : emit_plots(inputs, out_path(g, sp_out, "plots"))) std::cout << p.string() << '\n';
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Run the configured pipeline stages and write a run manifest");
  std::vector<std::string> run_stages;
  run->add_option("--stages", run_stages, "Subset of stages to run");
  run->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      if (!run_stages.empty()) {
        c.stages = run_stages;
        c.validate();
      }
      const auto out = out_path(g, "", "");
      const auto manifest = run_pipeline(c, out, log_line);
      std::cout << fmt::format("run {} -> {}\n", manifest.at("status").get<std::string>(),
                               (out / "run_manifest.json").string());
    };
  });

  // config
  auto* cfg = app.add_subcommand("config", "Print the resolved configuration");
  cfg->callback([&] { action = [&] { std::cout << serialize_config(resolve_config(g)); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (action) action();
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConditioningError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
