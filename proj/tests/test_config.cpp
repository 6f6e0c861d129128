// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "angiodiff/common.hpp"
#include "angiodiff/config.hpp"
#include "test_util.hpp"

using namespace angiodiff;

TEST(Config, PresetsValidate) {
  EXPECT_EQ(preset_names(), (std::vector<std::string>{"desk-scale", "full-scale"}));
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset_config(name).validate()) << name;
  EXPECT_THROW(preset_config("huge"), ValidationError);
}

TEST(Config, FullScaleEchoesTrainingSetup) {
  const auto c = preset_config("full-scale");
  EXPECT_EQ(c.ldm.timesteps, 1000);
  EXPECT_DOUBLE_EQ(c.ldm.beta_start, 0.0015);
  EXPECT_DOUBLE_EQ(c.ldm.beta_end, 0.0195);
  EXPECT_EQ(c.ldm.unet.base_channels, 224);
  EXPECT_EQ(c.ldm.unet.channel_multipliers, (std::vector<int>{1, 2, 4, 4}));
  EXPECT_EQ(c.ldm.unet.attention_resolutions, (std::vector<int>{8, 16, 32}));
  EXPECT_EQ(c.ldm.batch_size, 96);
  EXPECT_DOUBLE_EQ(c.ldm.learning_rate, 5e-5);
  EXPECT_EQ(c.vae.image_side, 256);
  EXPECT_EQ(c.vae.latent_side, 64);
  EXPECT_EQ(c.vae.latent_channels, 3);
  EXPECT_DOUBLE_EQ(c.vae.kl_weight, 1e-6);
  EXPECT_DOUBLE_EQ(c.vae.learning_rate, 2e-5);
  EXPECT_EQ(c.vae.batch_size, 20);
  EXPECT_EQ(c.vae.max_epochs, 100);
  EXPECT_EQ(c.vae.early_stop_patience, 10);
  EXPECT_EQ(c.generate.per_condition * c.generate.batches * 4, 400);
  EXPECT_EQ(c.fid.n_per_condition, 2500);
  EXPECT_EQ(c.study.raters.size(), 4u);
}

TEST(Config, OverridesAndUnknownKeys) {
  const auto c = parse_config(R"({"seed": 5, "ldm": {"timesteps": 20}, "vae": {"max_epochs": 2}})");
  EXPECT_EQ(c.preset, "desk-scale");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.ldm.timesteps, 20);
  EXPECT_EQ(c.vae.max_epochs, 2);
  EXPECT_EQ(c.vae.image_side, preset_config("desk-scale").vae.image_side);
  try {
    parse_config(R"({"ldm": {"timestep": 20}})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("ldm.timestep"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config(R"({"ldm": {"timesteps": -1}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"ldm": {"timesteps": "many"}})"), ValidationError);
  EXPECT_THROW(parse_config("{"), ValidationError);
  EXPECT_EQ(parse_config(R"({"preset": "full-scale"})").ldm.timesteps, 1000);
  EXPECT_EQ(parse_config(R"({"preset": "full-scale"})", {}, "desk-scale").preset, "desk-scale");
}

TEST(Config, IncludesMergeInOrderAndDetectCycles) {
  test::TempDir dir("cfg-inc");
  write_text_file(dir / "base.json", R"({"seed": 1, "vae": {"max_epochs": 3}})");
  write_text_file(dir / "more.json", R"({"include": "base.json", "vae": {"batch_size": 4}})");
  write_text_file(dir / "run.json", R"({"include": ["more.json"], "seed": 9})");
  const auto c = load_config(dir / "run.json");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.vae.max_epochs, 3);
  EXPECT_EQ(c.vae.batch_size, 4);
  write_text_file(dir / "a.json", R"({"include": "b.json"})");
  write_text_file(dir / "b.json", R"({"include": "a.json"})");
  EXPECT_THROW(load_config(dir / "a.json"), ValidationError);
  EXPECT_THROW(load_config(dir / "missing.json"), ValidationError);
}

TEST(Config, SerializeParseIsIdempotent) {
  for (const auto& name : preset_names()) {
    auto c = preset_config(name);
    c.study.ratings = "ratings.tsv";
    c.study.icc.missing = IccMissing::RowMean;
    const auto text = serialize_config(c);
    const auto back = parse_config(text);
    EXPECT_EQ(serialize_config(back), text) << name;
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(text.back(), '\n');
  }
}

TEST(Config, ConditionalSwitch) {
  auto c = preset_config("desk-scale");
  set_conditional(c.ldm, false);
  EXPECT_FALSE(c.ldm.conditional());
  EXPECT_NO_THROW(c.ldm.validate());
  set_conditional(c.ldm, true);
  EXPECT_TRUE(c.ldm.conditional());
  EXPECT_NO_THROW(c.ldm.validate());
}

TEST(Config, StageListValidated) {
  EXPECT_THROW(parse_config(R"({"stages": ["phantom", "render"]})"), ValidationError);
  EXPECT_NO_THROW(parse_config(R"({"stages": ["phantom", "classifier"]})"));
}
