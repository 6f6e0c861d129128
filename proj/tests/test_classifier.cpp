// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "angiodiff/classifier.hpp"
#include "angiodiff/common.hpp"
#include "angiodiff/phantom.hpp"
#include "test_util.hpp"

using namespace angiodiff;

namespace {

FrameRecord scored(const std::string& series, std::uint32_t index, double score) {
  FrameRecord r;
  r.study_id = "st";
  r.series_id = series;
  r.frame_index = index;
  r.image_path = series + "_" + std::to_string(index) + ".png";
  r.circulation = Circulation::AC;
  r.phase_score = score;
  return r;
}

ClassifierConfig small_classifier() {
  ClassifierConfig c;
  c.input_side = 32;
  c.architecture = "resnet10";
  c.base_width = 4;
  c.batch_size = 8;
  c.max_epochs = 1;
  return c;
}

}  // namespace

TEST(ClassifierMetrics, ConfusionAndRatios) {
  const std::vector<double> scores = {0.9, 0.8, 0.3, 0.6, 0.1, 0.5};
  const std::vector<double> labels = {1, 1, 1, 0, 0, 0};
  const auto cm = confusion_from_scores(scores, labels, 0.5);
  EXPECT_EQ(cm, (ConfusionMatrix{2, 2, 1, 1}));
  const auto m = metrics_from_confusion(cm, 0.5);
  EXPECT_DOUBLE_EQ(m.precision, 0.5);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
}

TEST(ClassifierMetrics, EmptyDenominatorsAreZero) {
  const auto m = metrics_from_confusion(ConfusionMatrix{0, 0, 5, 0}, 0.5);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_THROW(confusion_from_scores(std::vector<double>{0.1}, std::vector<double>{}, 0.5), ValidationError);
}

TEST(ClassifierMetrics, TotalsMatchInputOnRandomScores) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(37), l(37);
    for (auto& x : s) x = u(rng);
    for (auto& x : l) x = u(rng) < 0.4 ? 1.0 : 0.0;
    const auto cm = confusion_from_scores(s, l, 0.5);
    EXPECT_EQ(cm.total(), 37u);
    EXPECT_EQ(cm.tp + cm.fn, static_cast<std::uint64_t>(std::count(l.begin(), l.end(), 1.0)));
  }
}

TEST(Selection, ThresholdAndTopOnePerSeries) {
  std::vector<FrameRecord> recs = {scored("a", 0, 0.2), scored("a", 1, 0.7), scored("a", 2, 0.9),
                                   scored("b", 0, 0.1), scored("b", 1, 0.3), scored("b", 2, 0.2)};
  const auto out = select_arterial_frames(recs, {});
  ASSERT_EQ(out.size(), recs.size());
  EXPECT_EQ(out[0].phase, Phase::NON_ARTERIAL);
  EXPECT_EQ(out[1].phase, Phase::ARTERIAL);
  EXPECT_EQ(out[2].phase, Phase::ARTERIAL);
  // Series b never reaches 0.5 but keeps its best frame.
  EXPECT_EQ(out[3].phase, Phase::NON_ARTERIAL);
  EXPECT_EQ(out[4].phase, Phase::ARTERIAL);
  EXPECT_EQ(out[5].phase, Phase::NON_ARTERIAL);
}

TEST(Selection, TiesGoToLowestFrameIndex) {
  std::vector<FrameRecord> recs = {scored("a", 3, 0.4), scored("a", 1, 0.4), scored("a", 2, 0.4)};
  const auto out = select_arterial_frames(recs, {});
  EXPECT_EQ(out[0].phase, Phase::NON_ARTERIAL);
  EXPECT_EQ(out[1].phase, Phase::ARTERIAL);
  EXPECT_EQ(out[2].phase, Phase::NON_ARTERIAL);
}

TEST(Selection, EverySeriesKeepsAtLeastOneFrame) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<FrameRecord> recs;
  for (int s = 0; s < 40; ++s) {
    for (std::uint32_t f = 0; f < 6; ++f) recs.push_back(scored("s" + std::to_string(s), f, u(rng) * u(rng)));
  }
  SelectionOptions opt;
  opt.threshold = 0.8;
  const auto out = select_arterial_frames(recs, opt);
  std::map<std::string, int> kept;
  for (const auto& r : out) {
    if (r.phase == Phase::ARTERIAL) ++kept[r.series_id];
    if (*r.phase_score >= 0.8) EXPECT_EQ(r.phase, Phase::ARTERIAL);
  }
  EXPECT_EQ(kept.size(), 40u);
}

TEST(Selection, MissingScoreRejected) {
  auto r = scored("a", 0, 0.5);
  r.phase_score.reset();
  EXPECT_THROW(select_arterial_frames({r}, {}), ValidationError);
  SelectionOptions bad;
  bad.min_per_series = -1;
  EXPECT_THROW(select_arterial_frames({scored("a", 0, 0.5)}, bad), ValidationError);
}

TEST(ClassifierConfig, Validation) {
  auto c = small_classifier();
  EXPECT_NO_THROW(c.validate());
  c.architecture = "vgg";
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_classifier();
  c.threshold = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_classifier();
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(ClassifierConfig{}.blocks_per_stage(), (std::vector<int>{2, 2, 2, 2}));
}

TEST(Classifier, ForwardShapeAndProbabilities) {
  torch::manual_seed(0);
  PhaseClassifier model{small_classifier(), PhaseNet(small_classifier())};
  const auto p = model.predict(torch::rand({5, 1, 32, 32}));
  EXPECT_EQ(p.sizes(), (std::vector<int64_t>{5}));
  EXPECT_TRUE(((p >= 0) & (p <= 1)).all().item<bool>());
}

TEST(Classifier, TrainingNeedsBothClasses) {
  test::TempDir dir("cls-one");
  PhantomConfig pc;
  pc.image_side = 32;
  pc.frames_per_series = 4;
  pc.arterial_frames = 1;
  auto corpus = generate_phantom_corpus(2, 1, pc, dir.path());
  for (auto& r : corpus.records) r.phase = Phase::ARTERIAL;
  EXPECT_THROW(train_classifier(corpus, corpus, small_classifier(), 1), ValidationError);
}

TEST(Classifier, CheckpointRoundTripAndApply) {
  test::TempDir dir("cls-ckpt");
  PhantomConfig pc;
  pc.image_side = 32;
  pc.frames_per_series = 4;
  pc.arterial_frames = 1;
  const auto corpus = generate_phantom_corpus(4, 2, pc, dir / "corpus");
  auto trained = train_classifier(corpus, corpus, small_classifier(), 5);
  EXPECT_EQ(trained.confusion.total(), corpus.records.size());
  save_classifier(dir / "c.pt", trained.model, nlohmann::json{{"note", 1}});
  nlohmann::json metrics;
  auto back = load_classifier(dir / "c.pt", &metrics);
  EXPECT_EQ(metrics["note"], 1);
  EXPECT_EQ(back.config.architecture, "resnet10");
  const auto x = torch::rand({3, 1, 32, 32});
  EXPECT_TRUE(torch::allclose(trained.model.predict(x), back.predict(x)));

  const auto applied = apply_classifier(back, corpus);
  ASSERT_EQ(applied.records.size(), corpus.records.size());
  std::set<std::string> with_arterial;
  for (const auto& r : applied.records) {
    ASSERT_TRUE(r.phase_score.has_value());
    if (r.phase == Phase::ARTERIAL) with_arterial.insert(r.series_id);
  }
  EXPECT_EQ(with_arterial.size(), corpus.series_count());
  EXPECT_THROW(load_classifier(dir / "nope.pt"), ValidationError);
}
