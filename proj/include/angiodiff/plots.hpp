// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "angiodiff/dataset.hpp"
#include "angiodiff/study.hpp"

namespace angiodiff {

/// Linear-interpolation quantile (Hyndman-Fan type 7) of unsorted values.
double quantile7(std::vector<double> values, double p);

struct BoxStats {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  double whisker_low = 0.0, whisker_high = 0.0;  // most extreme points within 1.5 IQR
  std::vector<double> outliers;
};

BoxStats box_stats(const std::vector<double>& values);

struct MeanCi {
  std::size_t n = 0;
  double mean = 0.0;
  double low = 0.0;   // mean - 1.96 SE
  double high = 0.0;  // mean + 1.96 SE
};

/// Mean with a normal-approximation 95% interval (sample SD / sqrt(n)).
MeanCi mean_ci(const std::vector<double>& values);

/// Raw Likert counts [condition][segment][score-1] over unmasked entries,
/// conditions in kStudyConditionOrder.
using LikertCounts = std::array<std::array<std::array<std::uint64_t, 5>, 3>, 4>;
LikertCounts likert_counts(const std::vector<RatingRecord>& ratings, const std::map<std::string, ConditionId>& conditions);

/// Condition x segment means of the image-wise scores (the summary table's
/// segment means), conditions in kStudyConditionOrder.
std::array<std::array<std::optional<double>, 3>, 4> heatmap_values(const std::vector<ConditionSummaryRow>& summary);

/// Per rater (sorted by id) and segment: mean Likert with 95% CI.
std::map<std::string, std::array<std::optional<MeanCi>, 3>> rater_means(const std::vector<RatingRecord>& ratings);

struct PlotInputs {
  std::vector<RatingRecord> ratings;
  std::map<std::string, ConditionId> conditions;
  /// Share of each canonical condition in the real training corpus
  /// (indexed by ConditionId).
  std::array<double, 4> prevalence{};
};

/// Writes likert_bars.svg, segment_boxplots.svg, mean_heatmap.svg,
/// rater_means.svg and prevalence_quality.svg. Throws ValidationError on
/// empty ratings without writing anything. Returns the written paths.
std::vector<std::filesystem::path> emit_plots(const PlotInputs& inputs, const std::filesystem::path& out_dir);

}  // namespace angiodiff
