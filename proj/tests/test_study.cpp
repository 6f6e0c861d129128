// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "angiodiff/common.hpp"
#include "angiodiff/prompt.hpp"
#include "angiodiff/study.hpp"
#include "study_fixture.hpp"
#include "test_util.hpp"

using namespace angiodiff;

namespace {

constexpr auto NP = SegmentFlag::NOT_PRESENT;
constexpr auto NA = SegmentFlag::NOT_APPLICABLE;

RatingRecord rating(const std::string& image, const std::string& rater, SegmentEntry p, SegmentEntry m,
                    SegmentEntry q, RaterRole role = RaterRole::NR, bool ext = false) {
  RatingRecord r;
  r.image_id = image;
  r.rater_id = rater;
  r.rater_role = role;
  r.segments = {p, m, q};
  r.external_circulation = ext;
  r.timestamp = "2026-01-01T00:00:00Z";
  return r;
}

/// Two-way ANOVA sums of squares computed directly from their definitions.
IccResult icc_oracle(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), k = x[0].size();
  long double grand = 0;
  for (const auto& row : x) {
    for (double v : row) grand += v;
  }
  grand /= static_cast<long double>(n * k);
  long double ss_total = 0, ss_rows = 0, ss_cols = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long double rm = 0;
    for (std::size_t j = 0; j < k; ++j) rm += x[i][j];
    rm /= k;
    ss_rows += k * (rm - grand) * (rm - grand);
  }
  for (std::size_t j = 0; j < k; ++j) {
    long double cm = 0;
    for (std::size_t i = 0; i < n; ++i) cm += x[i][j];
    cm /= n;
    ss_cols += n * (cm - grand) * (cm - grand);
  }
  for (const auto& row : x) {
    for (double v : row) ss_total += (v - grand) * (v - grand);
  }
  const long double ss_err = ss_total - ss_rows - ss_cols;
  const long double msr = ss_rows / (n - 1), msc = ss_cols / (k - 1), mse = ss_err / ((n - 1) * (k - 1));
  const long double dn = n, dk = k;
  return {static_cast<double>((msr - mse) / (msr + (dk - 1) * mse + dk / dn * (msc - mse))),
          static_cast<double>((msr - mse) / (msr + (msc - mse) / dn))};
}

const std::vector<std::vector<double>> kShroutFleiss = {
    {9, 2, 5, 8}, {6, 1, 3, 2}, {8, 4, 6, 8}, {7, 1, 2, 6}, {10, 5, 6, 9}, {6, 2, 4, 7}};

void check_golden(const std::string& name, const std::string& actual) {
  const auto path = test::data_dir() / name;
  if (std::getenv("ANGIODIFF_UPDATE_GOLDEN")) write_text_file(path, actual);
  ASSERT_TRUE(std::filesystem::exists(path)) << path;
  EXPECT_EQ(read_text_file(path), actual) << name;
}

}  // namespace

TEST(Entries, FormatAndParse) {
  EXPECT_EQ(format_entry(SegmentEntry(3)), "3");
  EXPECT_EQ(format_entry(SegmentEntry(NP)), "NP");
  EXPECT_EQ(format_entry(SegmentEntry(NA)), "NA");
  EXPECT_EQ(parse_entry("5", "prox"), SegmentEntry(5));
  EXPECT_EQ(parse_entry("NA", "prox"), SegmentEntry(NA));
  for (const char* bad : {"0", "6", "", "np", "3.5", "x"}) EXPECT_THROW(parse_entry(bad, "prox"), ValidationError) << bad;
  try {
    parse_entry("7", "med");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("med"), std::string::npos);
  }
}

TEST(Ratings, ValidationAndRoundTrip) {
  auto r = rating("i1", "NR1", 3, NP, 5);
  EXPECT_NO_THROW(validate_rating(r));
  r.segments[1] = 6;
  EXPECT_THROW(validate_rating(r), ValidationError);
  r = rating("", "NR1", 3, 3, 3);
  EXPECT_THROW(validate_rating(r), ValidationError);
  const std::vector<RatingRecord> all = {rating("i1", "NR1", 3, NP, 5), rating("i2", "IM1", NA, 1, 2, RaterRole::IM, true)};
  const auto text = serialize_ratings(all);
  EXPECT_EQ(parse_ratings(text), all);
  EXPECT_EQ(serialize_ratings(parse_ratings(text)), text);
  EXPECT_THROW(parse_ratings("i1\tNR1\tNR\t3\t3\n"), ValidationError);
}

TEST(Screening, RetentionCounts) {
  const auto f = test::study_fixture();
  const auto s = screen(f.images, f.verdicts);
  EXPECT_EQ(s.total, 400u);
  EXPECT_EQ(s.retained.size(), 239u);
  EXPECT_EQ(s.kept.at(ConditionId::AC_A), 78u);
  EXPECT_EQ(s.kept.at(ConditionId::AC_B), 59u);
  EXPECT_EQ(s.kept.at(ConditionId::PC_A), 47u);
  EXPECT_EQ(s.kept.at(ConditionId::PC_B), 55u);
  auto missing = f.verdicts;
  missing.erase(missing.begin());
  EXPECT_THROW(screen(f.images, missing), ValidationError);
  std::map<std::string, Verdict> all_keep;
  for (const auto& img : f.images) all_keep[img.image_id] = Verdict::KEEP;
  EXPECT_EQ(screen(f.images, all_keep).retained.size(), f.images.size());
}

TEST(Aggregation, HandExamples) {
  const auto same = aggregate_image_scores({rating("a", "r1", 3, 3, 3), rating("a", "r2", 3, 3, 3),
                                            rating("a", "r3", 3, 3, 3), rating("a", "r4", 3, 3, 3)});
  EXPECT_EQ(same.segments[0], 3.0);
  EXPECT_EQ(same.overall, 3.0);
  const auto masked = aggregate_image_scores({rating("a", "r1", 4, 2, NA), rating("a", "r2", 4, NP, NA),
                                              rating("a", "r3", NP, 2, NA), rating("a", "r4", 2, 5, NA)});
  EXPECT_NEAR(*masked.segments[0], 10.0 / 3.0, 1e-12);
  EXPECT_NEAR(*masked.segments[1], 3.0, 1e-12);
  EXPECT_FALSE(masked.segments[2].has_value());
  EXPECT_NEAR(*masked.overall, (10.0 / 3.0 + 3.0) / 2.0, 1e-12);
  const auto none = aggregate_image_scores({rating("a", "r1", NP, NA, NP), rating("a", "r2", NA, NA, NA)});
  EXPECT_FALSE(none.ratable());
}

TEST(Aggregation, ExternalCirculationMasksTheRater) {
  const auto s = aggregate_image_scores(
      {rating("a", "r1", 4, 4, 4), rating("a", "r2", 1, 1, 1, RaterRole::NR, /*ext=*/true)});
  EXPECT_EQ(s.overall, 4.0);
}

TEST(Aggregation, MaskingMonotonicity) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RatingRecord> rs;
    const int k = 1 + static_cast<int>(rng() % 4);
    for (int r = 0; r < k; ++r) {
      std::array<SegmentEntry, 3> seg;
      for (auto& e : seg) e = rng() % 4 == 0 ? SegmentEntry(NP) : SegmentEntry(1 + static_cast<int>(rng() % 5));
      rs.push_back(rating("a", "r" + std::to_string(r), seg[0], seg[1], seg[2]));
    }
    const auto before = aggregate_image_scores(rs);
    auto flagged = rs;
    flagged.push_back(rating("a", "extra", NP, NA, NP));
    const auto after_flag = aggregate_image_scores(flagged);
    EXPECT_EQ(after_flag.segments, before.segments);
    EXPECT_EQ(after_flag.overall, before.overall);
    const int seg = static_cast<int>(rng() % 3);
    auto one = rs;
    std::array<SegmentEntry, 3> e = {NP, NP, NP};
    e[seg] = 5;
    one.push_back(rating("a", "extra", e[0], e[1], e[2]));
    const auto after_one = aggregate_image_scores(one);
    for (int s = 0; s < 3; ++s) {
      if (s != seg) EXPECT_EQ(after_one.segments[s], before.segments[s]);
    }
    EXPECT_TRUE(after_one.segments[seg].has_value());
  }
}

TEST(Aggregation, LaterRecordReplacesEarlier) {
  const auto all = aggregate_all({rating("a", "r1", 1, 1, 1), rating("a", "r1", 5, 5, 5), rating("b", "r1", 2, 2, 2)});
  EXPECT_EQ(all.size(), 2u);
  EXPECT_EQ(all.at("a").overall, 5.0);
}

TEST(Summary, StatsAndConventions) {
  const auto s = summary_stat({2.0, 3.0, 4.0});
  EXPECT_EQ(s.n, 3u);
  EXPECT_NEAR(*s.mean, 3.0, 1e-12);
  EXPECT_NEAR(*s.sd, 1.0, 1e-12);
  const auto c = summary_stat({4.0, 4.0});
  EXPECT_EQ(*c.sd, 0.0);
  EXPECT_FALSE(summary_stat({4.0}).sd.has_value());
  EXPECT_FALSE(summary_stat({}).mean.has_value());
}

TEST(Summary, RowsInStudyOrderWithEmptyCondition) {
  std::map<std::string, ImageScore> scores;
  std::map<std::string, ConditionId> conds;
  const double vals[] = {2.0, 3.0, 4.0};
  for (int i = 0; i < 3; ++i) {
    ImageScore s;
    s.image_id = "x" + std::to_string(i);
    s.segments = {vals[i], vals[i], std::nullopt};
    s.overall = vals[i];
    scores[s.image_id] = s;
    conds[s.image_id] = ConditionId::PC_A;
  }
  const auto rows = condition_summary(scores, conds);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[2].condition, ConditionId::PC_A);
  EXPECT_EQ(rows[2].n_images, 3u);
  EXPECT_NEAR(*rows[2].overall.sd, 1.0, 1e-12);
  EXPECT_EQ(rows[0].n_images, 0u);
  const auto table = format_condition_summary(rows);
  EXPECT_NE(table.find("3.00 ± 1.00"), std::string::npos);
  EXPECT_NE(table.find("| AC | A | 0 |  |  |  |  |"), std::string::npos);
}

TEST(Summary, FixtureMatchesIndependentAggregation) {
  const auto f = test::study_fixture();
  const auto rows = condition_summary(aggregate_all(f.ratings), f.conditions);
  // Recompute AC-A overall directly from the raw records.
  std::map<std::string, std::array<std::pair<double, int>, 3>> acc;
  for (const auto& r : f.ratings) {
    if (f.conditions.at(r.image_id) != ConditionId::AC_A || r.external_circulation) continue;
    auto& a = acc[r.image_id];
    for (int s = 0; s < 3; ++s) {
      if (const int* v = std::get_if<int>(&r.segments[s])) {
        a[s].first += *v;
        a[s].second += 1;
      }
    }
  }
  std::vector<double> overall;
  for (const auto& [id, a] : acc) {
    double sum = 0;
    int present = 0;
    for (const auto& [total, count] : a) {
      if (count) {
        sum += total / count;
        ++present;
      }
    }
    if (present) overall.push_back(sum / present);
  }
  double mean = 0;
  for (double v : overall) mean += v;
  mean /= static_cast<double>(overall.size());
  EXPECT_EQ(rows[0].n_images, overall.size());
  EXPECT_LT(rows[0].n_images, 78u);
  EXPECT_NEAR(*rows[0].overall.mean, mean, 1e-12);
}

TEST(Golden, ScreeningAndSummaryTables) {
  const auto f = test::study_fixture();
  const auto screening = screen(f.images, f.verdicts);
  const auto table2 = format_screening_table(screening_table(screening, f.ratings));
  EXPECT_NE(table2.find("| AC | A | 78 |"), std::string::npos);
  EXPECT_NE(table2.find("| AC | B | 59 |"), std::string::npos);
  EXPECT_NE(table2.find("| PC | A | 47 |"), std::string::npos);
  EXPECT_NE(table2.find("| PC | B | 55 |"), std::string::npos);
  const auto tables = test::fixture_tables(f);
  EXPECT_EQ(tables[0].second, table2);
  for (const auto& [name, text] : tables) check_golden(name, text);
}

TEST(ScreeningTable, AllRaterFlagsCounted) {
  std::vector<StudyImage> imgs(2);
  imgs[0].image_id = "a";
  imgs[0].condition = canonical_condition(ConditionId::PC_B);
  imgs[1].image_id = "b";
  imgs[1].condition = canonical_condition(ConditionId::PC_B);
  const auto s = screen(imgs, {{"a", Verdict::KEEP}, {"b", Verdict::KEEP}});
  const auto rows = screening_table(s, {rating("a", "r1", NP, 3, 4), rating("a", "r2", NA, 3, NP),
                                        rating("b", "r1", 3, 3, 3, RaterRole::NR, true),
                                        rating("b", "r2", 3, 3, 3, RaterRole::NR, true)});
  const auto& pcb = rows[3];
  EXPECT_EQ(pcb.condition, ConditionId::PC_B);
  EXPECT_EQ(pcb.n_keep, 2u);
  EXPECT_EQ(pcb.segment_na[0], 1u);
  EXPECT_EQ(pcb.segment_na[1], 0u);
  EXPECT_EQ(pcb.segment_na[2], 0u);
  EXPECT_EQ(pcb.external_circulation, 1u);
}

TEST(Icc, ShroutFleissJudges) {
  const auto r = icc(kShroutFleiss);
  const auto o = icc_oracle(kShroutFleiss);
  EXPECT_NEAR(r.single, o.single, 1e-10);
  EXPECT_NEAR(r.average, o.average, 1e-10);
  EXPECT_NEAR(r.single, 0.29, 0.005);
  EXPECT_NEAR(r.average, 0.62, 0.005);
}

TEST(Icc, MatchesSumsOfSquaresOracle) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01;
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 19, k = 2 + rng() % 5;
    std::vector<std::vector<double>> x(n, std::vector<double>(k));
    std::vector<double> target(n), bias(k);
    for (auto& t : target) t = 3 * n01(rng);
    for (auto& b : bias) b = n01(rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) x[i][j] = target[i] + bias[j] + n01(rng);
    }
    const auto r = icc(x);
    const auto o = icc_oracle(x);
    EXPECT_NEAR(r.single, o.single, 1e-10);
    EXPECT_NEAR(r.average, o.average, 1e-10);
    if (r.single >= 0 && r.average >= 0) {
      EXPECT_GE(r.average, r.single - 1e-12);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Icc, PerfectAgreementAndErrors) {
  const auto r = icc({{1, 1, 1}, {3, 3, 3}, {5, 5, 5}});
  EXPECT_NEAR(r.single, 1.0, 1e-12);
  EXPECT_NEAR(r.average, 1.0, 1e-12);
  EXPECT_THROW(icc({{2, 2}, {2, 2}}), IccUndefinedError);
  EXPECT_THROW(icc({{1, 2}}), ValidationError);
  EXPECT_THROW(icc({{1}, {2}}), ValidationError);
  EXPECT_THROW(icc({{1, 2}, {3}}), ValidationError);
}

TEST(Icc, MissingDataPolicies) {
  const std::vector<RatingRecord> rs = {
      rating("a", "r1", 4, 4, 4), rating("a", "r2", 4, NP, 4), rating("b", "r1", 2, 2, 2), rating("b", "r2", 2, 2, 2),
      rating("c", "r1", 5, 1, 3), rating("c", "r2", NP, 1, 3)};
  const std::vector<std::string> raters = {"r1", "r2"};
  const auto cc = icc_matrix(rs, raters, Segment::Proximal, {});
  EXPECT_EQ(cc.rows.size(), 2u);
  EXPECT_EQ(cc.dropped, 1u);
  const auto rm = icc_matrix(rs, raters, Segment::Proximal, {IccMissing::RowMean, IccOverallUnit::RaterMean});
  EXPECT_EQ(rm.rows.size(), 3u);
  EXPECT_EQ(rm.imputed, 1u);
  EXPECT_EQ(rm.rows[2], (std::vector<double>{5, 5}));
  const auto overall = icc_matrix(rs, raters, std::nullopt, {});
  EXPECT_EQ(overall.rows.size(), 3u);
  EXPECT_EQ(overall.rows[2], (std::vector<double>{3, 2}));
  const auto pooled = icc_matrix(rs, raters, std::nullopt, {IccMissing::CompleteCase, IccOverallUnit::SegmentPooled});
  EXPECT_EQ(pooled.rows.size(), 7u);
  EXPECT_EQ(pooled.dropped, 2u);
  const auto [m, dropped] = complete_case_matrix(rs, raters, Segment::Proximal);
  EXPECT_EQ(m, cc.rows);
  EXPECT_EQ(dropped, 1u);
  EXPECT_EQ(parse_icc_missing("row-mean"), IccMissing::RowMean);
  EXPECT_EQ(parse_icc_overall_unit(to_string(IccOverallUnit::SegmentPooled)), IccOverallUnit::SegmentPooled);
  EXPECT_THROW(parse_icc_missing("drop"), ValidationError);
}

TEST(Icc, TableHasAllRegionsAndExpertRoster) {
  const auto f = test::study_fixture();
  const auto rows = icc_table(f.ratings);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].region, "Proximal");
  EXPECT_EQ(rows[3].region, "Overall");
  for (const auto& r : rows) {
    EXPECT_EQ(r.all_raters.k, 4u);
    EXPECT_EQ(r.domain_experts.k, 3u);
    EXPECT_EQ(r.all_raters.n_used + r.all_raters.n_dropped, 239u);
    ASSERT_TRUE(r.all_raters.value.has_value());
  }
}
