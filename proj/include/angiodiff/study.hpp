// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "angiodiff/common.hpp"
#include "angiodiff/dataset.hpp"

namespace angiodiff {

enum class Segment { Proximal, Medium, Peripheral };
inline constexpr std::array<Segment, 3> kSegments = {Segment::Proximal, Segment::Medium, Segment::Peripheral};
std::string_view to_string(Segment s);

enum class SegmentFlag { NOT_PRESENT, NOT_APPLICABLE };
enum class RaterRole { NR, NS, IM };
std::string_view to_string(RaterRole r);
RaterRole parse_rater_role(std::string_view s);

/// A Likert score 1..5 or an exclusion flag.
using SegmentEntry = std::variant<int, SegmentFlag>;
/// "1".."5", "NP" or "NA".
std::string format_entry(const SegmentEntry& e);
/// Throws ValidationError naming `field` on anything else.
SegmentEntry parse_entry(std::string_view s, std::string_view field);

struct RatingRecord {
  std::string image_id;
  std::string rater_id;
  RaterRole rater_role = RaterRole::NR;
  std::array<SegmentEntry, 3> segments{1, 1, 1};
  bool external_circulation = false;
  std::string timestamp;
  bool operator==(const RatingRecord&) const = default;
};

/// Throws ValidationError with a field-level message when a Likert value is
/// out of range or an identifier is empty.
void validate_rating(const RatingRecord& r);

std::string serialize_ratings(const std::vector<RatingRecord>& ratings);
std::vector<RatingRecord> parse_ratings(std::string_view text);
void write_ratings(const std::filesystem::path& path, const std::vector<RatingRecord>& ratings);
std::vector<RatingRecord> read_ratings(const std::filesystem::path& path);

/// A synthetic image in the study pool. The condition stays on the
/// administrator side and is never sent to raters.
struct StudyImage {
  std::string image_id;
  std::string file;
  ConditionSpec condition;
};

enum class Verdict { KEEP, EXCLUDE };

/// Table row order for per-condition study tables: AC A, AC B, PC A, PC B.
inline constexpr std::array<ConditionId, 4> kStudyConditionOrder = {ConditionId::AC_A, ConditionId::AC_B,
                                                                    ConditionId::PC_A, ConditionId::PC_B};

struct ScreeningResult {
  std::vector<StudyImage> retained;
  std::map<ConditionId, std::uint64_t> kept;
  std::size_t total = 0;
};

/// Every image needs a verdict.
ScreeningResult screen(const std::vector<StudyImage>& images, const std::map<std::string, Verdict>& verdicts);

struct ImageScore {
  std::string image_id;
  std::array<std::optional<double>, 3> segments;
  std::optional<double> overall;
  bool ratable() const { return overall.has_value(); }
};

/// Per segment, the mean of the raters' Likert values, ignoring flags and
/// every entry of a rater who marked external circulation; overall is the
/// mean of the present segment means.
ImageScore aggregate_image_scores(const std::vector<RatingRecord>& ratings_for_image);

/// Groups ratings by image (a later record for the same image and rater
/// replaces an earlier one) and aggregates each.
std::map<std::string, ImageScore> aggregate_all(const std::vector<RatingRecord>& ratings);

struct SummaryStat {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> sd;  // sample SD; absent for n < 2
};

struct ConditionSummaryRow {
  ConditionId condition = ConditionId::AC_A;
  std::size_t n_images = 0;
  SummaryStat overall;
  std::array<SummaryStat, 3> segments;
};

SummaryStat summary_stat(const std::vector<double>& values);

/// Table-3 statistics over ratable images, rows in kStudyConditionOrder.
std::vector<ConditionSummaryRow> condition_summary(const std::map<std::string, ImageScore>& scores,
                                                   const std::map<std::string, ConditionId>& conditions);

struct ScreeningRow {
  ConditionId condition = ConditionId::AC_A;
  std::uint64_t n_keep = 0;
  std::uint64_t n_scored = 0;
  std::array<std::uint64_t, 3> segment_na{};
  std::uint64_t external_circulation = 0;
};

/// Table-2 statistics: retention, scored images, segments flagged by all
/// raters, and images flagged external by all raters.
std::vector<ScreeningRow> screening_table(const ScreeningResult& screening, const std::vector<RatingRecord>& ratings);

std::string format_screening_table(const std::vector<ScreeningRow>& rows);
std::string format_condition_summary(const std::vector<ConditionSummaryRow>& rows);

class IccUndefinedError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct IccResult {
  double single = 0.0;   // ICC(2,1)
  double average = 0.0;  // ICC(2,k)
};

/// Two-way random-effects, absolute-agreement ICC from an n x k complete
/// matrix (rows = images, columns = raters), n >= 2 and k >= 2.
IccResult icc(const std::vector<std::vector<double>>& matrix);

struct IccCell {
  std::optional<IccResult> value;
  std::size_t n_used = 0;
  std::size_t n_dropped = 0;
  std::size_t k = 0;
  std::string note;
};

struct IccTableRow {
  std::string region;  // Proximal, Medium, Peripheral, Overall
  IccCell all_raters;
  IccCell domain_experts;
};

/// Complete-case matrix for one segment (or nullopt for the overall score)
/// across `raters`. Returns the matrix and the number of dropped images.
std::pair<std::vector<std::vector<double>>, std::size_t> complete_case_matrix(
    const std::vector<RatingRecord>& ratings, const std::vector<std::string>& raters, std::optional<Segment> segment);

/// Handling of images lacking a likert from some rater.
enum class IccMissing {
  CompleteCase,  // drop the image
  RowMean,       // fill with the mean of the image's available likerts
};
/// Unit of the Overall row.
enum class IccOverallUnit {
  RaterMean,      // per rater, mean of that rater's available segment likerts
  SegmentPooled,  // every (image, segment) pair is a separate target
};

struct IccOptions {
  IccMissing missing = IccMissing::CompleteCase;
  IccOverallUnit overall_unit = IccOverallUnit::RaterMean;
};

std::string_view to_string(IccMissing m);
std::string_view to_string(IccOverallUnit u);
IccMissing parse_icc_missing(std::string_view s);
IccOverallUnit parse_icc_overall_unit(std::string_view s);

struct IccMatrix {
  std::vector<std::vector<double>> rows;
  std::size_t dropped = 0;
  std::size_t imputed = 0;  // filled cells under RowMean
};

/// Rating matrix for one segment (nullopt: the Overall row) under `options`.
IccMatrix icc_matrix(const std::vector<RatingRecord>& ratings, const std::vector<std::string>& raters,
                     std::optional<Segment> segment, const IccOptions& options);

std::vector<IccTableRow> icc_table(const std::vector<RatingRecord>& ratings, const IccOptions& options = {});
std::string format_icc_table(const std::vector<IccTableRow>& rows);

}  // namespace angiodiff
