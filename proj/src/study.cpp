// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/study.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace angiodiff {

namespace {

constexpr std::string_view kRatingsHeader =
    "#image_id\trater_id\trater_role\tprox\tmed\tperi\texternal_circulation\ttimestamp";

constexpr std::array<std::string_view, 3> kSegmentFields = {"prox", "med", "peri"};

std::string_view circ_label(ConditionId id) { return circulation_of(id) == Circulation::AC ? "AC" : "PC"; }
std::string_view plane_label(ConditionId id) { return plane_of(id) == Plane::A ? "A" : "B"; }

std::optional<int> likert(const SegmentEntry& e) {
  if (const int* v = std::get_if<int>(&e)) return *v;
  return std::nullopt;
}

/// Latest record per (image, rater).
std::map<std::string, std::map<std::string, RatingRecord>> index_ratings(const std::vector<RatingRecord>& ratings) {
  std::map<std::string, std::map<std::string, RatingRecord>> out;
  for (const auto& r : ratings) out[r.image_id][r.rater_id] = r;
  return out;
}

}  // namespace

std::string_view to_string(Segment s) {
  switch (s) {
    case Segment::Proximal: return "Proximal";
    case Segment::Medium: return "Medium";
    case Segment::Peripheral: return "Peripheral";
  }
  return "?";
}

std::string_view to_string(RaterRole r) {
  switch (r) {
    case RaterRole::NR: return "NR";
    case RaterRole::NS: return "NS";
    case RaterRole::IM: return "IM";
  }
  return "?";
}

RaterRole parse_rater_role(std::string_view s) {
  if (s == "NR") return RaterRole::NR;
  if (s == "NS") return RaterRole::NS;
  if (s == "IM") return RaterRole::IM;
  throw ValidationError(fmt::format("rater_role: expected NR, NS or IM, got '{}'", s));
}

std::string format_entry(const SegmentEntry& e) {
  if (const int* v = std::get_if<int>(&e)) return std::to_string(*v);
  return std::get<SegmentFlag>(e) == SegmentFlag::NOT_PRESENT ? "NP" : "NA";
}

SegmentEntry parse_entry(std::string_view s, std::string_view field) {
  if (s == "NP") return SegmentFlag::NOT_PRESENT;
  if (s == "NA") return SegmentFlag::NOT_APPLICABLE;
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '5') return s[0] - '0';
  throw ValidationError(fmt::format("{}: expected a Likert score 1-5, NP or NA, got '{}'", field, s));
}

void validate_rating(const RatingRecord& r) {
  if (r.image_id.empty()) throw ValidationError("image_id: must not be empty");
  if (r.rater_id.empty()) throw ValidationError("rater_id: must not be empty");
  for (std::size_t i = 0; i < 3; ++i) {
    if (const auto v = likert(r.segments[i]); v && (*v < 1 || *v > 5)) {
      throw ValidationError(fmt::format("{}: Likert score must be 1-5, got {}", kSegmentFields[i], *v));
    }
  }
}

std::string serialize_ratings(const std::vector<RatingRecord>& ratings) {
  std::string out(kRatingsHeader);
  out += '\n';
  for (const auto& r : ratings) {
    validate_rating(r);
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r.image_id, r.rater_id, to_string(r.rater_role),
                       format_entry(r.segments[0]), format_entry(r.segments[1]), format_entry(r.segments[2]),
                       r.external_circulation ? 1 : 0, r.timestamp);
  }
  return out;
}

std::vector<RatingRecord> parse_ratings(std::string_view text) {
  std::vector<RatingRecord> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 8) {
      throw ValidationError(fmt::format("ratings line {}: expected 8 fields, got {}", line_no, f.size()));
    }
    try {
      RatingRecord r;
      r.image_id = f[0];
      r.rater_id = f[1];
      r.rater_role = parse_rater_role(f[2]);
      for (std::size_t i = 0; i < 3; ++i) r.segments[i] = parse_entry(f[3 + i], kSegmentFields[i]);
      if (f[6] != "0" && f[6] != "1") {
        throw ValidationError(fmt::format("external_circulation: expected 0 or 1, got '{}'", f[6]));
      }
      r.external_circulation = f[6] == "1";
      r.timestamp = f[7];
      validate_rating(r);
      out.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("ratings line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

void write_ratings(const std::filesystem::path& path, const std::vector<RatingRecord>& ratings) {
  write_text_file(path, serialize_ratings(ratings));
}

std::vector<RatingRecord> read_ratings(const std::filesystem::path& path) { return parse_ratings(read_text_file(path)); }

ScreeningResult screen(const std::vector<StudyImage>& images, const std::map<std::string, Verdict>& verdicts) {
  ScreeningResult result;
  result.total = images.size();
  for (auto id : kStudyConditionOrder) result.kept[id] = 0;
  for (const auto& img : images) {
    const auto it = verdicts.find(img.image_id);
    if (it == verdicts.end()) throw ValidationError(fmt::format("no screening verdict for image {}", img.image_id));
    if (it->second == Verdict::KEEP) {
      result.retained.push_back(img);
      ++result.kept[img.condition.id()];
    }
  }
  return result;
}

ImageScore aggregate_image_scores(const std::vector<RatingRecord>& ratings) {
  ImageScore score;
  if (!ratings.empty()) score.image_id = ratings.front().image_id;
  std::vector<double> present;
  for (std::size_t s = 0; s < 3; ++s) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : ratings) {
      if (r.external_circulation) continue;
      if (const auto v = likert(r.segments[s])) {
        sum += *v;
        ++n;
      }
    }
    if (n > 0) {
      score.segments[s] = sum / n;
      present.push_back(*score.segments[s]);
    }
  }
  if (!present.empty()) {
    score.overall = std::accumulate(present.begin(), present.end(), 0.0) / static_cast<double>(present.size());
  }
  return score;
}

std::map<std::string, ImageScore> aggregate_all(const std::vector<RatingRecord>& ratings) {
  std::map<std::string, ImageScore> out;
  for (const auto& [image, by_rater] : index_ratings(ratings)) {
    std::vector<RatingRecord> rs;
    for (const auto& [rater, r] : by_rater) rs.push_back(r);
    out[image] = aggregate_image_scores(rs);
  }
  return out;
}

SummaryStat summary_stat(const std::vector<double>& values) {
  SummaryStat s;
  s.n = values.size();
  if (values.empty()) return s;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.mean = mean;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<ConditionSummaryRow> condition_summary(const std::map<std::string, ImageScore>& scores,
                                                   const std::map<std::string, ConditionId>& conditions) {
  std::map<ConditionId, std::vector<const ImageScore*>> grouped;
  for (const auto& [id, score] : scores) {
    if (!score.ratable()) continue;
    const auto it = conditions.find(id);
    if (it == conditions.end()) throw ValidationError(fmt::format("image {} has no condition", id));
    grouped[it->second].push_back(&score);
  }
  std::vector<ConditionSummaryRow> rows;
  for (auto cond : kStudyConditionOrder) {
    ConditionSummaryRow row;
    row.condition = cond;
    const auto& items = grouped[cond];
    row.n_images = items.size();
    std::vector<double> overall;
    std::array<std::vector<double>, 3> seg;
    for (const auto* s : items) {
      overall.push_back(*s->overall);
      for (std::size_t k = 0; k < 3; ++k) {
        if (s->segments[k]) seg[k].push_back(*s->segments[k]);
      }
    }
    row.overall = summary_stat(overall);
    for (std::size_t k = 0; k < 3; ++k) row.segments[k] = summary_stat(seg[k]);
    rows.push_back(row);
  }
  return rows;
}

std::vector<ScreeningRow> screening_table(const ScreeningResult& screening, const std::vector<RatingRecord>& ratings) {
  const auto indexed = index_ratings(ratings);
  std::vector<ScreeningRow> rows;
  for (auto cond : kStudyConditionOrder) {
    ScreeningRow row;
    row.condition = cond;
    if (const auto it = screening.kept.find(cond); it != screening.kept.end()) row.n_keep = it->second;
    for (const auto& img : screening.retained) {
      if (img.condition.id() != cond) continue;
      const auto it = indexed.find(img.image_id);
      if (it == indexed.end() || it->second.empty()) continue;
      std::vector<RatingRecord> rs;
      for (const auto& [rater, r] : it->second) rs.push_back(r);
      if (aggregate_image_scores(rs).ratable()) ++row.n_scored;
      for (std::size_t s = 0; s < 3; ++s) {
        const bool all_flagged =
            std::all_of(rs.begin(), rs.end(), [&](const RatingRecord& r) { return !likert(r.segments[s]); });
        if (all_flagged) ++row.segment_na[s];
      }
      if (std::all_of(rs.begin(), rs.end(), [](const RatingRecord& r) { return r.external_circulation; })) {
        ++row.external_circulation;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_screening_table(const std::vector<ScreeningRow>& rows) {
  std::string out =
      "| Circulation | Plane | N_keep | N_scored | Prox. NA | Med. NA | Peri. NA | Ext. circ. |\n"
      "|---|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", circ_label(r.condition),
                       plane_label(r.condition), r.n_keep, r.n_scored, r.segment_na[0], r.segment_na[1],
                       r.segment_na[2], r.external_circulation);
  }
  return out;
}

namespace {

std::string format_stat(const SummaryStat& s) {
  if (!s.mean) return "";
  if (!s.sd) return fmt::format("{:.2f}", *s.mean);
  return fmt::format("{:.2f} ± {:.2f}", *s.mean, *s.sd);
}

}  // namespace

std::string format_condition_summary(const std::vector<ConditionSummaryRow>& rows) {
  std::string out =
      "| Circ. | Plane | N_images | Overall | Prox. | Med. | Peri. |\n"
      "|---|---|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", circ_label(r.condition), plane_label(r.condition),
                       r.n_images, format_stat(r.overall), format_stat(r.segments[0]), format_stat(r.segments[1]),
                       format_stat(r.segments[2]));
  }
  return out;
}

IccResult icc(const std::vector<std::vector<double>>& matrix) {
  const auto n = matrix.size();
  if (n < 2) throw ValidationError(fmt::format("ICC needs at least 2 targets, got {}", n));
  const auto k = matrix.front().size();
  if (k < 2) throw ValidationError(fmt::format("ICC needs at least 2 raters, got {}", k));
  for (const auto& row : matrix) {
    if (row.size() != k) throw ValidationError("ICC matrix rows differ in length");
    for (double v : row) {
      if (!std::isfinite(v)) throw ValidationError("ICC matrix has a non-finite entry");
    }
  }
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += matrix[i][j] / dk;
      col_mean[j] += matrix[i][j] / dn;
      grand += matrix[i][j];
    }
  }
  grand /= dn * dk;
  double ss_rows = 0.0, ss_cols = 0.0, ss_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss_rows += dk * (row_mean[i] - grand) * (row_mean[i] - grand);
  for (std::size_t j = 0; j < k; ++j) ss_cols += dn * (col_mean[j] - grand) * (col_mean[j] - grand);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double e = matrix[i][j] - row_mean[i] - col_mean[j] + grand;
      ss_err += e * e;
    }
  }
  if (ss_rows + ss_cols + ss_err == 0.0) throw IccUndefinedError("ICC undefined: ratings have zero total variance");
  const double msr = ss_rows / (dn - 1.0);
  const double msc = ss_cols / (dk - 1.0);
  const double mse = ss_err / ((dn - 1.0) * (dk - 1.0));
  const double den_single = msr + (dk - 1.0) * mse + (dk / dn) * (msc - mse);
  const double den_average = msr + (msc - mse) / dn;
  if (den_single == 0.0 || den_average == 0.0) throw IccUndefinedError("ICC undefined: zero denominator");
  return {(msr - mse) / den_single, (msr - mse) / den_average};
}

std::string_view to_string(IccMissing m) { return m == IccMissing::CompleteCase ? "complete-case" : "row-mean"; }

std::string_view to_string(IccOverallUnit u) {
  return u == IccOverallUnit::RaterMean ? "rater-mean" : "segment-pooled";
}

IccMissing parse_icc_missing(std::string_view s) {
  if (s == "complete-case") return IccMissing::CompleteCase;
  if (s == "row-mean") return IccMissing::RowMean;
  throw ValidationError(fmt::format("unknown ICC missing-data policy '{}' (complete-case, row-mean)", s));
}

IccOverallUnit parse_icc_overall_unit(std::string_view s) {
  if (s == "rater-mean") return IccOverallUnit::RaterMean;
  if (s == "segment-pooled") return IccOverallUnit::SegmentPooled;
  throw ValidationError(fmt::format("unknown ICC overall unit '{}' (rater-mean, segment-pooled)", s));
}

namespace {

/// One image's value per rater (nullopt where the rater gave no likert).
std::vector<std::optional<double>> rater_values(const std::map<std::string, RatingRecord>& by_rater,
                                                const std::vector<std::string>& raters,
                                                std::optional<Segment> segment) {
  std::vector<std::optional<double>> out;
  for (const auto& rater : raters) {
    const auto it = by_rater.find(rater);
    if (it == by_rater.end() || it->second.external_circulation) {
      out.emplace_back();
      continue;
    }
    const auto& r = it->second;
    if (segment) {
      const auto v = likert(r.segments[static_cast<std::size_t>(*segment)]);
      out.push_back(v ? std::optional<double>(*v) : std::nullopt);
      continue;
    }
    double sum = 0.0;
    int count = 0;
    for (const auto& e : r.segments) {
      if (const auto v = likert(e)) {
        sum += *v;
        ++count;
      }
    }
    out.push_back(count ? std::optional<double>(sum / count) : std::nullopt);
  }
  return out;
}

void add_row(IccMatrix& m, const std::vector<std::optional<double>>& values, IccMissing missing) {
  double sum = 0.0;
  std::size_t present = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++present;
    }
  }
  if (present == values.size()) {
    std::vector<double> row;
    for (const auto& v : values) row.push_back(*v);
    m.rows.push_back(std::move(row));
  } else if (missing == IccMissing::RowMean && present > 0) {
    std::vector<double> row;
    for (const auto& v : values) row.push_back(v ? *v : sum / static_cast<double>(present));
    m.imputed += values.size() - present;
    m.rows.push_back(std::move(row));
  } else {
    ++m.dropped;
  }
}

}  // namespace

IccMatrix icc_matrix(const std::vector<RatingRecord>& ratings, const std::vector<std::string>& raters,
                     std::optional<Segment> segment, const IccOptions& options) {
  const auto indexed = index_ratings(ratings);
  IccMatrix m;
  for (const auto& [image, by_rater] : indexed) {
    if (!segment && options.overall_unit == IccOverallUnit::SegmentPooled) {
      for (auto seg : kSegments) add_row(m, rater_values(by_rater, raters, seg), options.missing);
    } else {
      add_row(m, rater_values(by_rater, raters, segment), options.missing);
    }
  }
  return m;
}

std::pair<std::vector<std::vector<double>>, std::size_t> complete_case_matrix(
    const std::vector<RatingRecord>& ratings, const std::vector<std::string>& raters, std::optional<Segment> segment) {
  auto m = icc_matrix(ratings, raters, segment, IccOptions{});
  return {std::move(m.rows), m.dropped};
}

namespace {

IccCell icc_cell(const std::vector<RatingRecord>& ratings, const std::vector<std::string>& raters,
                 std::optional<Segment> segment, const IccOptions& options) {
  IccCell cell;
  cell.k = raters.size();
  auto m = icc_matrix(ratings, raters, segment, options);
  cell.n_used = m.rows.size();
  cell.n_dropped = m.dropped;
  if (raters.size() < 2) {
    cell.note = "fewer than 2 raters";
  } else if (m.rows.size() < 2) {
    cell.note = "fewer than 2 usable images";
  } else {
    try {
      cell.value = icc(m.rows);
    } catch (const IccUndefinedError& e) {
      cell.note = e.what();
    }
  }
  if (m.imputed > 0) {
    cell.note += fmt::format("{}{} cells filled with the image mean", cell.note.empty() ? "" : "; ", m.imputed);
  }
  return cell;
}

}  // namespace

std::vector<IccTableRow> icc_table(const std::vector<RatingRecord>& ratings, const IccOptions& options) {
  std::map<std::string, RaterRole> roster;
  for (const auto& r : ratings) roster[r.rater_id] = r.rater_role;
  std::vector<std::string> all, experts;
  for (const auto& [id, role] : roster) {
    all.push_back(id);
    if (role == RaterRole::NR || role == RaterRole::NS) experts.push_back(id);
  }
  std::vector<IccTableRow> rows;
  for (auto seg : kSegments) {
    rows.push_back({std::string(to_string(seg)), icc_cell(ratings, all, seg, options),
                    icc_cell(ratings, experts, seg, options)});
  }
  rows.push_back({"Overall", icc_cell(ratings, all, std::nullopt, options),
                  icc_cell(ratings, experts, std::nullopt, options)});
  return rows;
}

std::string format_icc_table(const std::vector<IccTableRow>& rows) {
  const auto num = [](const IccCell& c, bool single) {
    if (!c.value) return std::string("-");
    return fmt::format("{:.3f}", single ? c.value->single : c.value->average);
  };
  std::string out =
      "| Region | All raters ICC(2,1) | All raters ICC(2,k) | Domain experts ICC(2,1) | Domain experts ICC(2,k) |\n"
      "|---|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {} | {} | {} | {} |\n", r.region, num(r.all_raters, true), num(r.all_raters, false),
                       num(r.domain_experts, true), num(r.domain_experts, false));
  }
  out += "\nImages used / dropped, raters:\n\n";
  for (const auto& r : rows) {
    const auto cell = [](const IccCell& c) {
      auto s = fmt::format("{}/{}, k={}", c.n_used, c.n_dropped, c.k);
      if (!c.note.empty()) s += fmt::format(" ({})", c.note);
      return s;
    };
    out += fmt::format("- {}: all raters {}; domain experts {}\n", r.region, cell(r.all_raters), cell(r.domain_experts));
  }
  return out;
}

}  // namespace angiodiff
