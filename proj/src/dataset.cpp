// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/dataset.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

std::string_view to_string(Circulation c) {
  switch (c) {
    case Circulation::AC: return "AC";
    case Circulation::PC: return "PC";
    case Circulation::OTHER: return "OTHER";
  }
  return "?";
}

std::string_view to_string(Plane p) { return p == Plane::A ? "A" : "B"; }

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::ARTERIAL: return "ARTERIAL";
    case Phase::NON_ARTERIAL: return "NON_ARTERIAL";
    case Phase::UNLABELED: return "UNLABELED";
  }
  return "?";
}

Circulation parse_circulation(std::string_view s) {
  if (s == "AC") return Circulation::AC;
  if (s == "PC") return Circulation::PC;
  if (s == "OTHER") return Circulation::OTHER;
  throw ValidationError(fmt::format("unknown circulation '{}'", s));
}

Plane parse_plane(std::string_view s) {
  if (s == "A") return Plane::A;
  if (s == "B") return Plane::B;
  throw ValidationError(fmt::format("unknown plane '{}'", s));
}

Phase parse_phase(std::string_view s) {
  if (s == "ARTERIAL") return Phase::ARTERIAL;
  if (s == "NON_ARTERIAL") return Phase::NON_ARTERIAL;
  if (s == "UNLABELED") return Phase::UNLABELED;
  throw ValidationError(fmt::format("unknown phase '{}'", s));
}

AngleBin bin_angles(double primary_deg, double secondary_deg) {
  if (!std::isfinite(primary_deg) || !std::isfinite(secondary_deg)) {
    throw ValidationError("angles must be finite");
  }
  const auto near = [](double value, double centre) { return std::abs(value - centre) <= kAngleToleranceDeg; };
  if (near(secondary_deg, 0.0)) {
    if (near(primary_deg, 0.0)) return AngleBin::Frontal;
    if (near(primary_deg, -90.0)) return AngleBin::Lateral;
  }
  return AngleBin::Others;
}

std::string_view to_string(ConditionId id) {
  switch (id) {
    case ConditionId::AC_A: return "AC-A";
    case ConditionId::PC_A: return "PC-A";
    case ConditionId::AC_B: return "AC-B";
    case ConditionId::PC_B: return "PC-B";
  }
  return "?";
}

ConditionId parse_condition_id(std::string_view s) {
  for (auto id : kCanonicalConditions) {
    if (to_string(id) == s) return id;
  }
  throw ValidationError(fmt::format("unknown condition id '{}' (expected AC-A, PC-A, AC-B or PC-B)", s));
}

Circulation circulation_of(ConditionId id) {
  return (id == ConditionId::AC_A || id == ConditionId::AC_B) ? Circulation::AC : Circulation::PC;
}

Plane plane_of(ConditionId id) {
  return (id == ConditionId::AC_A || id == ConditionId::PC_A) ? Plane::A : Plane::B;
}

ConditionId make_condition_id(Circulation c, Plane p) {
  if (c == Circulation::OTHER) throw ValidationError("OTHER circulation has no canonical condition");
  if (c == Circulation::AC) return p == Plane::A ? ConditionId::AC_A : ConditionId::AC_B;
  return p == Plane::A ? ConditionId::PC_A : ConditionId::PC_B;
}

std::pair<double, double> canonical_angles(Plane p) {
  return p == Plane::A ? std::pair{0.0, 0.0} : std::pair{-90.0, 0.0};
}

std::optional<ConditionId> condition_of(const FrameRecord& frame) {
  if (frame.circulation == Circulation::OTHER) return std::nullopt;
  const auto bin = bin_angles(frame.primary_angle_deg, frame.secondary_angle_deg);
  const auto expected = frame.plane == Plane::A ? AngleBin::Frontal : AngleBin::Lateral;
  if (bin != expected) return std::nullopt;
  return make_condition_id(frame.circulation, frame.plane);
}

std::filesystem::path CorpusManifest::resolve(const FrameRecord& r) const {
  std::filesystem::path p(r.image_path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

std::size_t CorpusManifest::series_count() const {
  std::set<std::pair<std::string, std::string>> ids;
  for (const auto& r : records) ids.emplace(r.study_id, r.series_id);
  return ids.size();
}

CorpusManifest filter_series(const CorpusManifest& manifest) {
  CorpusManifest out;
  out.provenance = manifest.provenance;
  out.warnings = manifest.warnings;
  out.base_dir = manifest.base_dir;
  std::set<std::pair<std::string, std::string>> kept, dropped;
  for (const auto& r : manifest.records) {
    const auto key = std::pair{r.study_id, r.series_id};
    if (r.circulation == Circulation::AC || r.circulation == Circulation::PC) {
      out.records.push_back(r);
      kept.insert(key);
    } else {
      dropped.insert(key);
    }
  }
  StageAudit audit{"filter-series", "series", manifest.series_count(), kept.size(), dropped.size()};
  if (!audit.conserves()) {
    // A series mixing circulation labels would be counted on both sides.
    throw ValidationError("series with inconsistent circulation labels");
  }
  out.provenance.push_back(audit);
  return out;
}

CorpusManifest arterial_frames(const CorpusManifest& manifest) {
  CorpusManifest out;
  out.provenance = manifest.provenance;
  out.warnings = manifest.warnings;
  out.base_dir = manifest.base_dir;
  for (const auto& r : manifest.records) {
    if (r.phase == Phase::ARTERIAL) out.records.push_back(r);
  }
  out.provenance.push_back(StageAudit{"arterial-phase", "frames", manifest.records.size(), out.records.size(),
                                      manifest.records.size() - out.records.size()});
  return out;
}

double ConditionCounts::proportion(ConditionId id) const {
  return total == 0 ? 0.0 : static_cast<double>(count(id)) / static_cast<double>(total);
}

double ConditionCounts::others_proportion() const {
  return total == 0 ? 0.0 : static_cast<double>(others) / static_cast<double>(total);
}

ConditionCounts summarize_conditions(const CorpusManifest& manifest) {
  ConditionCounts counts;
  for (const auto& r : manifest.records) {
    if (const auto id = condition_of(r)) {
      ++counts.canonical[static_cast<std::size_t>(*id)];
    } else {
      ++counts.others;
    }
    ++counts.total;
  }
  return counts;
}

std::string format_condition_table(const ConditionCounts& counts) {
  std::string out = fmt::format("{:<12}{:<6}{:<12}{:>8}{:>16}\n", "Circulation", "Plane", "Prim./Sec.",
                                "Count", "Proportion (%)");
  for (auto id : kCanonicalConditions) {
    const auto [primary, secondary] = canonical_angles(plane_of(id));
    out += fmt::format("{:<12}{:<6}{:<12}{:>8}{:>16.1f}\n", to_string(circulation_of(id)), to_string(plane_of(id)),
                       fmt::format("{} / {}", primary, secondary), counts.count(id), 100.0 * counts.proportion(id));
  }
  out += fmt::format("{:<30}{:>8}{:>16.1f}\n", "Others", counts.others, 100.0 * counts.others_proportion());
  out += fmt::format("{:<30}{:>8}{:>16.1f}\n", "Total", counts.total, counts.total == 0 ? 0.0 : 100.0);
  return out;
}

namespace {

constexpr std::string_view kManifestHeader =
    "#study_id\tseries_id\tframe_index\timage_path\tcirculation\tplane\tprimary_angle_deg\t"
    "secondary_angle_deg\tphase\tphase_score";

void check_field(std::string_view value, std::string_view name) {
  if (value.find_first_of("\t\n\r") != std::string_view::npos) {
    throw ValidationError(fmt::format("field {} contains a tab or newline", name));
  }
}

double parse_double(std::string_view s, std::string_view field) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError(fmt::format("bad number '{}' in field {}", s, field));
  }
  return v;
}

std::uint64_t parse_uint(std::string_view s, std::string_view field) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError(fmt::format("bad integer '{}' in field {}", s, field));
  }
  return v;
}

}  // namespace

std::string serialize_manifest(const CorpusManifest& manifest) {
  std::string out;
  out += kManifestHeader;
  out += '\n';
  for (const auto& a : manifest.provenance) {
    check_field(a.stage, "stage");
    out += fmt::format("#stage\t{}\t{}\t{}\t{}\t{}\n", a.stage, a.unit, a.input, a.retained, a.excluded);
  }
  for (const auto& w : manifest.warnings) {
    check_field(w, "warning");
    out += fmt::format("#warning\t{}\n", w);
  }
  for (const auto& r : manifest.records) {
    check_field(r.study_id, "study_id");
    check_field(r.series_id, "series_id");
    check_field(r.image_path, "image_path");
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", r.study_id, r.series_id, r.frame_index,
                       r.image_path, to_string(r.circulation), to_string(r.plane), r.primary_angle_deg,
                       r.secondary_angle_deg, to_string(r.phase),
                       r.phase_score ? fmt::format("{}", *r.phase_score) : std::string{});
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  write_text_file(path, serialize_manifest(manifest));
}

CorpusManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  CorpusManifest manifest;
  manifest.base_dir = base_dir;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto fields = split(line, '\t');
      if (fields[0] == "#stage" && fields.size() == 6) {
        manifest.provenance.push_back(StageAudit{fields[1], fields[2], parse_uint(fields[3], "input"),
                                                 parse_uint(fields[4], "retained"),
                                                 parse_uint(fields[5], "excluded")});
      } else if (fields[0] == "#warning" && fields.size() >= 2) {
        manifest.warnings.emplace_back(line.substr(9));
      }
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 10) {
      throw ValidationError(fmt::format("manifest line {}: expected 10 fields, got {}", line_no, f.size()));
    }
    try {
      FrameRecord r;
      r.study_id = f[0];
      r.series_id = f[1];
      r.frame_index = static_cast<std::uint32_t>(parse_uint(f[2], "frame_index"));
      r.image_path = f[3];
      r.circulation = parse_circulation(f[4]);
      r.plane = parse_plane(f[5]);
      r.primary_angle_deg = parse_double(f[6], "primary_angle_deg");
      r.secondary_angle_deg = parse_double(f[7], "secondary_angle_deg");
      r.phase = parse_phase(f[8]);
      if (!f[9].empty()) {
        const double score = parse_double(f[9], "phase_score");
        if (!(score >= 0.0 && score <= 1.0)) throw ValidationError("phase_score outside [0,1]");
        r.phase_score = score;
      }
      manifest.records.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("manifest line {}: {}", line_no, e.what()));
    }
  }
  return manifest;
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.parent_path());
}

}  // namespace angiodiff
