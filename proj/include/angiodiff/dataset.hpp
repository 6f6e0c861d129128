// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace angiodiff {

enum class Circulation { AC, PC, OTHER };
enum class Plane { A, B };
enum class Phase { ARTERIAL, NON_ARTERIAL, UNLABELED };

std::string_view to_string(Circulation c);
std::string_view to_string(Plane p);
std::string_view to_string(Phase p);
Circulation parse_circulation(std::string_view s);
Plane parse_plane(std::string_view s);
Phase parse_phase(std::string_view s);

/// One image frame with acquisition metadata.
struct FrameRecord {
  std::string study_id;
  std::string series_id;
  std::uint32_t frame_index = 0;
  std::string image_path;
  Circulation circulation = Circulation::OTHER;
  Plane plane = Plane::A;
  double primary_angle_deg = 0.0;
  double secondary_angle_deg = 0.0;
  Phase phase = Phase::UNLABELED;
  /// Present only when the phase was assigned by the classifier.
  std::optional<double> phase_score;

  bool operator==(const FrameRecord&) const = default;
};

/// Canonical C-arm orientation bins. Frontal is (0, 0), lateral is (-90, 0).
enum class AngleBin { Frontal, Lateral, Others };

inline constexpr double kAngleToleranceDeg = 5.0;

/// Bins a (primary, secondary) angle pair. The ±5° boundary is inclusive.
/// Throws ValidationError on non-finite input.
AngleBin bin_angles(double primary_deg, double secondary_deg);

/// The four canonical circulation/plane conditions, in corpus-table order.
enum class ConditionId { AC_A, PC_A, AC_B, PC_B };
inline constexpr std::array<ConditionId, 4> kCanonicalConditions = {
    ConditionId::AC_A, ConditionId::PC_A, ConditionId::AC_B, ConditionId::PC_B};

std::string_view to_string(ConditionId id);  // "AC-A" ...
ConditionId parse_condition_id(std::string_view s);
Circulation circulation_of(ConditionId id);
Plane plane_of(ConditionId id);
ConditionId make_condition_id(Circulation c, Plane p);
/// Canonical (primary, secondary) angles of a plane.
std::pair<double, double> canonical_angles(Plane p);

/// A canonical condition tuple plus its rendered prompt sentence.
struct ConditionSpec {
  Circulation circulation = Circulation::AC;
  Plane plane = Plane::A;
  double primary_angle_deg = 0.0;
  double secondary_angle_deg = 0.0;
  std::string prompt;

  ConditionId id() const { return make_condition_id(circulation, plane); }
  bool operator==(const ConditionSpec&) const = default;
};

/// Canonical condition of a frame, or nullopt for the "Others" bucket.
/// A frame is canonical iff it is AC/PC and its angles bin to its plane's
/// canonical orientation.
std::optional<ConditionId> condition_of(const FrameRecord& frame);

/// Per-stage accounting entry. `unit` is "series" or "frames".
struct StageAudit {
  std::string stage;
  std::string unit;
  std::uint64_t input = 0;
  std::uint64_t retained = 0;
  std::uint64_t excluded = 0;

  bool conserves() const { return input == retained + excluded; }
  bool operator==(const StageAudit&) const = default;
};

struct CorpusManifest {
  std::vector<FrameRecord> records;
  std::vector<StageAudit> provenance;
  std::vector<std::string> warnings;
  /// Directory relative image paths are resolved against. Not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const FrameRecord& r) const;
  std::size_t series_count() const;
};

/// Keeps only AC/PC records. Accounting is done in series.
CorpusManifest filter_series(const CorpusManifest& manifest);

/// Keeps records whose phase is ARTERIAL. Accounting is done in frames.
CorpusManifest arterial_frames(const CorpusManifest& manifest);

struct ConditionCounts {
  std::array<std::uint64_t, 4> canonical{};  // indexed by ConditionId
  std::uint64_t others = 0;
  std::uint64_t total = 0;

  std::uint64_t count(ConditionId id) const { return canonical[static_cast<std::size_t>(id)]; }
  double proportion(ConditionId id) const;
  double others_proportion() const;
};

/// Per-bin counts over all records of the manifest.
ConditionCounts summarize_conditions(const CorpusManifest& manifest);
/// Corpus-table rendering (counts and percentages to one decimal).
std::string format_condition_table(const ConditionCounts& counts);

/// Line-delimited, tab-separated manifest. Comment lines start with '#'.
void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
std::string serialize_manifest(const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);
CorpusManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});

}  // namespace angiodiff
