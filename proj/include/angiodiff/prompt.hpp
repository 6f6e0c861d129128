// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "angiodiff/dataset.hpp"

namespace angiodiff {

/// Renders the metadata sentence for a frame. Angles are rounded to whole
/// degrees and written with an ASCII minus sign.
std::string render_prompt(Circulation circulation, Plane plane, double primary_deg, double secondary_deg);
std::string render_prompt(const ConditionSpec& spec);

/// Fully populated canonical spec (angles and prompt) for a condition.
ConditionSpec canonical_condition(ConditionId id);
/// Inverse of render_prompt for template sentences (integer angles).
/// Throws ValidationError for any other text.
ConditionSpec parse_prompt(std::string_view prompt);
/// Prompt of the frame's own metadata; frames outside AC/PC are rejected.
std::string prompt_for(const FrameRecord& frame);

/// Word-level tokenizer over the closed template vocabulary. Digits are
/// separate tokens so any integer angle is expressible.
class Tokenizer {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kCls = 1;
  static constexpr std::int64_t kUnk = 2;

  Tokenizer();

  /// [CLS] followed by one id per piece. Unknown pieces map to [UNK].
  std::vector<std::int64_t> encode(std::string_view text) const;
  static std::vector<std::string> pieces(std::string_view text);

  std::int64_t vocab_size() const { return static_cast<std::int64_t>(vocab_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

 private:
  std::vector<std::string> vocab_;
};

}  // namespace angiodiff
