// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "angiodiff/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <regex>

#include <fmt/format.h>

#include "angiodiff/common.hpp"

namespace angiodiff {

std::string render_prompt(Circulation circulation, Plane plane, double primary_deg, double secondary_deg) {
  std::string_view article_word;
  switch (circulation) {
    case Circulation::AC: article_word = "an anterior"; break;
    case Circulation::PC: article_word = "a posterior"; break;
    case Circulation::OTHER: throw ValidationError("no prompt for circulation OTHER");
  }
  const long primary = std::lround(primary_deg);
  const long secondary = std::lround(secondary_deg);
  return fmt::format(
      "This is {} DSA scan taken in Plane {}, with a primary angle of {}° and a secondary angle of {}°.",
      article_word, to_string(plane), primary, secondary);
}

std::string render_prompt(const ConditionSpec& spec) {
  return render_prompt(spec.circulation, spec.plane, spec.primary_angle_deg, spec.secondary_angle_deg);
}

ConditionSpec canonical_condition(ConditionId id) {
  ConditionSpec spec;
  spec.circulation = circulation_of(id);
  spec.plane = plane_of(id);
  std::tie(spec.primary_angle_deg, spec.secondary_angle_deg) = canonical_angles(spec.plane);
  spec.prompt = render_prompt(spec);
  return spec;
}

ConditionSpec parse_prompt(std::string_view prompt) {
  static const std::regex re(
      "This is (an anterior|a posterior) DSA scan taken in Plane (A|B), with a primary angle of (-?[0-9]+)° "
      "and a secondary angle of (-?[0-9]+)°\\.");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(prompt.begin(), prompt.end(), m, re)) {
    throw ValidationError(fmt::format("prompt does not follow the condition template: '{}'", prompt));
  }
  ConditionSpec spec;
  spec.circulation = m[1].str() == "an anterior" ? Circulation::AC : Circulation::PC;
  spec.plane = m[2].str() == "A" ? Plane::A : Plane::B;
  spec.primary_angle_deg = std::stod(m[3].str());
  spec.secondary_angle_deg = std::stod(m[4].str());
  spec.prompt = std::string(prompt);
  return spec;
}

std::string prompt_for(const FrameRecord& frame) {
  return render_prompt(frame.circulation, frame.plane, frame.primary_angle_deg, frame.secondary_angle_deg);
}

Tokenizer::Tokenizer()
    : vocab_{"[PAD]", "[CLS]", "[UNK]", "This", "is",  "an",    "a",       "anterior", "posterior",
             "DSA",   "scan",  "taken", "in",   "Plane", "A",   "B",       "with",     "primary",
             "angle", "of",    "and",   "secondary", ",", ".",  "°",  "-",        "0",
             "1",     "2",     "3",     "4",    "5",    "6",    "7",       "8",        "9"} {}

std::vector<std::string> Tokenizer::pieces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (std::isalpha(c)) {
      std::size_t j = i;
      while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (c >= 0x80) {
      // One UTF-8 code point.
      std::size_t j = i + 1;
      while (j < text.size() && (static_cast<unsigned char>(text[j]) & 0xC0) == 0x80) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

std::vector<std::int64_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int64_t> ids{kCls};
  for (const auto& piece : pieces(text)) {
    const auto it = std::find(vocab_.begin(), vocab_.end(), piece);
    ids.push_back(it == vocab_.end() ? kUnk : static_cast<std::int64_t>(it - vocab_.begin()));
  }
  return ids;
}

}  // namespace angiodiff
