// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace angiodiff {

/// Raised for malformed inputs, out-of-range parameters and broken
/// preconditions. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine meets an ill-conditioned input
/// (e.g. a covariance that is not positive semi-definite).
class ConditioningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seed fan-out. Child seeds are a splitmix64 mix of the parent and a label,
/// so any stage / batch / image can be regenerated without replaying its
/// siblings.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

std::uint64_t splitmix64(std::uint64_t x);

/// Hex-encoded SHA-256 of a byte string / file.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// UTC timestamp formatted as ISO-8601 with second resolution.
std::string iso8601_now();

/// Splits on a single character, keeping empty fields.
std::vector<std::string> split(std::string_view line, char sep);

/// Torch threads are pinned to one so runs are bit-reproducible.
void configure_torch_determinism();

}  // namespace angiodiff
