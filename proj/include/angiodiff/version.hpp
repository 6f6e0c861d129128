// Copyright (C) 2026 The angiodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace angiodiff {

inline constexpr const char* kVersion = ANGIODIFF_VERSION;

}  // namespace angiodiff
