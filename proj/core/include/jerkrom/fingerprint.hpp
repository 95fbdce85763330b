// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace jerkrom {

/// 64-bit FNV-1a digest of `text` as 16 lowercase hex digits.
std::string fingerprint(std::string_view text);

} // namespace jerkrom
