// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/fingerprint.hpp"

#include <cstdint>
#include <cstdio>

namespace jerkrom {

std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace jerkrom
