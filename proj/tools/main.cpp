// SPDX-License-Identifier: Apache-2.0
#include <malloc.h>

#include <iostream>

#include "app/commands.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees large activation buffers every step; keep
  // them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return jerkrom::app::run(argc, argv, std::cout, std::cerr);
}
