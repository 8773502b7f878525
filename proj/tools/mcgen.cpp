// Placeholder entry point; the full command set lands with the CLI module.
#include <cstdio>

#include "mcgen/common.hpp"

int main() {
  std::printf("mcgen %s\n", mcgen::kEngineVersion);
  return 0;
}
