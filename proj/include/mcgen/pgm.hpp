#ifndef MCGEN_PGM_HPP
#define MCGEN_PGM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mcgen/common.hpp"

namespace mcgen {

// Raw binary PNM payload: P5 (1 channel) or P6 (3 channels), maxval 255.
// Raster bytes are row-major, channels interleaved per pixel for P6.
struct PnmImage {
  int channels = 1;
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> bytes;
};

void write_pnm(const std::string& path, const PnmImage& img);
PnmImage read_pnm(const std::string& path);

}  // namespace mcgen

#endif  // MCGEN_PGM_HPP
