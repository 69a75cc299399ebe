#pragma once

#include <filesystem>

#include "loupe/image.hpp"
#include "loupe/mask.hpp"

namespace loupe {

// Binary 8-bit PGM (P5), maxval 255, row major. Images are expected in [0,1]
// and stored as round(255*v); masks as 255 (sampled) / 0 (not sampled).

void write_pgm(const std::filesystem::path& path, const RealImage& img);
void write_pgm(const std::filesystem::path& path, const BinaryMask& mask);

RealImage read_pgm(const std::filesystem::path& path);  // values scaled back to [0,1]

// Bytes >= 128 map to 1. Round-trips masks written by write_pgm.
BinaryMask read_pgm_mask(const std::filesystem::path& path);

}  // namespace loupe
