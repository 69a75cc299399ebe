#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "loupe/image.hpp"

namespace loupe {

// Training corpus: equally sized grayscale images with values in [0,1].
// Pixels are stored as f32, matching the on-disk format exactly so that
// save/load is a bitwise identity.
struct Dataset {
    int height = 0;
    int width = 0;
    std::vector<std::vector<float>> images;  // row major, height*width each
    std::string provenance;

    std::size_t count() const { return images.size(); }

    template <typename T = double>
    BasicImage<T> image(std::size_t i) const {
        BasicImage<T> out(height, width);
        for (std::size_t k = 0; k < images[i].size(); ++k)
            out.values[k] = static_cast<T>(images[i][k]);
        return out;
    }
};

// Piecewise-smooth synthetic phantoms: a bright enclosing "skull" ellipse plus
// 4-9 random interior ellipses, box blurred and rescaled so max = 1.
// Deterministic per (n, h, w, seed); image i depends only on seed and i.
Dataset generate_phantoms(int n, int h, int w, std::uint64_t seed);

struct SplitFractions {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

// Seeded permutation followed by a contiguous cut. Sizes are floor(fraction*n)
// with the remainder assigned to train. Throws if any split would be empty.
std::array<Dataset, 3> split(const Dataset& ds, const SplitFractions& fractions, std::uint64_t seed);

// "LPTD" container: magic, u32 version, u32 count, u32 height, u32 width,
// then count*h*w little-endian f32, image major, row major.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace loupe
