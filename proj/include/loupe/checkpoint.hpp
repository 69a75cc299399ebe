#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "loupe/image.hpp"
#include "loupe/unet.hpp"

namespace loupe {

// "LPNW" checkpoint: magic, u32 version, u32 depth, u32 base_channels,
// f64 leaky_slope, then per conv (kernel, bias) and per batch norm
// (gamma, beta, running_mean, running_var) as little-endian f64 in the
// fixed layer order, then u32 extra-tensor count and per extra tensor
// (u32 name length, name bytes, u32 height, u32 width, f64 values).
// Learned-mask checkpoints carry the extra tensor "mask_weights".
struct Checkpoint {
    NetworkParams<double> net;
    std::vector<std::pair<std::string, RealImage>> extra;

    const RealImage* find(const std::string& name) const {
        for (const auto& [n, img] : extra)
            if (n == name) return &img;
        return nullptr;
    }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace loupe
