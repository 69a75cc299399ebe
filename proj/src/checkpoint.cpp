#include "loupe/checkpoint.hpp"

#include <fstream>

#include "loupe/serialize.hpp"

namespace loupe {

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("LPNW", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(ckpt.net.config.depth));
    write_u32(os, static_cast<std::uint32_t>(ckpt.net.config.base_channels));
    write_f64(os, ckpt.net.config.leaky_slope);
    for (const auto& c : ckpt.net.convs) {
        for (double v : c.kernel) write_f64(os, v);
        for (double v : c.bias) write_f64(os, v);
    }
    for (const auto& b : ckpt.net.norms) {
        for (double v : b.gamma) write_f64(os, v);
        for (double v : b.beta) write_f64(os, v);
        for (double v : b.running_mean) write_f64(os, v);
        for (double v : b.running_var) write_f64(os, v);
    }
    write_u32(os, static_cast<std::uint32_t>(ckpt.extra.size()));
    for (const auto& [name, img] : ckpt.extra) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(img.height));
        write_u32(os, static_cast<std::uint32_t>(img.width));
        for (double v : img.values) write_f64(os, v);
    }
    if (!os) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    expect_magic(is, "LPNW", "checkpoint");
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw FormatError("checkpoint: unsupported version");

    NetworkConfig cfg;
    cfg.depth = static_cast<int>(read_u32(is));
    cfg.base_channels = static_cast<int>(read_u32(is));
    cfg.leaky_slope = read_f64(is);
    if (cfg.depth < 1 || cfg.depth > 16 || cfg.base_channels < 1 || cfg.base_channels > 4096)
        throw DimensionOverflowError("checkpoint: config out of range");
    cfg.validate();

    Checkpoint ckpt;
    Rng dummy(0);
    ckpt.net = init_params<double>(cfg, dummy);  // allocates the right shapes
    ckpt.net.training = false;
    for (auto& c : ckpt.net.convs) {
        for (auto& v : c.kernel) v = read_f64(is);
        for (auto& v : c.bias) v = read_f64(is);
    }
    for (auto& b : ckpt.net.norms) {
        for (auto& v : b.gamma) v = read_f64(is);
        for (auto& v : b.beta) v = read_f64(is);
        for (auto& v : b.running_mean) v = read_f64(is);
        for (auto& v : b.running_var) v = read_f64(is);
    }
    const std::uint32_t n_extra = read_u32(is);
    if (n_extra > 1024) throw DimensionOverflowError("checkpoint: too many extra tensors");
    for (std::uint32_t i = 0; i < n_extra; ++i) {
        const std::uint32_t name_len = read_u32(is);
        if (name_len > 4096) throw DimensionOverflowError("checkpoint: tensor name too long");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw TruncatedFileError("checkpoint: truncated tensor name");
        const std::uint32_t h = read_u32(is);
        const std::uint32_t w = read_u32(is);
        if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
            throw DimensionOverflowError("checkpoint: tensor dimensions out of range");
        RealImage img(static_cast<int>(h), static_cast<int>(w));
        for (auto& v : img.values) v = read_f64(is);
        ckpt.extra.emplace_back(std::move(name), std::move(img));
    }
    return ckpt;
}

}  // namespace loupe
