#include "loupe/pgm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "loupe/errors.hpp"

namespace loupe {

namespace {

void write_p5(const std::filesystem::path& path, int h, int w, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

int next_token(std::istream& is) {
    // skips whitespace and '#' comment lines per the PGM grammar
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    if (c == EOF) throw TruncatedFileError("pgm: unexpected end of header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = is.get();
    }
    return value;
}

std::vector<std::uint8_t> read_p5(const std::filesystem::path& path, int& h, int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '5') throw BadMagicError("pgm: not a P5 file");
    w = next_token(is);
    h = next_token(is);
    const int maxval = next_token(is);
    if (w <= 0 || h <= 0) throw DimensionOverflowError("pgm: invalid dimensions");
    if (maxval != 255) throw FormatError("pgm: only maxval 255 is supported");
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw TruncatedFileError("pgm: pixel data shorter than header promises");
    return bytes;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const RealImage& img) {
    std::vector<std::uint8_t> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, img.values[i]));
        bytes[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
    write_p5(path, img.height, img.width, bytes);
}

void write_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> bytes(mask.bits.size());
    for (std::size_t i = 0; i < mask.bits.size(); ++i) bytes[i] = mask.bits[i] ? 255 : 0;
    write_p5(path, mask.height, mask.width, bytes);
}

RealImage read_pgm(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_p5(path, h, w);
    RealImage img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.values[i] = bytes[i] / 255.0;
    return img;
}

BinaryMask read_pgm_mask(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_p5(path, h, w);
    BinaryMask mask(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) mask.bits[i] = bytes[i] >= 128 ? 1 : 0;
    return mask;
}

}  // namespace loupe
