#include "loupe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "loupe/errors.hpp"
#include "loupe/rng.hpp"
#include "loupe/serialize.hpp"

namespace loupe {

namespace {

struct Ellipse {
    double cy, cx;      // center, pixels
    double ay, ax;      // semi-axes, pixels
    double angle;       // rotation, radians
    double intensity;
};

void add_ellipse(std::vector<double>& img, int h, int w, const Ellipse& e) {
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dy = y - e.cy, dx = x - e.cx;
            const double ry = c * dy - s * dx;
            const double rx = s * dy + c * dx;
            const double d = (ry * ry) / (e.ay * e.ay) + (rx * rx) / (e.ax * e.ax);
            if (d <= 1.0) img[static_cast<std::size_t>(y) * w + x] += e.intensity;
        }
}

// Mean over the in-bounds 3x3 neighborhood.
std::vector<double> box_blur(const std::vector<double>& img, int h, int w) {
    std::vector<double> out(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    sum += img[static_cast<std::size_t>(yy) * w + xx];
                    ++n;
                }
            out[static_cast<std::size_t>(y) * w + x] = sum / n;
        }
    return out;
}

std::vector<float> make_phantom(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> img(static_cast<std::size_t>(h) * w, 0.0);

    Ellipse skull;
    skull.cy = h * (0.5 + 0.02 * (rng.uniform() - 0.5));
    skull.cx = w * (0.5 + 0.02 * (rng.uniform() - 0.5));
    skull.ay = h * (0.38 + 0.06 * rng.uniform());
    skull.ax = w * (0.38 + 0.06 * rng.uniform());
    skull.angle = 0.0;
    skull.intensity = 0.2 + 0.8 * rng.uniform();
    add_ellipse(img, h, w, skull);

    const int n_inner = 4 + static_cast<int>(rng.below(6));  // 4..9
    for (int k = 0; k < n_inner; ++k) {
        Ellipse e;
        e.cy = h * (0.25 + 0.5 * rng.uniform());
        e.cx = w * (0.25 + 0.5 * rng.uniform());
        const double lo = 0.05 * std::min(h, w), hi = 0.22 * std::min(h, w);
        e.ay = lo + (hi - lo) * rng.uniform();
        e.ax = lo + (hi - lo) * rng.uniform();
        e.angle = 3.141592653589793 * rng.uniform();
        e.intensity = 0.2 + 0.8 * rng.uniform();
        add_ellipse(img, h, w, e);
    }

    img = box_blur(img, h, w);
    const double peak = *std::max_element(img.begin(), img.end());
    std::vector<float> out(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = static_cast<float>(img[i] / peak);  // skull guarantees peak >= 0.2
    return out;
}

}  // namespace

Dataset generate_phantoms(int n, int h, int w, std::uint64_t seed) {
    if (n < 1) throw ValueError("generate_phantoms: need at least one image");
    if (h < 16 || w < 16) throw ValueError("generate_phantoms: minimum size is 16x16");
    Dataset ds;
    ds.height = h;
    ds.width = w;
    ds.provenance = "ellipse-phantoms seed=" + std::to_string(seed);
    ds.images.resize(n);
    for (int i = 0; i < n; ++i)
        ds.images[i] = make_phantom(h, w, Rng::derive_seed(seed, static_cast<std::uint64_t>(i)));
    return ds;
}

std::array<Dataset, 3> split(const Dataset& ds, const SplitFractions& fr, std::uint64_t seed) {
    if (!(fr.train > 0.0 && fr.val > 0.0 && fr.test > 0.0))
        throw ValueError("split: all fractions must be positive");
    if (std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
        throw ValueError("split: fractions must sum to 1");
    const std::size_t n = ds.count();
    std::size_t n_val = static_cast<std::size_t>(std::floor(fr.val * n));
    std::size_t n_test = static_cast<std::size_t>(std::floor(fr.test * n));
    std::size_t n_train = n - n_val - n_test;  // remainder goes to train
    if (n_train == 0 || n_val == 0 || n_test == 0) throw ValueError("split: a split would be empty");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);

    auto take = [&](std::size_t begin, std::size_t count, const char* tag) {
        Dataset part;
        part.height = ds.height;
        part.width = ds.width;
        part.provenance = ds.provenance + " " + tag;
        part.images.reserve(count);
        for (std::size_t i = 0; i < count; ++i) part.images.push_back(ds.images[order[begin + i]]);
        return part;
    };
    return {take(0, n_train, "train"), take(n_train, n_val, "val"),
            take(n_train + n_val, n_test, "test")};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    if (ds.count() == 0) throw ValueError("save_dataset: empty dataset");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("LPTD", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(ds.count()));
    write_u32(os, static_cast<std::uint32_t>(ds.height));
    write_u32(os, static_cast<std::uint32_t>(ds.width));
    for (const auto& img : ds.images)
        for (float v : img) write_f32(os, v);
    if (!os) throw IoError("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    expect_magic(is, "LPTD", "dataset");
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw FormatError("dataset: unsupported version");
    const std::uint32_t count = read_u32(is);
    const std::uint32_t h = read_u32(is);
    const std::uint32_t w = read_u32(is);
    if (count == 0) throw FormatError("dataset: zero image count");
    if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20) ||
        static_cast<std::uint64_t>(count) * h * w > (1ull << 34))
        throw DimensionOverflowError("dataset: header dimensions out of range");

    // verify the payload length against the header before reading
    const auto header_end = is.tellg();
    is.seekg(0, std::ios::end);
    const auto file_end = is.tellg();
    is.seekg(header_end);
    const std::uint64_t expect = static_cast<std::uint64_t>(count) * h * w * 4;
    if (static_cast<std::uint64_t>(file_end - header_end) < expect)
        throw TruncatedFileError("dataset: file shorter than header-declared image count");

    Dataset ds;
    ds.height = static_cast<int>(h);
    ds.width = static_cast<int>(w);
    ds.provenance = "loaded " + path.filename().string();
    ds.images.resize(count);
    for (auto& img : ds.images) {
        img.resize(static_cast<std::size_t>(h) * w);
        for (auto& v : img) v = read_f32(is);
    }
    return ds;
}

}  // namespace loupe
