#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "loupe/errors.hpp"

namespace loupe {

// Dense H x W grid, row major.
template <typename T>
struct BasicImage {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    BasicImage() = default;
    BasicImage(int h, int w, T fill = T{}) : height(h), width(w) {
        if (h <= 0 || w <= 0) throw DimensionError("image dimensions must be positive");
        values.assign(static_cast<std::size_t>(h) * w, fill);
    }

    T& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }

    bool same_shape(const BasicImage& other) const {
        return height == other.height && width == other.width;
    }

    template <typename U>
    BasicImage<U> cast() const {
        BasicImage<U> out(height, width);
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

using RealImage = BasicImage<double>;

// Complex grid stored as separate real/imaginary planes.
template <typename T>
struct BasicComplexImage {
    int height = 0;
    int width = 0;
    std::vector<T> re;
    std::vector<T> im;

    BasicComplexImage() = default;
    BasicComplexImage(int h, int w) : height(h), width(w) {
        if (h <= 0 || w <= 0) throw DimensionError("image dimensions must be positive");
        re.assign(static_cast<std::size_t>(h) * w, T{});
        im.assign(static_cast<std::size_t>(h) * w, T{});
    }

    std::size_t size() const { return re.size(); }

    bool same_shape(const BasicComplexImage& other) const {
        return height == other.height && width == other.width;
    }
};

using ComplexImage = BasicComplexImage<double>;

template <typename T>
BasicComplexImage<T> as_complex(const BasicImage<T>& real) {
    BasicComplexImage<T> out(real.height, real.width);
    out.re = real.values;
    return out;
}

template <typename T>
BasicImage<T> magnitude(const BasicComplexImage<T>& z) {
    BasicImage<T> out(z.height, z.width);
    for (std::size_t i = 0; i < z.size(); ++i)
        out.values[i] = std::sqrt(z.re[i] * z.re[i] + z.im[i] * z.im[i]);
    return out;
}

template <typename T>
bool all_finite(const BasicImage<T>& img) {
    for (T v : img.values)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
bool all_finite(const BasicComplexImage<T>& img) {
    for (std::size_t i = 0; i < img.size(); ++i)
        if (!std::isfinite(static_cast<double>(img.re[i])) ||
            !std::isfinite(static_cast<double>(img.im[i])))
            return false;
    return true;
}

template <typename T>
double max_abs_diff(const BasicImage<T>& a, const BasicImage<T>& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.values[i]) - static_cast<double>(b.values[i])));
    return m;
}

template <typename T>
double max_abs_diff(const BasicComplexImage<T>& a, const BasicComplexImage<T>& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.re[i]) - static_cast<double>(b.re[i])));
        m = std::max(m, std::abs(static_cast<double>(a.im[i]) - static_cast<double>(b.im[i])));
    }
    return m;
}

}  // namespace loupe
