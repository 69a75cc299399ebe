#include "loupe/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace loupe {

namespace {

struct CalibRect {
    int y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open

    bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
    long long area() const { return static_cast<long long>(y1 - y0) * (x1 - x0); }
};

CalibRect calib_rect(int h, int w, int calib) {
    if (calib < 0) throw ValueError("calibration size must be nonnegative");
    if (calib > h || calib > w) throw ValueError("calibration block larger than grid");
    CalibRect r;
    r.y0 = (h - calib) / 2;
    r.y1 = r.y0 + calib;
    r.x0 = (w - calib) / 2;
    r.x1 = r.x0 + calib;
    return r;
}

void check_rate(double rate) {
    if (!(rate > 0.0 && rate < 1.0)) throw ValueError("rate must lie strictly between 0 and 1");
}

void check_budget(double rate, long long total, long long calib_area) {
    if (rate * static_cast<double>(total) < static_cast<double>(calib_area))
        throw ValueError("infeasible budget: calibration region alone exceeds the target rate");
}

}  // namespace

BinaryMask binarize(const RealImage& u, const ProbabilisticMask& p) {
    if (!u.same_shape(p)) throw DimensionError("binarize: shape mismatch");
    BinaryMask mask(u.height, u.width);
    for (std::size_t i = 0; i < u.size(); ++i)
        mask.bits[i] = u.values[i] <= p.values[i] ? 1 : 0;
    return mask;
}

BinaryMask uniform_mask(int h, int w, double rate, int calib, Rng& rng) {
    check_rate(rate);
    const CalibRect cr = calib_rect(h, w, calib);
    const long long total = static_cast<long long>(h) * w;
    check_budget(rate, total, cr.area());
    const double q = (rate * static_cast<double>(total) - static_cast<double>(cr.area())) /
                     static_cast<double>(total - cr.area());
    BinaryMask mask(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (cr.contains(y, x))
                mask.bits[i] = 1;
            else
                mask.bits[i] = rng.uniform() < q ? 1 : 0;
        }
    return mask;
}

namespace {

// Expected sparsity of the variable-density field for a given scale c,
// calibration region counted as fully sampled.
double vardens_expected(const std::vector<double>& gaussian, const CalibRect& cr, int h, int w,
                        double c) {
    double sum = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (cr.contains(y, x))
                sum += 1.0;
            else
                sum += std::min(1.0, c * gaussian[static_cast<std::size_t>(y) * w + x]);
        }
    return sum / (static_cast<double>(h) * w);
}

}  // namespace

BinaryMask variable_density_mask(int h, int w, double rate, int calib, Rng& rng, double sigma) {
    check_rate(rate);
    const CalibRect cr = calib_rect(h, w, calib);
    const long long total = static_cast<long long>(h) * w;
    check_budget(rate, total, cr.area());
    if (sigma <= 0.0) sigma = 0.15 * std::min(h, w);

    const int dc_y = h / 2, dc_x = w / 2;
    std::vector<double> gaussian(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r2 = static_cast<double>(y - dc_y) * (y - dc_y) +
                              static_cast<double>(x - dc_x) * (x - dc_x);
            gaussian[static_cast<std::size_t>(y) * w + x] = std::exp(-r2 / (2.0 * sigma * sigma));
        }

    // Bracket then bisect the proportionality constant; the expectation is
    // monotone nondecreasing in c and saturates at 1 once everything clips.
    double lo = 0.0, hi = 1.0;
    while (vardens_expected(gaussian, cr, h, w, hi) < rate) {
        hi *= 2.0;
        if (hi > 1e12) break;
    }
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (vardens_expected(gaussian, cr, h, w, mid) < rate)
            lo = mid;
        else
            hi = mid;
        if (std::abs(vardens_expected(gaussian, cr, h, w, hi) - rate) <= 1e-5) break;
    }
    const double c = hi;

    BinaryMask mask(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (cr.contains(y, x)) {
                mask.bits[i] = 1;
            } else {
                const double p = std::min(1.0, c * gaussian[i]);
                mask.bits[i] = rng.uniform() < p ? 1 : 0;
            }
        }
    return mask;
}

BinaryMask cartesian_mask(int h, int w, double rate, int calib) {
    check_rate(rate);
    const CalibRect cr = calib_rect(h, w, calib);
    const long long total = static_cast<long long>(h) * w;
    const double line_width = static_cast<double>(w) / static_cast<double>(total);
    const int dc_y = h / 2;

    int best_stride = 0;
    double best_dist = 0.0;
    for (int stride = 1; stride <= h; ++stride) {
        long long ones = cr.area();
        for (int y = 0; y < h; ++y) {
            if (((y - dc_y) % stride + stride) % stride != 0) continue;
            // full row; subtract the overlap with the calibration block
            ones += w;
            if (y >= cr.y0 && y < cr.y1) ones -= (cr.x1 - cr.x0);
        }
        const double achieved = static_cast<double>(ones) / static_cast<double>(total);
        if (achieved > rate + line_width) continue;
        const double dist = std::abs(achieved - rate);
        if (best_stride == 0 || dist < best_dist) {
            best_stride = stride;
            best_dist = dist;
        }
    }
    if (best_stride == 0)
        throw ValueError("infeasible budget: no line stride fits the target rate");

    BinaryMask mask(h, w);
    for (int y = 0; y < h; ++y) {
        const bool line = ((y - dc_y) % best_stride + best_stride) % best_stride == 0;
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            mask.bits[i] = (line || cr.contains(y, x)) ? 1 : 0;
        }
    }
    return mask;
}

BinaryMask mask_from_probability(const ProbabilisticMask& p, double rate) {
    check_rate(rate);
    const std::size_t total = p.size();
    // floor(rate*H*W); the epsilon only absorbs binary representation error of
    // products that are integers in exact arithmetic
    const std::size_t keep =
        static_cast<std::size_t>(std::floor(rate * static_cast<double>(total) + 1e-9));
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return p.values[a] > p.values[b];  // stable sort keeps row-major order among ties
    });
    BinaryMask mask(p.height, p.width);
    for (std::size_t i = 0; i < keep && i < total; ++i) mask.bits[order[i]] = 1;
    return mask;
}

}  // namespace loupe
