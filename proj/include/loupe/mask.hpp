#pragma once

#include <cstdint>
#include <vector>

#include "loupe/image.hpp"
#include "loupe/rng.hpp"

namespace loupe {

// Unrestricted per-location weights and the probability image derived from
// them share the plain image representation; BinaryMask is a realized 0/1
// sampling pattern in the centered k-space convention.
using MaskWeights = RealImage;
using ProbabilisticMask = RealImage;

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w) {
        if (h <= 0 || w <= 0) throw DimensionError("mask dimensions must be positive");
        bits.assign(static_cast<std::size_t>(h) * w, 0);
    }

    double sparsity() const {
        std::size_t ones = 0;
        for (auto b : bits) ones += b;
        return static_cast<double>(ones) / static_cast<double>(bits.size());
    }

    template <typename T = double>
    BasicImage<T> as_image() const {
        BasicImage<T> img(height, width);
        for (std::size_t i = 0; i < bits.size(); ++i) img.values[i] = static_cast<T>(bits[i]);
        return img;
    }
};

struct SamplerConfig {
    double weight_slope = 5.0;     // steepness of the weights -> probability sigmoid
    double threshold_slope = 200.0;  // steepness of the relaxed threshold
    std::uint64_t seed = 1234;     // stream for the fixed validation noise fields

    void validate() const {
        if (weight_slope <= 0.0 || threshold_slope <= 0.0)
            throw ValueError("sampler slopes must be positive");
    }
};

// probs[i] = 1 / (1 + exp(-slope * w[i]))
template <typename T>
BasicImage<T> weights_to_prob(const BasicImage<T>& weights, T slope) {
    if (slope <= T{0}) throw ValueError("weights_to_prob: slope must be positive");
    BasicImage<T> probs(weights.height, weights.width);
    for (std::size_t i = 0; i < weights.size(); ++i)
        probs.values[i] = T{1} / (T{1} + std::exp(-slope * weights.values[i]));
    return probs;
}

// i.i.d. Uniform[0,1) field; reproducible from the rng state.
template <typename T>
BasicImage<T> sample_uniform_field(Rng& rng, int h, int w) {
    BasicImage<T> field(h, w);
    for (auto& v : field.values) v = static_cast<T>(rng.uniform());
    return field;
}

// Soft mask sigma_slope(p - u): the differentiable surrogate for the event
// u <= p. Converges pointwise to binarize(u, p) as slope grows, except where
// p == u.
template <typename T>
BasicImage<T> relaxed_threshold(const BasicImage<T>& u, const BasicImage<T>& p, T slope) {
    if (!u.same_shape(p)) throw DimensionError("relaxed_threshold: shape mismatch");
    if (slope <= T{0}) throw ValueError("relaxed_threshold: slope must be positive");
    BasicImage<T> soft(u.height, u.width);
    for (std::size_t i = 0; i < u.size(); ++i)
        soft.values[i] = T{1} / (T{1} + std::exp(-slope * (p.values[i] - u.values[i])));
    return soft;
}

// Hard realization: bit = 1 iff u <= p, so E[bit] = p for u ~ Uniform[0,1).
BinaryMask binarize(const RealImage& u, const ProbabilisticMask& p);

template <typename T>
T expected_sparsity(const BasicImage<T>& p) {
    T sum{};
    for (T v : p.values) sum += v;
    return sum / static_cast<T>(p.size());
}

// Benchmark generators. `calib` is the side of a fully sampled square block
// centered on DC (0 disables it). Off-calibration probabilities are reduced so
// the expected overall sparsity, calibration included, equals `rate`.
BinaryMask uniform_mask(int h, int w, double rate, int calib, Rng& rng);

// Per-point probability clip(c * exp(-r^2 / (2 sigma^2))) with r the distance
// to the centered DC point; c is bisected until the expected sparsity matches
// `rate` within 1e-4. sigma <= 0 selects the default 0.15 * min(h, w).
BinaryMask variable_density_mask(int h, int w, double rate, int calib, Rng& rng, double sigma = 0.0);

// Deterministic equispaced full rows through DC plus the calibration block;
// picks the stride whose sparsity is closest to `rate` without exceeding it by
// more than one line.
BinaryMask cartesian_mask(int h, int w, double rate, int calib);

// Deterministic test-time extraction: the floor(rate*H*W) most probable
// locations, ties broken by row-major index.
BinaryMask mask_from_probability(const ProbabilisticMask& p, double rate);

}  // namespace loupe
