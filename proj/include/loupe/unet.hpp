#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loupe/image.hpp"
#include "loupe/parallel.hpp"
#include "loupe/rng.hpp"

namespace loupe {

// Residual anti-aliasing U-Net. Input is the two-channel (real, imaginary)
// aliased image; the network output is a residual added to the magnitude of
// the input. Each block is conv 3x3 (zero padded) -> leaky ReLU -> batch
// norm; levels are joined by 2x2 max pooling on the way down and 2x nearest
// neighbor upsampling plus skip concatenation on the way up. A final 1x1
// convolution maps to one channel.

struct NetworkConfig {
    int depth = 3;
    int base_channels = 16;
    double leaky_slope = 0.2;

    void validate() const {
        if (depth < 1) throw ValueError("net: depth must be positive");
        if (base_channels < 1) throw ValueError("net: base_channels must be positive");
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
            throw ValueError("net: leaky_slope must lie in (0,1)");
    }

    int divisor() const { return 1 << (depth - 1); }
};

template <typename T>
struct ConvParams {
    int in_ch = 0, out_ch = 0, ksize = 3;
    std::vector<T> kernel;  // [out][in][ky][kx]
    std::vector<T> bias;    // [out]
};

template <typename T>
struct BatchNormParams {
    int channels = 0;
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
};

template <typename T>
struct NetworkParams {
    NetworkConfig config;
    bool training = false;
    std::vector<ConvParams<T>> convs;      // encoder pairs, decoder pairs, final 1x1
    std::vector<BatchNormParams<T>> norms;  // one per conv except the final

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& c : convs) n += c.kernel.size() + c.bias.size();
        for (const auto& b : norms) n += b.gamma.size() + b.beta.size();
        return n;
    }

    template <typename U>
    NetworkParams<U> cast() const {
        NetworkParams<U> out;
        out.config = config;
        out.training = training;
        out.convs.resize(convs.size());
        for (std::size_t i = 0; i < convs.size(); ++i) {
            out.convs[i].in_ch = convs[i].in_ch;
            out.convs[i].out_ch = convs[i].out_ch;
            out.convs[i].ksize = convs[i].ksize;
            out.convs[i].kernel.assign(convs[i].kernel.begin(), convs[i].kernel.end());
            out.convs[i].bias.assign(convs[i].bias.begin(), convs[i].bias.end());
        }
        out.norms.resize(norms.size());
        for (std::size_t i = 0; i < norms.size(); ++i) {
            out.norms[i].channels = norms[i].channels;
            out.norms[i].gamma.assign(norms[i].gamma.begin(), norms[i].gamma.end());
            out.norms[i].beta.assign(norms[i].beta.begin(), norms[i].beta.end());
            out.norms[i].running_mean.assign(norms[i].running_mean.begin(), norms[i].running_mean.end());
            out.norms[i].running_var.assign(norms[i].running_var.begin(), norms[i].running_var.end());
        }
        return out;
    }
};

namespace netdetail {

inline int enc_in_ch(const NetworkConfig& cfg, int level) {
    return level == 0 ? 2 : cfg.base_channels << (level - 1);
}
inline int level_ch(const NetworkConfig& cfg, int level) { return cfg.base_channels << level; }

// Conv layout: encoder levels 0..depth-1 (two convs each), then decoder
// levels depth-2..0 (two convs each), then the final 1x1.
inline void conv_shapes(const NetworkConfig& cfg, std::vector<std::pair<int, int>>& inout) {
    inout.clear();
    for (int i = 0; i < cfg.depth; ++i) {
        inout.emplace_back(enc_in_ch(cfg, i), level_ch(cfg, i));
        inout.emplace_back(level_ch(cfg, i), level_ch(cfg, i));
    }
    for (int i = cfg.depth - 2; i >= 0; --i) {
        inout.emplace_back(3 * level_ch(cfg, i), level_ch(cfg, i));
        inout.emplace_back(level_ch(cfg, i), level_ch(cfg, i));
    }
    inout.emplace_back(cfg.base_channels, 1);
}

}  // namespace netdetail

template <typename T>
NetworkParams<T> zeros_like(const NetworkParams<T>& params) {
    NetworkParams<T> out;
    out.config = params.config;
    out.training = params.training;
    out.convs.resize(params.convs.size());
    for (std::size_t i = 0; i < params.convs.size(); ++i) {
        out.convs[i].in_ch = params.convs[i].in_ch;
        out.convs[i].out_ch = params.convs[i].out_ch;
        out.convs[i].ksize = params.convs[i].ksize;
        out.convs[i].kernel.assign(params.convs[i].kernel.size(), T{});
        out.convs[i].bias.assign(params.convs[i].bias.size(), T{});
    }
    out.norms.resize(params.norms.size());
    for (std::size_t i = 0; i < params.norms.size(); ++i) {
        out.norms[i].channels = params.norms[i].channels;
        out.norms[i].gamma.assign(params.norms[i].gamma.size(), T{});
        out.norms[i].beta.assign(params.norms[i].beta.size(), T{});
        out.norms[i].running_mean.assign(params.norms[i].running_mean.size(), T{});
        out.norms[i].running_var.assign(params.norms[i].running_var.size(), T{});
    }
    return out;
}

// Kernels: zero-mean normal with variance 2/fan_in; biases zero; batch norm
// starts as the identity with unit running variance.
template <typename T>
NetworkParams<T> init_params(const NetworkConfig& cfg, Rng& rng) {
    cfg.validate();
    NetworkParams<T> params;
    params.config = cfg;
    std::vector<std::pair<int, int>> shapes;
    netdetail::conv_shapes(cfg, shapes);
    const int n_convs = static_cast<int>(shapes.size());
    params.convs.resize(n_convs);
    params.norms.resize(n_convs - 1);
    for (int i = 0; i < n_convs; ++i) {
        auto& c = params.convs[i];
        c.in_ch = shapes[i].first;
        c.out_ch = shapes[i].second;
        c.ksize = (i == n_convs - 1) ? 1 : 3;
        const std::size_t k2 = static_cast<std::size_t>(c.ksize) * c.ksize;
        c.kernel.resize(static_cast<std::size_t>(c.out_ch) * c.in_ch * k2);
        c.bias.assign(c.out_ch, T{});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(c.in_ch) * k2));
        for (auto& v : c.kernel) v = static_cast<T>(stddev * rng.normal());
        if (i < n_convs - 1) {
            auto& b = params.norms[i];
            b.channels = c.out_ch;
            b.gamma.assign(c.out_ch, T{1});
            b.beta.assign(c.out_ch, T{});
            b.running_mean.assign(c.out_ch, T{});
            b.running_var.assign(c.out_ch, T{1});
        }
    }
    return params;
}

// Trainable tensors in a fixed order: per conv (kernel, bias), then per batch
// norm (gamma, beta). Running statistics are state, not parameters.
template <typename T>
std::vector<std::span<T>> trainable_groups(NetworkParams<T>& params) {
    std::vector<std::span<T>> groups;
    groups.reserve(params.convs.size() * 2 + params.norms.size() * 2);
    for (auto& c : params.convs) {
        groups.emplace_back(c.kernel);
        groups.emplace_back(c.bias);
    }
    for (auto& b : params.norms) {
        groups.emplace_back(b.gamma);
        groups.emplace_back(b.beta);
    }
    return groups;
}

inline std::vector<std::string> trainable_group_names(const NetworkConfig& cfg) {
    std::vector<std::pair<int, int>> shapes;
    netdetail::conv_shapes(cfg, shapes);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        names.push_back("conv" + std::to_string(i) + ".kernel");
        names.push_back("conv" + std::to_string(i) + ".bias");
    }
    for (std::size_t i = 0; i + 1 < shapes.size(); ++i) {
        names.push_back("norm" + std::to_string(i) + ".gamma");
        names.push_back("norm" + std::to_string(i) + ".beta");
    }
    return names;
}

template <typename T>
struct FeatureMap {
    int ch = 0, h = 0, w = 0;
    std::vector<T> v;

    void resize(int c, int hh, int ww) {
        ch = c;
        h = hh;
        w = ww;
        v.assign(static_cast<std::size_t>(c) * hh * ww, T{});
    }
    T* plane(int c) { return v.data() + static_cast<std::size_t>(c) * h * w; }
    const T* plane(int c) const { return v.data() + static_cast<std::size_t>(c) * h * w; }
};

namespace netdetail {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.99;

// --- conv primitives ------------------------------------------------------
// Inputs are copied into a zero-padded scratch plane so the 9-tap inner loop
// is branch free and vectorizes.

template <typename T>
void pad_input(const FeatureMap<T>& in, std::vector<T>& padded) {
    const int ph = in.h + 2, pw = in.w + 2;
    padded.assign(static_cast<std::size_t>(in.ch) * ph * pw, T{});
    for (int c = 0; c < in.ch; ++c) {
        const T* src = in.plane(c);
        T* dst = padded.data() + static_cast<std::size_t>(c) * ph * pw;
        for (int y = 0; y < in.h; ++y) {
            T* row = dst + static_cast<std::size_t>(y + 1) * pw + 1;
            const T* srow = src + static_cast<std::size_t>(y) * in.w;
            for (int x = 0; x < in.w; ++x) row[x] = srow[x];
        }
    }
}

template <typename T>
void conv3x3_from_padded(const std::vector<T>& padded, int in_ch, int h, int w, const T* kernel,
                         const T* bias, FeatureMap<T>& out, int out_ch, bool rotate) {
    const int pw = w + 2;
    out.resize(out_ch, h, w);
    for (int oc = 0; oc < out_ch; ++oc) {
        T* op = out.plane(oc);
        const T b = bias ? bias[oc] : T{};
        for (int i = 0; i < h * w; ++i) op[i] = b;
        for (int ic = 0; ic < in_ch; ++ic) {
            const T* ip = padded.data() + static_cast<std::size_t>(ic) * (h + 2) * pw;
            const T* kp = kernel + (static_cast<std::size_t>(oc) * in_ch + ic) * 9;
            T k[9];
            for (int t = 0; t < 9; ++t) k[t] = rotate ? kp[8 - t] : kp[t];
            for (int y = 0; y < h; ++y) {
                const T* r0 = ip + static_cast<std::size_t>(y) * pw;
                const T* r1 = r0 + pw;
                const T* r2 = r1 + pw;
                T* orow = op + static_cast<std::size_t>(y) * w;
                for (int x = 0; x < w; ++x) {
                    orow[x] += k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] +
                               k[3] * r1[x] + k[4] * r1[x + 1] + k[5] * r1[x + 2] +
                               k[6] * r2[x] + k[7] * r2[x + 1] + k[8] * r2[x + 2];
                }
            }
        }
    }
}

template <typename T>
void conv3x3_forward(const FeatureMap<T>& in, const ConvParams<T>& conv, FeatureMap<T>& out,
                     std::vector<T>& scratch) {
    pad_input(in, scratch);
    conv3x3_from_padded(scratch, in.ch, in.h, in.w, conv.kernel.data(), conv.bias.data(), out,
                        conv.out_ch, false);
}

// grad wrt input: correlate the output gradient with the 180-degree rotated
// kernel, with the roles of in/out channels swapped.
template <typename T>
void conv3x3_backward_data(const FeatureMap<T>& out_grad, const ConvParams<T>& conv,
                           FeatureMap<T>& in_grad, std::vector<T>& scratch) {
    pad_input(out_grad, scratch);
    const int h = out_grad.h, w = out_grad.w, pw = w + 2;
    in_grad.resize(conv.in_ch, h, w);
    for (int ic = 0; ic < conv.in_ch; ++ic) {
        T* gp = in_grad.plane(ic);
        for (int oc = 0; oc < conv.out_ch; ++oc) {
            const T* op = scratch.data() + static_cast<std::size_t>(oc) * (h + 2) * pw;
            const T* kp = conv.kernel.data() + (static_cast<std::size_t>(oc) * conv.in_ch + ic) * 9;
            T k[9];
            for (int t = 0; t < 9; ++t) k[t] = kp[8 - t];
            for (int y = 0; y < h; ++y) {
                const T* r0 = op + static_cast<std::size_t>(y) * pw;
                const T* r1 = r0 + pw;
                const T* r2 = r1 + pw;
                T* grow = gp + static_cast<std::size_t>(y) * w;
                for (int x = 0; x < w; ++x) {
                    grow[x] += k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] +
                               k[3] * r1[x] + k[4] * r1[x + 1] + k[5] * r1[x + 2] +
                               k[6] * r2[x] + k[7] * r2[x + 1] + k[8] * r2[x + 2];
                }
            }
        }
    }
}

// grad wrt kernel and bias for one sample, accumulated into kg/bg.
template <typename T>
void conv3x3_backward_weights(const FeatureMap<T>& in, const FeatureMap<T>& out_grad, T* kg, T* bg,
                              std::vector<T>& scratch) {
    pad_input(in, scratch);
    const int h = in.h, w = in.w, pw = w + 2;
    for (int oc = 0; oc < out_grad.ch; ++oc) {
        const T* gp = out_grad.plane(oc);
        double bsum = 0.0;
        for (int i = 0; i < h * w; ++i) bsum += static_cast<double>(gp[i]);
        bg[oc] += static_cast<T>(bsum);
        for (int ic = 0; ic < in.ch; ++ic) {
            const T* ip = scratch.data() + static_cast<std::size_t>(ic) * (h + 2) * pw;
            T* kslot = kg + (static_cast<std::size_t>(oc) * in.ch + ic) * 9;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    T acc{};
                    for (int y = 0; y < h; ++y) {
                        const T* grow = gp + static_cast<std::size_t>(y) * w;
                        const T* irow = ip + static_cast<std::size_t>(y + ky) * pw + kx;
                        for (int x = 0; x < w; ++x) acc += grow[x] * irow[x];
                    }
                    kslot[ky * 3 + kx] += acc;
                }
        }
    }
}

template <typename T>
void conv1x1_forward(const FeatureMap<T>& in, const ConvParams<T>& conv, FeatureMap<T>& out) {
    out.resize(conv.out_ch, in.h, in.w);
    const int hw = in.h * in.w;
    for (int oc = 0; oc < conv.out_ch; ++oc) {
        T* op = out.plane(oc);
        for (int i = 0; i < hw; ++i) op[i] = conv.bias[oc];
        for (int ic = 0; ic < in.ch; ++ic) {
            const T k = conv.kernel[static_cast<std::size_t>(oc) * in.ch + ic];
            const T* ip = in.plane(ic);
            for (int i = 0; i < hw; ++i) op[i] += k * ip[i];
        }
    }
}

template <typename T>
void conv1x1_backward(const FeatureMap<T>& in, const FeatureMap<T>& out_grad,
                      const ConvParams<T>& conv, FeatureMap<T>& in_grad, T* kg, T* bg) {
    const int hw = in.h * in.w;
    in_grad.resize(conv.in_ch, in.h, in.w);
    for (int oc = 0; oc < conv.out_ch; ++oc) {
        const T* gp = out_grad.plane(oc);
        T bacc{};
        for (int i = 0; i < hw; ++i) bacc += gp[i];
        bg[oc] += bacc;
        for (int ic = 0; ic < conv.in_ch; ++ic) {
            const T k = conv.kernel[static_cast<std::size_t>(oc) * conv.in_ch + ic];
            const T* ip = in.plane(ic);
            T* gip = in_grad.plane(ic);
            T kacc{};
            for (int i = 0; i < hw; ++i) {
                kacc += gp[i] * ip[i];
                gip[i] += k * gp[i];
            }
            kg[static_cast<std::size_t>(oc) * conv.in_ch + ic] += kacc;
        }
    }
}

template <typename T>
void leaky_relu_forward(const FeatureMap<T>& in, T slope, FeatureMap<T>& out) {
    out.resize(in.ch, in.h, in.w);
    for (std::size_t i = 0; i < in.v.size(); ++i)
        out.v[i] = in.v[i] > T{} ? in.v[i] : slope * in.v[i];
}

template <typename T>
void max_pool2(const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<std::uint8_t>& argmax) {
    const int oh = in.h / 2, ow = in.w / 2;
    out.resize(in.ch, oh, ow);
    argmax.assign(static_cast<std::size_t>(in.ch) * oh * ow, 0);
    for (int c = 0; c < in.ch; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        std::uint8_t* ap = argmax.data() + static_cast<std::size_t>(c) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                T best{};
                std::uint8_t which = 0;
                for (int t = 0; t < 4; ++t) {
                    const T v = ip[static_cast<std::size_t>(2 * y + t / 2) * in.w + 2 * x + t % 2];
                    if (t == 0 || v > best) {
                        best = v;
                        which = static_cast<std::uint8_t>(t);
                    }
                }
                op[static_cast<std::size_t>(y) * ow + x] = best;
                ap[static_cast<std::size_t>(y) * ow + x] = which;
            }
    }
}

template <typename T>
void max_pool2_backward(const FeatureMap<T>& out_grad, const std::vector<std::uint8_t>& argmax,
                        int in_h, int in_w, FeatureMap<T>& in_grad) {
    in_grad.resize(out_grad.ch, in_h, in_w);
    for (int c = 0; c < out_grad.ch; ++c) {
        const T* gp = out_grad.plane(c);
        const std::uint8_t* ap = argmax.data() + static_cast<std::size_t>(c) * out_grad.h * out_grad.w;
        T* ip = in_grad.plane(c);
        for (int y = 0; y < out_grad.h; ++y)
            for (int x = 0; x < out_grad.w; ++x) {
                const std::size_t o = static_cast<std::size_t>(y) * out_grad.w + x;
                const int t = ap[o];
                ip[static_cast<std::size_t>(2 * y + t / 2) * in_w + 2 * x + t % 2] += gp[o];
            }
    }
}

template <typename T>
void upsample2(const FeatureMap<T>& in, FeatureMap<T>& out) {
    out.resize(in.ch, in.h * 2, in.w * 2);
    for (int c = 0; c < in.ch; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                op[static_cast<std::size_t>(y) * out.w + x] =
                    ip[static_cast<std::size_t>(y / 2) * in.w + x / 2];
    }
}

template <typename T>
void upsample2_backward(const FeatureMap<T>& out_grad, FeatureMap<T>& in_grad) {
    in_grad.resize(out_grad.ch, out_grad.h / 2, out_grad.w / 2);
    for (int c = 0; c < out_grad.ch; ++c) {
        const T* gp = out_grad.plane(c);
        T* ip = in_grad.plane(c);
        for (int y = 0; y < out_grad.h; ++y)
            for (int x = 0; x < out_grad.w; ++x)
                ip[static_cast<std::size_t>(y / 2) * in_grad.w + x / 2] +=
                    gp[static_cast<std::size_t>(y) * out_grad.w + x];
    }
}

template <typename T>
void concat(const FeatureMap<T>& a, const FeatureMap<T>& b, FeatureMap<T>& out) {
    out.resize(a.ch + b.ch, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
}

}  // namespace netdetail

// Per-batch caches for one forward pass; reusable across steps.
template <typename T>
struct NetWorkspace {
    struct BlockCache {
        std::vector<FeatureMap<T>> conv_in;   // per sample
        std::vector<FeatureMap<T>> conv_out;  // pre-activation
        std::vector<FeatureMap<T>> xhat;      // normalized pre-affine
        std::vector<T> invstd;                // per channel
        std::vector<T> mean;                  // per channel (batch stats)
    };
    std::vector<BlockCache> blocks;                    // one per conv with a norm
    std::vector<FeatureMap<T>> final_in;               // input to the 1x1 conv
    std::vector<std::vector<std::uint8_t>> pool_argmax;  // [level][sample-major]
    std::vector<std::vector<FeatureMap<T>>> skip_out;  // encoder outputs per level
    std::vector<FeatureMap<T>> mag;                    // magnitude of the aliased input
    std::vector<const BasicComplexImage<T>*> aliased;  // borrowed inputs
    std::vector<std::vector<T>> pad_scratch;           // per sample
    std::vector<std::vector<T>> grad_scratch;          // per sample trainables for reductions
};

// Batched forward. In training mode batch statistics are used and running
// statistics updated; in inference mode running statistics are used.
template <typename T>
std::vector<BasicImage<T>> net_forward(NetworkParams<T>& params,
                                       const std::vector<BasicComplexImage<T>>& aliased,
                                       NetWorkspace<T>& ws) {
    using namespace netdetail;
    const NetworkConfig& cfg = params.config;
    cfg.validate();
    if (aliased.empty()) throw DimensionError("net_forward: empty batch");
    const int h = aliased[0].height, w = aliased[0].width;
    for (const auto& img : aliased)
        if (img.height != h || img.width != w) throw DimensionError("net_forward: ragged batch");
    if (h % cfg.divisor() != 0 || w % cfg.divisor() != 0)
        throw DimensionError("net_forward: input size must be divisible by 2^(depth-1)");

    const std::size_t batch = aliased.size();
    const std::size_t n_blocks = params.norms.size();
    ws.blocks.resize(n_blocks);
    for (auto& b : ws.blocks) {
        b.conv_in.resize(batch);
        b.conv_out.resize(batch);
        b.xhat.resize(batch);
    }
    ws.final_in.resize(batch);
    ws.pool_argmax.assign(cfg.depth - 1, std::vector<std::uint8_t>{});
    ws.skip_out.assign(cfg.depth, std::vector<FeatureMap<T>>(batch));
    ws.mag.resize(batch);
    ws.aliased.resize(batch);
    ws.pad_scratch.resize(batch);
    const T slope = static_cast<T>(cfg.leaky_slope);

    // conv -> leaky relu -> batch norm; the result lands in `out`
    auto run_block = [&](std::size_t block_idx, const std::vector<FeatureMap<T>>& in,
                         std::vector<FeatureMap<T>>& out) {
        auto& cache = ws.blocks[block_idx];
        const auto& conv = params.convs[block_idx];
        auto& norm = params.norms[block_idx];
        parallel_for(batch, [&](std::size_t s) {
            cache.conv_in[s] = in[s];
            conv3x3_forward(cache.conv_in[s], conv, cache.conv_out[s], ws.pad_scratch[s]);
            leaky_relu_forward(cache.conv_out[s], slope, cache.xhat[s]);  // xhat holds act for now
        });
        // batch statistics per channel, combined in sample order
        const int ch = conv.out_ch;
        const int hw = cache.xhat[0].h * cache.xhat[0].w;
        std::vector<double> sum(ch, 0.0), sqsum(ch, 0.0);
        for (std::size_t s = 0; s < batch; ++s)
            for (int c = 0; c < ch; ++c) {
                const T* p = cache.xhat[s].plane(c);
                double a = 0.0, b2 = 0.0;
                for (int i = 0; i < hw; ++i) {
                    a += static_cast<double>(p[i]);
                    b2 += static_cast<double>(p[i]) * static_cast<double>(p[i]);
                }
                sum[c] += a;
                sqsum[c] += b2;
            }
        const double m = static_cast<double>(batch) * hw;
        cache.mean.resize(ch);
        cache.invstd.resize(ch);
        for (int c = 0; c < ch; ++c) {
            double mu, var;
            if (params.training) {
                mu = sum[c] / m;
                var = std::max(0.0, sqsum[c] / m - mu * mu);
                norm.running_mean[c] = static_cast<T>(kBnMomentum * static_cast<double>(norm.running_mean[c]) +
                                                      (1.0 - kBnMomentum) * mu);
                norm.running_var[c] = static_cast<T>(kBnMomentum * static_cast<double>(norm.running_var[c]) +
                                                     (1.0 - kBnMomentum) * var);
            } else {
                mu = static_cast<double>(norm.running_mean[c]);
                var = static_cast<double>(norm.running_var[c]);
            }
            cache.mean[c] = static_cast<T>(mu);
            cache.invstd[c] = static_cast<T>(1.0 / std::sqrt(var + kBnEps));
        }
        parallel_for(batch, [&](std::size_t s) {
            out[s].resize(ch, cache.xhat[s].h, cache.xhat[s].w);
            for (int c = 0; c < ch; ++c) {
                const T mu = cache.mean[c], is = cache.invstd[c];
                const T g = norm.gamma[c], be = norm.beta[c];
                T* xp = cache.xhat[s].plane(c);
                T* op = out[s].plane(c);
                for (int i = 0; i < hw; ++i) {
                    xp[i] = (xp[i] - mu) * is;  // finalize xhat in place
                    op[i] = g * xp[i] + be;
                }
            }
        });
    };

    // stack input channels and the magnitude head
    std::vector<FeatureMap<T>> stage(batch);
    parallel_for(batch, [&](std::size_t s) {
        ws.aliased[s] = &aliased[s];
        stage[s].resize(2, h, w);
        for (int i = 0; i < h * w; ++i) {
            stage[s].v[i] = aliased[s].re[i];
            stage[s].v[static_cast<std::size_t>(h) * w + i] = aliased[s].im[i];
        }
        ws.mag[s].resize(1, h, w);
        for (int i = 0; i < h * w; ++i)
            ws.mag[s].v[i] = std::sqrt(aliased[s].re[i] * aliased[s].re[i] +
                                       aliased[s].im[i] * aliased[s].im[i]);
    });

    // encoder
    std::size_t block = 0;
    for (int level = 0; level < cfg.depth; ++level) {
        if (level > 0) {
            auto& am = ws.pool_argmax[level - 1];
            std::vector<std::vector<std::uint8_t>> per_sample(batch);
            parallel_for(batch, [&](std::size_t s) {
                FeatureMap<T> pooled;
                max_pool2(stage[s], pooled, per_sample[s]);
                stage[s] = std::move(pooled);
            });
            am.clear();
            for (auto& a : per_sample) am.insert(am.end(), a.begin(), a.end());
        }
        std::vector<FeatureMap<T>> mid(batch);
        run_block(block++, stage, mid);
        run_block(block++, mid, ws.skip_out[level]);
        parallel_for(batch, [&](std::size_t s) { stage[s] = ws.skip_out[level][s]; });
    }

    // decoder
    for (int level = cfg.depth - 2; level >= 0; --level) {
        std::vector<FeatureMap<T>> cat(batch);
        parallel_for(batch, [&](std::size_t s) {
            FeatureMap<T> up;
            upsample2(stage[s], up);
            concat(up, ws.skip_out[level][s], cat[s]);
        });
        std::vector<FeatureMap<T>> mid(batch);
        run_block(block++, cat, mid);
        run_block(block++, mid, stage);
    }

    // final 1x1 + residual over the magnitude image
    std::vector<BasicImage<T>> out(batch);
    const auto& fconv = params.convs.back();
    parallel_for(batch, [&](std::size_t s) {
        ws.final_in[s] = stage[s];
        FeatureMap<T> res;
        conv1x1_forward(ws.final_in[s], fconv, res);
        out[s] = BasicImage<T>(h, w);
        for (int i = 0; i < h * w; ++i) out[s].values[i] = res.v[i] + ws.mag[s].v[i];
    });
    return out;
}

// Backward for the most recent net_forward (training mode). Parameter
// gradients accumulate into `grads`; input gradients are returned per sample.
template <typename T>
void net_backward(const NetworkParams<T>& params, NetWorkspace<T>& ws,
                  const std::vector<BasicImage<T>>& out_grads, NetworkParams<T>& grads,
                  std::vector<BasicComplexImage<T>>& input_grads) {
    using namespace netdetail;
    const NetworkConfig& cfg = params.config;
    const std::size_t batch = out_grads.size();
    const int h = out_grads[0].height, w = out_grads[0].width;
    const T slope = static_cast<T>(cfg.leaky_slope);
    ws.grad_scratch.resize(batch);

    // magnitude path
    input_grads.assign(batch, BasicComplexImage<T>(h, w));
    parallel_for(batch, [&](std::size_t s) {
        const auto& a = *ws.aliased[s];
        for (int i = 0; i < h * w; ++i) {
            const T m = ws.mag[s].v[i];
            if (m > T{}) {
                const T g = out_grads[s].values[i];
                input_grads[s].re[i] = g * a.re[i] / m;
                input_grads[s].im[i] = g * a.im[i] / m;
            }
        }
    });

    // final 1x1
    std::vector<FeatureMap<T>> stage_grad(batch);
    {
        const auto& fconv = params.convs.back();
        auto& fk = grads.convs.back().kernel;
        auto& fb = grads.convs.back().bias;
        const std::size_t kn = fk.size(), bn = fb.size();
        parallel_for(batch, [&](std::size_t s) {
            auto& scratch = ws.grad_scratch[s];
            scratch.assign(kn + bn, T{});
            FeatureMap<T> g;
            g.resize(1, h, w);
            std::copy(out_grads[s].values.begin(), out_grads[s].values.end(), g.v.begin());
            conv1x1_backward(ws.final_in[s], g, fconv, stage_grad[s], scratch.data(),
                             scratch.data() + kn);
        });
        for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t i = 0; i < kn; ++i) fk[i] += ws.grad_scratch[s][i];
            for (std::size_t i = 0; i < bn; ++i) fb[i] += ws.grad_scratch[s][kn + i];
        }
    }

    // one conv+relu+bn block backward; consumes the gradient wrt the block
    // output and produces the gradient wrt the block input
    auto run_block_backward = [&](std::size_t block_idx, std::vector<FeatureMap<T>>& out_grad,
                                  std::vector<FeatureMap<T>>& in_grad) {
        auto& cache = ws.blocks[block_idx];
        const auto& conv = params.convs[block_idx];
        const auto& norm = params.norms[block_idx];
        const int ch = conv.out_ch;
        const int hw = cache.xhat[0].h * cache.xhat[0].w;
        const double m = static_cast<double>(batch) * hw;

        // batch-norm reductions, sample-ordered
        std::vector<double> sum_g(ch, 0.0), sum_gx(ch, 0.0);
        for (std::size_t s = 0; s < batch; ++s)
            for (int c = 0; c < ch; ++c) {
                const T* gp = out_grad[s].plane(c);
                const T* xp = cache.xhat[s].plane(c);
                double a = 0.0, b = 0.0;
                for (int i = 0; i < hw; ++i) {
                    a += static_cast<double>(gp[i]);
                    b += static_cast<double>(gp[i]) * static_cast<double>(xp[i]);
                }
                sum_g[c] += a;
                sum_gx[c] += b;
            }
        auto& gnorm = grads.norms[block_idx];
        for (int c = 0; c < ch; ++c) {
            gnorm.beta[c] += static_cast<T>(sum_g[c]);
            gnorm.gamma[c] += static_cast<T>(sum_gx[c]);
        }

        const std::size_t kn = conv.kernel.size(), bn = conv.bias.size();
        parallel_for(batch, [&](std::size_t s) {
            // through batch norm (training statistics) and leaky relu
            FeatureMap<T> dact;
            dact.resize(ch, cache.xhat[s].h, cache.xhat[s].w);
            for (int c = 0; c < ch; ++c) {
                const T g = norm.gamma[c], is = cache.invstd[c];
                const T m1 = static_cast<T>(sum_g[c] / m);   // mean of dL/dout per channel
                const T m2 = static_cast<T>(sum_gx[c] / m);  // mean of dL/dout * xhat
                const T* gp = out_grad[s].plane(c);
                const T* xp = cache.xhat[s].plane(c);
                const T* pre = cache.conv_out[s].plane(c);
                T* dp = dact.plane(c);
                if (params.training) {
                    for (int i = 0; i < hw; ++i) {
                        const T dxhat_centered = gp[i] - m1 - xp[i] * m2;
                        const T dx = g * is * dxhat_centered;
                        dp[i] = pre[i] > T{} ? dx : slope * dx;
                    }
                } else {
                    for (int i = 0; i < hw; ++i) {
                        const T dx = g * is * gp[i];
                        dp[i] = pre[i] > T{} ? dx : slope * dx;
                    }
                }
            }
            auto& scratch = ws.grad_scratch[s];
            scratch.assign(kn + bn, T{});
            conv3x3_backward_weights(cache.conv_in[s], dact, scratch.data(), scratch.data() + kn,
                                     ws.pad_scratch[s]);
            conv3x3_backward_data(dact, conv, in_grad[s], ws.pad_scratch[s]);
        });
        auto& gconv = grads.convs[block_idx];
        for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t i = 0; i < kn; ++i) gconv.kernel[i] += ws.grad_scratch[s][i];
            for (std::size_t i = 0; i < bn; ++i) gconv.bias[i] += ws.grad_scratch[s][kn + i];
        }
    };

    std::vector<std::vector<FeatureMap<T>>> skip_grads(cfg.depth, std::vector<FeatureMap<T>>(batch));

    // decoder, reversed
    std::size_t block = params.norms.size();
    for (int level = 0; level <= cfg.depth - 2; ++level) {
        std::vector<FeatureMap<T>> mid_grad(batch), cat_grad(batch);
        run_block_backward(--block, stage_grad, mid_grad);
        run_block_backward(--block, mid_grad, cat_grad);
        const int up_ch = 2 * netdetail::level_ch(cfg, level);
        parallel_for(batch, [&](std::size_t s) {
            // split concat gradient into the upsample branch and the skip
            FeatureMap<T> up_grad;
            up_grad.resize(up_ch, cat_grad[s].h, cat_grad[s].w);
            std::copy(cat_grad[s].v.begin(), cat_grad[s].v.begin() + static_cast<std::ptrdiff_t>(up_grad.v.size()),
                      up_grad.v.begin());
            auto& sk = skip_grads[level][s];
            sk.resize(cat_grad[s].ch - up_ch, cat_grad[s].h, cat_grad[s].w);
            std::copy(cat_grad[s].v.begin() + static_cast<std::ptrdiff_t>(up_grad.v.size()), cat_grad[s].v.end(),
                      sk.v.begin());
            upsample2_backward(up_grad, stage_grad[s]);
        });
    }

    // encoder, reversed
    for (int level = cfg.depth - 1; level >= 0; --level) {
        // gradient arriving at this level's output: decoder skip use plus
        // (for the bottom level) the decoder trunk
        std::vector<FeatureMap<T>>& arriving = (level == cfg.depth - 1) ? stage_grad : skip_grads[level];
        if (level < cfg.depth - 1) {
            parallel_for(batch, [&](std::size_t s) {
                for (std::size_t i = 0; i < arriving[s].v.size(); ++i)
                    arriving[s].v[i] += stage_grad[s].v[i];
            });
        }
        std::vector<FeatureMap<T>> mid_grad(batch), in_grad(batch);
        run_block_backward(--block, arriving, mid_grad);
        run_block_backward(--block, mid_grad, in_grad);
        if (level > 0) {
            const auto& am = ws.pool_argmax[level - 1];
            const std::size_t per = am.size() / batch;
            parallel_for(batch, [&](std::size_t s) {
                std::vector<std::uint8_t> sample_argmax(am.begin() + static_cast<std::ptrdiff_t>(s * per),
                                                        am.begin() + static_cast<std::ptrdiff_t>((s + 1) * per));
                max_pool2_backward(in_grad[s], sample_argmax, in_grad[s].h * 2, in_grad[s].w * 2,
                                   stage_grad[s]);
            });
        } else {
            parallel_for(batch, [&](std::size_t s) {
                for (int i = 0; i < h * w; ++i) {
                    input_grads[s].re[i] += in_grad[s].v[i];
                    input_grads[s].im[i] += in_grad[s].v[static_cast<std::size_t>(h) * w + i];
                }
            });
        }
    }
}

// Single-image inference.
template <typename T>
BasicImage<T> forward(NetworkParams<T>& params, const BasicComplexImage<T>& aliased) {
    NetWorkspace<T> ws;
    std::vector<BasicComplexImage<T>> batch{aliased};
    return net_forward(params, batch, ws)[0];
}

template <typename T>
struct ForwardBackwardResult {
    NetworkParams<T> param_grads;
    BasicComplexImage<T> input_grads;
};

// Gradients of the forward map for one image (training-mode statistics).
template <typename T>
ForwardBackwardResult<T> forward_backward(NetworkParams<T>& params,
                                          const BasicComplexImage<T>& aliased,
                                          const BasicImage<T>& upstream_grad) {
    const bool was_training = params.training;
    params.training = true;
    NetWorkspace<T> ws;
    std::vector<BasicComplexImage<T>> batch{aliased};
    net_forward(params, batch, ws);
    ForwardBackwardResult<T> result;
    result.param_grads = zeros_like(params);
    std::vector<BasicImage<T>> up{upstream_grad};
    std::vector<BasicComplexImage<T>> igrads;
    net_backward(params, ws, up, result.param_grads, igrads);
    result.input_grads = std::move(igrads[0]);
    params.training = was_training;
    return result;
}

}  // namespace loupe
