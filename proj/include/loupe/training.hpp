#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "loupe/data.hpp"
#include "loupe/kspace.hpp"
#include "loupe/mask.hpp"
#include "loupe/parallel.hpp"
#include "loupe/unet.hpp"

namespace loupe {

struct TrainingConfig {
    double sparsity_weight = 0.5;    // weight of the mean-probability penalty
    int monte_carlo_samples = 1;     // mask realizations per image per step
    int batch_size = 32;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int max_epochs = 25;
    int patience = 10;
    double min_improvement = 1e-5;
    std::uint64_t seed = 1;
    SamplerConfig sampler;
    NetworkConfig net;
    double target_rate = 0.25;

    void validate() const {
        if (sparsity_weight < 0.0) throw ValueError("config: sparsity_weight must be nonnegative");
        if (monte_carlo_samples < 1) throw ValueError("config: monte_carlo_samples must be positive");
        if (batch_size < 1) throw ValueError("config: batch_size must be positive");
        if (learning_rate <= 0.0) throw ValueError("config: learning_rate must be positive");
        if (!(adam_beta1 > 0.0 && adam_beta1 < adam_beta2 && adam_beta2 < 1.0))
            throw ValueError("config: need 0 < beta1 < beta2 < 1");
        if (adam_epsilon <= 0.0) throw ValueError("config: adam_epsilon must be positive");
        if (max_epochs < 1) throw ValueError("config: max_epochs must be positive");
        if (patience < 1) throw ValueError("config: patience must be positive");
        if (!(target_rate > 0.0 && target_rate < 1.0))
            throw ValueError("config: target_rate must lie in (0,1)");
        sampler.validate();
        net.validate();
    }
};

// Optimizer state. Group 0 of the moment buffers is the mask weights when a
// mask is being learned; the remaining groups mirror trainable_groups(net).
template <typename T>
struct TrainState {
    BasicImage<T> mask_weights;  // height 0 when training with a fixed mask
    NetworkParams<T> net;
    std::vector<std::vector<T>> m1, m2;
    std::int64_t step = 0;

    bool learns_mask() const { return mask_weights.height > 0; }

    void init_moments() {
        m1.clear();
        m2.clear();
        if (learns_mask()) {
            m1.emplace_back(mask_weights.size(), T{});
            m2.emplace_back(mask_weights.size(), T{});
        }
        for (auto group : trainable_groups(net)) {
            m1.emplace_back(group.size(), T{});
            m2.emplace_back(group.size(), T{});
        }
    }
};

template <typename T>
struct LossGrads {
    BasicImage<T> mask_weights;
    NetworkParams<T> net;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double expected_sparsity = 0.0;
    double wall_seconds = 0.0;
};
using History = std::vector<EpochStats>;

namespace traindetail {

// Shared forward/backward over one mini-batch. When `probs` is non-null the
// acquisition uses the relaxed stochastic mask sigma_s(p - u) with fresh
// uniform fields from `rng`; otherwise `fixed_mask` is applied as-is.
template <typename T>
double batch_loss(TrainState<T>& state, const std::vector<BasicImage<T>>& batch,
                  const TrainingConfig& cfg, Rng& rng, const BasicImage<T>* probs,
                  const BasicImage<T>* fixed_mask, LossGrads<T>* grads, NetWorkspace<T>& ws) {
    if (batch.empty()) throw DimensionError("loss: empty batch");
    const int h = batch[0].height, w = batch[0].width;
    for (const auto& img : batch)
        if (img.height != h || img.width != w) throw DimensionError("loss: ragged batch");
    const int k_samples = probs ? cfg.monte_carlo_samples : 1;
    const std::size_t n = batch.size() * static_cast<std::size_t>(k_samples);
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    // uniform fields drawn sequentially so the rng stream is order-defined
    std::vector<BasicImage<T>> soft_masks(n);
    if (probs) {
        const T s = static_cast<T>(cfg.sampler.threshold_slope);
        for (std::size_t i = 0; i < n; ++i) {
            const BasicImage<T> u = sample_uniform_field<T>(rng, h, w);
            soft_masks[i] = relaxed_threshold(u, *probs, s);
        }
    }

    std::vector<BasicComplexImage<T>> spectra(batch.size());
    parallel_for(batch.size(), [&](std::size_t j) { spectra[j] = dft2(as_complex(batch[j])); });

    std::vector<BasicComplexImage<T>> aliased(n);
    parallel_for(n, [&](std::size_t i) {
        const std::size_t j = i / k_samples;
        const BasicImage<T>& m = probs ? soft_masks[i] : *fixed_mask;
        aliased[i] = idft2(apply_mask(spectra[j], m));
    });

    const std::vector<BasicImage<T>> recon = net_forward(state.net, aliased, ws);

    double recon_term = 0.0;
    std::vector<BasicImage<T>> recon_grads;
    if (grads) recon_grads.assign(n, BasicImage<T>(h, w));
    const double scale = 1.0 / (static_cast<double>(batch.size()) * k_samples * hw);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i / k_samples;
        double acc = 0.0;
        for (std::size_t q = 0; q < hw; ++q) {
            const double d = static_cast<double>(recon[i].values[q]) -
                             static_cast<double>(batch[j].values[q]);
            acc += std::abs(d);
            if (grads)
                recon_grads[i].values[q] =
                    static_cast<T>(d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0));
        }
        recon_term += acc * scale;
    }

    double loss = recon_term;
    if (probs && cfg.sparsity_weight > 0.0)
        loss += cfg.sparsity_weight * static_cast<double>(expected_sparsity(*probs));
    if (!std::isfinite(loss)) throw DivergenceError("loss diverged (non-finite value)");

    if (grads) {
        std::vector<BasicComplexImage<T>> input_grads;
        net_backward(state.net, ws, recon_grads, grads->net, input_grads);

        if (probs) {
            // pull the input gradient back through idft2 and the soft mask
            std::vector<BasicImage<T>> mask_grads(n);
            parallel_for(n, [&](std::size_t i) {
                const std::size_t j = i / k_samples;
                const BasicComplexImage<T> gk = dft2(input_grads[i]);
                mask_grads[i] = BasicImage<T>(h, w);
                const T s = static_cast<T>(cfg.sampler.threshold_slope);
                for (std::size_t q = 0; q < hw; ++q) {
                    const T gm = gk.re[q] * spectra[j].re[q] + gk.im[q] * spectra[j].im[q];
                    const T soft = soft_masks[i].values[q];
                    mask_grads[i].values[q] = gm * s * soft * (T{1} - soft);
                }
            });
            // d(mean p)/dp + recon path, then through the weight sigmoid
            BasicImage<T> grad_p(h, w, static_cast<T>(cfg.sparsity_weight / static_cast<double>(hw)));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t q = 0; q < hw; ++q) grad_p.values[q] += mask_grads[i].values[q];
            const T t_slope = static_cast<T>(cfg.sampler.weight_slope);
            grads->mask_weights = BasicImage<T>(h, w);
            for (std::size_t q = 0; q < hw; ++q) {
                const T p = probs->values[q];
                grads->mask_weights.values[q] = grad_p.values[q] * t_slope * p * (T{1} - p);
            }
        }
    }
    return loss;
}

}  // namespace traindetail

// Full objective on one mini-batch: sparsity_weight * mean(p) plus the mean
// absolute reconstruction error under the relaxed stochastic sampling, with
// exact gradients through the whole chain when `grads` is provided.
template <typename T>
double loupe_loss(TrainState<T>& state, const std::vector<BasicImage<T>>& batch,
                  const TrainingConfig& cfg, Rng& rng, LossGrads<T>* grads = nullptr,
                  NetWorkspace<T>* ws = nullptr) {
    if (!state.learns_mask()) throw ValueError("loupe_loss: state has no mask weights");
    const BasicImage<T> probs =
        weights_to_prob(state.mask_weights, static_cast<T>(cfg.sampler.weight_slope));
    NetWorkspace<T> local;
    return traindetail::batch_loss(state, batch, cfg, rng, &probs, nullptr, grads,
                                   ws ? *ws : local);
}

// Benchmark objective: fixed hard binary mask, no sparsity term, no mask
// gradient.
template <typename T>
double fixed_mask_loss(TrainState<T>& state, const std::vector<BasicImage<T>>& batch,
                       const BasicImage<T>& mask, const TrainingConfig& cfg,
                       LossGrads<T>* grads = nullptr, NetWorkspace<T>* ws = nullptr) {
    Rng unused(0);
    NetWorkspace<T> local;
    return traindetail::batch_loss(state, batch, cfg, unused, nullptr, &mask, grads,
                                   ws ? *ws : local);
}

// Standard bias-corrected update applied jointly to the mask weights (when
// present) and all trainable network tensors.
template <typename T>
void adam_step(TrainState<T>& state, LossGrads<T>& grads, const TrainingConfig& cfg) {
    std::vector<std::span<T>> params, gradients;
    if (state.learns_mask()) {
        params.emplace_back(state.mask_weights.values);
        gradients.emplace_back(grads.mask_weights.values);
    }
    for (auto g : trainable_groups(state.net)) params.push_back(g);
    for (auto g : trainable_groups(grads.net)) gradients.push_back(g);
    if (params.size() != state.m1.size()) throw DimensionError("adam_step: moment buffers misaligned");

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const T beta1 = static_cast<T>(cfg.adam_beta1);
    const T beta2 = static_cast<T>(cfg.adam_beta2);
    const T corr1 = static_cast<T>(1.0 - std::pow(cfg.adam_beta1, t));
    const T corr2 = static_cast<T>(1.0 - std::pow(cfg.adam_beta2, t));
    const T lr = static_cast<T>(cfg.learning_rate);
    const T eps = static_cast<T>(cfg.adam_epsilon);

    for (std::size_t g = 0; g < params.size(); ++g) {
        auto p = params[g];
        auto gr = gradients[g];
        if (p.size() != gr.size()) throw DimensionError("adam_step: gradient shape mismatch");
        auto& m1 = state.m1[g];
        auto& m2 = state.m2[g];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const T gv = gr[i];
            if (!std::isfinite(static_cast<double>(gv)))
                throw DivergenceError("adam_step: non-finite gradient");
            m1[i] = beta1 * m1[i] + (T{1} - beta1) * gv;
            m2[i] = beta2 * m2[i] + (T{1} - beta2) * gv * gv;
            const T mhat = m1[i] / corr1;
            const T vhat = m2[i] / corr2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

struct TrainResult {
    RealImage mask_weights;  // empty when a fixed mask was used
    NetworkParams<double> net;
    History history;
    int best_epoch = 0;  // 1-based epoch of the returned parameters
    bool diverged = false;
};

namespace traindetail {

template <typename T>
std::vector<BasicImage<T>> gather(const Dataset& ds, const std::vector<std::size_t>& idx,
                                  std::size_t begin, std::size_t end) {
    std::vector<BasicImage<T>> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(ds.image<T>(idx[i]));
    return out;
}

// Core loop shared by the learned-mask and fixed-mask trainers.
template <typename T>
TrainResult run_training(const Dataset& train_set, const Dataset& val_set,
                         const TrainingConfig& cfg, const BinaryMask* fixed_mask) {
    cfg.validate();
    if (train_set.count() == 0 || val_set.count() == 0)
        throw ValueError("training: empty dataset");
    if (train_set.height != val_set.height || train_set.width != val_set.width)
        throw DimensionError("training: train/val dimensions differ");

    TrainState<T> state;
    Rng init_rng(Rng::derive_seed(cfg.seed, 0));
    state.net = init_params<T>(cfg.net, init_rng);
    state.net.training = true;
    BasicImage<T> mask_image;  // fixed-mask case
    if (fixed_mask) {
        if (fixed_mask->height != train_set.height || fixed_mask->width != train_set.width)
            throw DimensionError("training: mask dimensions differ from data");
        mask_image = fixed_mask->template as_image<T>();
    } else {
        // start at the target rate so the sparsity penalty measures drift
        const double w0 = std::log(cfg.target_rate / (1.0 - cfg.target_rate)) / cfg.sampler.weight_slope;
        state.mask_weights = BasicImage<T>(train_set.height, train_set.width, static_cast<T>(w0));
    }
    state.init_moments();

    Rng shuffle_rng(Rng::derive_seed(cfg.seed, 1));
    Rng field_rng(Rng::derive_seed(cfg.seed, 2));

    std::vector<std::size_t> order(train_set.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> val_order(val_set.count());
    std::iota(val_order.begin(), val_order.end(), std::size_t{0});

    NetWorkspace<T> ws;
    LossGrads<T> grads;
    grads.net = zeros_like(state.net);

    History history;
    TrainState<T> best_state = state;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale_epochs = 0;
    bool diverged = false;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

    auto evaluate_split = [&](const Dataset& ds, const std::vector<std::size_t>& idx) {
        state.net.training = false;
        Rng val_rng(cfg.sampler.seed);
        double total = 0.0;
        for (std::size_t begin = 0; begin < idx.size(); begin += bs) {
            const std::size_t end = std::min(idx.size(), begin + bs);
            auto batch = gather<T>(ds, idx, begin, end);
            double l;
            if (fixed_mask)
                l = fixed_mask_loss(state, batch, mask_image, cfg, nullptr, &ws);
            else
                l = loupe_loss(state, batch, cfg, val_rng, nullptr, &ws);
            total += l * static_cast<double>(end - begin);
        }
        state.net.training = true;
        return total / static_cast<double>(idx.size());
    };

    for (int epoch = 1; epoch <= cfg.max_epochs && !diverged; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double train_total = 0.0;
        std::size_t seen = 0;
        try {
            for (std::size_t begin = 0; begin < order.size(); begin += bs) {
                const std::size_t end = std::min(order.size(), begin + bs);
                auto batch = gather<T>(train_set, order, begin, end);
                // reset gradient accumulators
                grads.net = zeros_like(state.net);
                double l;
                if (fixed_mask) {
                    l = fixed_mask_loss(state, batch, mask_image, cfg, &grads, &ws);
                } else {
                    grads.mask_weights = BasicImage<T>();
                    l = loupe_loss(state, batch, cfg, field_rng, &grads, &ws);
                }
                adam_step(state, grads, cfg);
                train_total += l * static_cast<double>(end - begin);
                seen += end - begin;
            }
        } catch (const DivergenceError&) {
            diverged = true;
        }
        if (diverged) break;

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = train_total / static_cast<double>(seen);
        stats.val_loss = evaluate_split(val_set, val_order);
        stats.expected_sparsity =
            fixed_mask ? fixed_mask->sparsity()
                       : static_cast<double>(expected_sparsity(weights_to_prob(
                             state.mask_weights, static_cast<T>(cfg.sampler.weight_slope))));
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        // timing is zeroed in the single-worker reproducibility mode so runs
        // with identical seeds emit identical files
        stats.wall_seconds = worker_count() == 1 ? 0.0 : elapsed;
        history.push_back(stats);

        if (stats.val_loss < best_val - cfg.min_improvement) {
            best_val = stats.val_loss;
            best_epoch = epoch;
            best_state = state;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
            if (stale_epochs >= cfg.patience) break;
        }
    }

    if (best_epoch == 0) {  // no epoch improved on +inf: keep the last state
        best_state = state;
        best_epoch = history.empty() ? 0 : history.back().epoch;
    }

    TrainResult result;
    if (!fixed_mask) result.mask_weights = best_state.mask_weights.template cast<double>();
    best_state.net.training = false;
    result.net = best_state.net.template cast<double>();
    result.history = std::move(history);
    result.best_epoch = best_epoch;
    result.diverged = diverged;
    return result;
}

}  // namespace traindetail

// Joint optimization of the probabilistic mask and the network. Shuffled
// seeded mini-batches; per-epoch validation with a fixed noise seed; early
// stop when the validation loss stops improving. Returns the best-validation
// state. Single precision in the hot loop.
inline TrainResult train_loupe(const Dataset& train_set, const Dataset& val_set,
                               const TrainingConfig& cfg) {
    return traindetail::run_training<float>(train_set, val_set, cfg, nullptr);
}

// Same loop with a constant hard mask and no sparsity term.
inline TrainResult train_fixed_mask(const BinaryMask& mask, const Dataset& train_set,
                                    const Dataset& val_set, const TrainingConfig& cfg) {
    return traindetail::run_training<float>(train_set, val_set, cfg, &mask);
}

struct CalibrationProbe {
    double sparsity_weight = 0.0;
    double achieved_sparsity = 0.0;
};

struct CalibrationResult {
    double sparsity_weight = 0.0;
    std::vector<CalibrationProbe> probes;
    std::vector<std::string> warnings;
};

// Geometric sweep over the sparsity weight followed by bisection on its log,
// each probe a short seeded training run; returns the weight whose final
// expected sparsity lands within `tolerance` of the target.
inline CalibrationResult calibrate_lambda(double target_rate, TrainingConfig cfg,
                                          const Dataset& train_subset, const Dataset& val_subset,
                                          int probe_epochs = 5, double tolerance = 0.02) {
    if (!(target_rate > 0.0 && target_rate < 1.0))
        throw ValueError("calibrate: target rate must lie in (0,1)");
    cfg.target_rate = target_rate;
    cfg.max_epochs = probe_epochs;
    cfg.patience = probe_epochs;  // probes always run their full length

    CalibrationResult result;
    auto probe = [&](double weight) {
        TrainingConfig probe_cfg = cfg;
        probe_cfg.sparsity_weight = weight;
        const TrainResult r = train_loupe(train_subset, val_subset, probe_cfg);
        const double sparsity = r.history.back().expected_sparsity;
        result.probes.push_back({weight, sparsity});
        return sparsity;
    };

    constexpr double kLo = 1e-4, kHi = 1e2;
    std::vector<double> grid;
    for (double w = kLo; w <= kHi * 1.0000001; w *= 10.0) grid.push_back(w);

    std::vector<double> achieved;
    for (double w : grid) achieved.push_back(probe(w));
    for (std::size_t i = 1; i < achieved.size(); ++i) {
        if (achieved[i] > achieved[i - 1] + 0.01)
            result.warnings.push_back("sparsity response not monotone between weights " +
                                      std::to_string(grid[i - 1]) + " and " + std::to_string(grid[i]));
    }

    // prefer the closest grid probe if it already meets the tolerance
    std::size_t best = 0;
    for (std::size_t i = 1; i < achieved.size(); ++i)
        if (std::abs(achieved[i] - target_rate) < std::abs(achieved[best] - target_rate)) best = i;
    if (std::abs(achieved[best] - target_rate) <= tolerance) {
        result.sparsity_weight = grid[best];
        return result;
    }

    // bracket: sparsity is non-increasing in the weight
    std::ptrdiff_t lo_idx = -1;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (achieved[i] >= target_rate && achieved[i + 1] <= target_rate) {
            lo_idx = static_cast<std::ptrdiff_t>(i);
            break;
        }
    if (lo_idx < 0)
        throw CalibrationError(
            "no bracket in [1e-4, 1e2]: achieved sparsity " + std::to_string(achieved.front()) +
            " at 1e-4 and " + std::to_string(achieved.back()) + " at 1e2 for target " +
            std::to_string(target_rate));

    double lo = grid[lo_idx], hi = grid[lo_idx + 1];
    double best_w = grid[best], best_gap = std::abs(achieved[best] - target_rate);
    for (int iter = 0; iter < 16; ++iter) {
        const double mid = std::sqrt(lo * hi);
        const double s = probe(mid);
        if (std::abs(s - target_rate) < best_gap) {
            best_gap = std::abs(s - target_rate);
            best_w = mid;
        }
        if (best_gap <= tolerance) {
            result.sparsity_weight = best_w;
            return result;
        }
        if (s > target_rate)
            lo = mid;
        else
            hi = mid;
    }
    if (best_gap <= tolerance) {
        result.sparsity_weight = best_w;
        return result;
    }
    throw CalibrationError("bisection did not reach tolerance " + std::to_string(tolerance) +
                           "; closest achieved sparsity gap " + std::to_string(best_gap));
}

}  // namespace loupe
