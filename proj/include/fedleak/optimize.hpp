#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedleak/stats.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak {

/// Objective weights and schedule for the metric-matching descent.
struct ObjectiveWeights {
    double w_mu = 1e6;
    double w_sigma = 2e4;
    double w_tv = 1e-6;
    double lr = 1e-6;  // the mean term's subgradient is w_mu/(H·W) per pixel;
                       // keep lr·w_mu/(H·W) well under the pixel scale
    std::size_t rounds = 1000;
};

/// Per-channel target block: (mean, variance, tv) for each channel.
struct TargetMetrics {
    std::vector<ChannelStats> per_channel;
};

/// w_mu Σ_l |μ_l(x)−μ̂_l| + w_sigma Σ_l |σ²_l(x)−σ̂²_l| + w_tv Σ_l |TV_l(x)−TV̂_l|
/// with l running over channels.
inline double objective(const Tensor& x, const TargetMetrics& target, const ObjectiveWeights& w) {
    if (x.shape.size() != 3) throw std::invalid_argument("objective: C×H×W tensor expected");
    if (target.per_channel.size() != x.shape[0])
        throw std::invalid_argument("objective: one target block per channel expected");
    const auto stats = channel_stats(x);
    double obj = 0.0;
    for (std::size_t c = 0; c < stats.size(); ++c) {
        obj += w.w_mu * std::abs(stats[c].mean - target.per_channel[c].mean);
        obj += w.w_sigma * std::abs(stats[c].variance - target.per_channel[c].variance);
        obj += w.w_tv * std::abs(stats[c].tv - target.per_channel[c].tv);
    }
    return obj;
}

/// Analytic (sub)gradient of the objective. Sign conventions: sign(0) = 0,
/// both for the outer absolute values and for the TV difference terms, so
/// a perfectly matched image is a fixed point.
inline Tensor objective_gradient(const Tensor& x, const TargetMetrics& target,
                                 const ObjectiveWeights& w) {
    const std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const double n = static_cast<double>(H * W);
    const auto stats = channel_stats(x);
    Tensor g({C, H, W});
    const auto sgn = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };

    for (std::size_t c = 0; c < C; ++c) {
        const double s_mu = sgn(stats[c].mean - target.per_channel[c].mean);
        const double s_var = sgn(stats[c].variance - target.per_channel[c].variance);
        const double s_tv = sgn(stats[c].tv - target.per_channel[c].tv);

        // d mean / dx = 1/n;  d variance / dx = 2 (x - mean)/n.
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t wi = 0; wi < W; ++wi) {
                double acc = w.w_mu * s_mu / n;
                acc += w.w_sigma * s_var * 2.0 * (x.at3(c, h, wi) - stats[c].mean) / n;
                g.at3(c, h, wi) += acc;
            }
        if (s_tv != 0.0) {
            // Subgradient of Σ|forward differences|.
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t wi = 0; wi + 1 < W; ++wi) {
                    const double d = sgn(x.at3(c, h, wi + 1) - x.at3(c, h, wi));
                    g.at3(c, h, wi + 1) += w.w_tv * s_tv * d;
                    g.at3(c, h, wi) -= w.w_tv * s_tv * d;
                }
            for (std::size_t h = 0; h + 1 < H; ++h)
                for (std::size_t wi = 0; wi < W; ++wi) {
                    const double d = sgn(x.at3(c, h + 1, wi) - x.at3(c, h, wi));
                    g.at3(c, h + 1, wi) += w.w_tv * s_tv * d;
                    g.at3(c, h, wi) -= w.w_tv * s_tv * d;
                }
        }
    }
    return g;
}

/// Projected gradient descent on the metric objective. Each round proposes
/// x - lr·g clamped to [0,1]; if the objective does not decrease the step
/// is halved (at most 10 times) and finally rejected, so the objective is
/// non-increasing over accepted steps and a matched input never moves.
inline Tensor descend(Tensor x, const TargetMetrics& target, const ObjectiveWeights& w) {
    double current = objective(x, target, w);
    for (std::size_t round = 0; round < w.rounds; ++round) {
        const Tensor g = objective_gradient(x, target, w);
        double gnorm = 0.0;
        for (double v : g.data) gnorm += v * v;
        if (gnorm == 0.0) break;

        double lr = w.lr;
        bool accepted = false;
        for (int halving = 0; halving <= 10; ++halving) {
            Tensor cand = x;
            for (std::size_t i = 0; i < cand.size(); ++i) {
                double v = cand.data[i] - lr * g.data[i];
                cand.data[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
            const double obj = objective(cand, target, w);
            if (obj < current) {
                x = std::move(cand);
                current = obj;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        // A rejected step leaves x unchanged, so every later round would
        // reject identically; stop instead of spinning.
        if (!accepted) break;
    }
    return x;
}

}  // namespace fedleak
