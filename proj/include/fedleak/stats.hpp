#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak {

/// Raised when an estimator receives too few samples to be meaningful.
struct InsufficientSamplesError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Location/scale of a Laplace distribution; scale must be positive.
struct LaplaceParams {
    double mu = 0.0;
    double s = 1.0;
};

/// Inverse CDF of Laplace(mu, s):
///   Q(p) = mu - s * sgn(p - 1/2) * ln(1 - 2|p - 1/2|)
/// Domain: 0 < p < 1.
inline double laplace_quantile(double p, const LaplaceParams& params) {
    if (!(params.s > 0.0)) throw std::domain_error("laplace_quantile: scale must be positive");
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("laplace_quantile: p must lie in (0,1)");
    const double d = p - 0.5;
    const double sgn = (d > 0.0) - (d < 0.0);
    return params.mu - params.s * sgn * std::log1p(-2.0 * std::abs(d));
}

inline double laplace_cdf(double x, const LaplaceParams& params) {
    const double t = (x - params.mu) / params.s;
    return t < 0.0 ? 0.5 * std::exp(t) : 1.0 - 0.5 * std::exp(-t);
}

/// Scale estimates for |N(0, sigma^2)| samples reported as negatives.
struct HalfNormalEstimate {
    double sigma = 0.0;                // mean-based, the primary estimate
    double sigma_from_variance = 0.0;  // diagnostics only
    std::size_t count = 0;
};

/// Estimate sigma from draws of -|N(0, sigma^2)|. The mean of the
/// half-normal is sigma*sqrt(2/pi) and its variance sigma^2*(1 - 2/pi),
/// which gives the two moment estimators below.
inline HalfNormalEstimate half_normal_sigma(std::span<const double> negatives) {
    if (negatives.empty())
        throw InsufficientSamplesError("half_normal_sigma: empty input");
    double sum = 0.0;
    for (double v : negatives) {
        if (v > 0.0) throw std::domain_error("half_normal_sigma: positive entry in input");
        sum += v;
    }
    const double n = static_cast<double>(negatives.size());
    const double mean = sum / n;
    double sq = 0.0;
    for (double v : negatives) sq += (v - mean) * (v - mean);
    const double var = sq / n;

    const double pi = 3.14159265358979323846;
    HalfNormalEstimate est;
    est.sigma = -mean * std::sqrt(pi) / std::sqrt(2.0);
    est.sigma_from_variance = std::sqrt(var * pi / (pi - 2.0));
    est.count = negatives.size();
    return est;
}

/// Per-channel first moments plus anisotropic total variation.
struct ChannelStats {
    double mean = 0.0;
    double variance = 0.0;  // population variance
    double tv = 0.0;        // sum of |forward diffs|, horizontal then vertical, no wrap
};

/// Statistics of one C×H×W image, channel by channel. TV is the L1 norm of
/// forward differences with no wrap-around at the borders; the summation
/// order (rows of horizontal diffs, then rows of vertical diffs) is fixed
/// and part of the contract.
inline std::vector<ChannelStats> channel_stats(const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[0] < 1 || image.shape[1] < 1 || image.shape[2] < 1)
        throw std::invalid_argument("channel_stats: C×H×W tensor expected");
    const std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
    std::vector<ChannelStats> out(C);
    for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) sum += image.at3(c, h, w);
        const double mean = sum / static_cast<double>(H * W);
        double sq = 0.0;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                const double d = image.at3(c, h, w) - mean;
                sq += d * d;
            }
        double tv = 0.0;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w + 1 < W; ++w)
                tv += std::abs(image.at3(c, h, w + 1) - image.at3(c, h, w));
        for (std::size_t h = 0; h + 1 < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
                tv += std::abs(image.at3(c, h + 1, w) - image.at3(c, h, w));
        out[c] = {mean, sq / static_cast<double>(H * W), tv};
    }
    return out;
}

/// Euclidean norm of all entries jointly.
inline double l2_norm(const Tensor& t) {
    double sq = 0.0;
    for (double v : t.data) sq += v * v;
    return std::sqrt(sq);
}

inline double l2_norm(std::span<const Tensor> tensors) {
    double sq = 0.0;
    for (const Tensor& t : tensors)
        for (double v : t.data) sq += v * v;
    return std::sqrt(sq);
}

/// All entries of a list of tensors laid end to end.
inline Tensor flatten_concat(std::span<const Tensor> tensors) {
    std::size_t total = 0;
    for (const Tensor& t : tensors) total += t.size();
    Tensor out({total});
    std::size_t at = 0;
    for (const Tensor& t : tensors) {
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + at);
        at += t.size();
    }
    return out;
}

}  // namespace fedleak
