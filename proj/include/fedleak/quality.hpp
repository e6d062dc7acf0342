#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak {

/// Mean squared difference; images share a shape and live in [0,1].
inline double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

/// PSNR in dB with peak value 1, capped at 100 dB for near-zero MSE.
inline double psnr(const Tensor& a, const Tensor& b) {
    const double m = mse(a, b);
    if (m < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / m);
}

inline double psnr_from_mse(double m) {
    if (m < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / m);
}

/// Structural similarity with sliding 8×8 uniform windows, stabilizers
/// k1 = 0.01, k2 = 0.03, dynamic range 1. Channels averaged. Symmetric.
inline double ssim(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (a.shape.size() != 3) throw std::invalid_argument("ssim: C×H×W tensors expected");
    const std::size_t C = a.shape[0], H = a.shape[1], W = a.shape[2];
    if (H < 8 || W < 8) throw std::invalid_argument("ssim: images must be at least 8x8");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    constexpr std::size_t win = 8;
    const double n = static_cast<double>(win * win);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h0 = 0; h0 + win <= H; ++h0)
            for (std::size_t w0 = 0; w0 + win <= W; ++w0) {
                double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (std::size_t h = h0; h < h0 + win; ++h)
                    for (std::size_t w = w0; w < w0 + win; ++w) {
                        const double va = a.at3(c, h, w), vb = b.at3(c, h, w);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                const double ma = sa / n, mb = sb / n;
                const double va = saa / n - ma * ma;
                const double vb = sbb / n - mb * mb;
                const double cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
    return total / static_cast<double>(windows);
}

/// Per-sample and batch-level reconstruction quality. PSNR is reported in
/// both averaging orders (mean of per-sample PSNRs, and PSNR of the mean
/// MSE) since the two differ and either may be wanted downstream.
struct QualityReport {
    std::vector<double> sample_mse;
    std::vector<double> sample_psnr;
    std::vector<double> sample_ssim;
    double mean_mse = 0.0;
    double mean_psnr = 0.0;       // mean of per-sample PSNRs
    double psnr_of_mean_mse = 0.0;
    double mean_ssim = 0.0;

    static constexpr const char* csv_header = "sample,mse,psnr,ssim";

    std::string to_csv() const {
        std::ostringstream out;
        out << csv_header << "\n";
        for (std::size_t i = 0; i < sample_mse.size(); ++i)
            out << i << "," << sample_mse[i] << "," << sample_psnr[i] << "," << sample_ssim[i]
                << "\n";
        out << "mean," << mean_mse << "," << mean_psnr << "," << mean_ssim << "\n";
        return out.str();
    }
};

/// Score a stack of reconstructions (B×C×H×W) against reference images of
/// the same shape. SSIM is clamped to [0,1] for reporting.
inline QualityReport score_images(const Tensor& reconstructed, const Tensor& reference) {
    if (!reconstructed.same_shape(reference))
        throw std::invalid_argument("score_images: shape mismatch");
    const std::size_t B = reconstructed.shape[0];
    QualityReport q;
    for (std::size_t b = 0; b < B; ++b) {
        const Tensor ra = slice_sample(reconstructed, b);
        const Tensor rb = slice_sample(reference, b);
        const double m = mse(ra, rb);
        q.sample_mse.push_back(m);
        q.sample_psnr.push_back(psnr_from_mse(m));
        q.sample_ssim.push_back(std::clamp(ssim(ra, rb), 0.0, 1.0));
    }
    for (double v : q.sample_mse) q.mean_mse += v;
    q.mean_mse /= static_cast<double>(B);
    for (double v : q.sample_psnr) q.mean_psnr += v;
    q.mean_psnr /= static_cast<double>(B);
    for (double v : q.sample_ssim) q.mean_ssim += v;
    q.mean_ssim /= static_cast<double>(B);
    q.psnr_of_mean_mse = psnr_from_mse(q.mean_mse);
    return q;
}

/// Fraction of samples reconstructed at an unshared reverse unit, over any
/// container of results exposing an `overlapped` flag vector.
template <class Result>
double separation_ratio(std::span<const Result> trials) {
    if (trials.empty()) throw std::invalid_argument("separation_ratio: at least one trial required");
    std::size_t total = 0, separated = 0;
    for (const Result& r : trials) {
        for (bool o : r.overlapped) {
            ++total;
            if (!o) ++separated;
        }
    }
    if (total == 0) throw std::invalid_argument("separation_ratio: trials carry no samples");
    return static_cast<double>(separated) / static_cast<double>(total);
}

/// Histogram bin edges for per-entry relative gradient differences.
inline constexpr std::array<double, 5> kDiffBinEdges = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2};

/// Bucket the per-entry relative differences |a-b| / |b| of two aligned
/// gradient vectors into six bins: (-inf,1e-6), [1e-6,1e-5), …, [1e-2,inf).
/// Proportions sum to 1. Entries where both sides are exactly zero count
/// as zero difference.
inline std::array<double, 6> gradient_diff_proportions(std::span<const double> with_attack,
                                                       std::span<const double> without_attack) {
    if (with_attack.size() != without_attack.size() || with_attack.empty())
        throw std::invalid_argument("gradient_diff_proportions: layout mismatch");
    std::array<std::size_t, 6> counts{};
    for (std::size_t i = 0; i < with_attack.size(); ++i) {
        const double a = with_attack[i], b = without_attack[i];
        double rel;
        if (a == b) rel = 0.0;
        else if (b == 0.0) rel = std::numeric_limits<double>::infinity();
        else rel = std::abs(a - b) / std::abs(b);
        std::size_t bin = 0;
        while (bin < kDiffBinEdges.size() && rel >= kDiffBinEdges[bin]) ++bin;
        ++counts[bin];
    }
    std::array<double, 6> out{};
    for (std::size_t i = 0; i < 6; ++i)
        out[i] = static_cast<double>(counts[i]) / static_cast<double>(with_attack.size());
    return out;
}

}  // namespace fedleak
