#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedleak/image.hpp"
#include "fedleak/rng.hpp"

namespace fedleak {

/// What the generator should draw. The default draws a random shape and
/// intensity class per sample; tests pin individual fields.
struct SubjectSpec {
    enum class Shape { Random, Disk, Rect };
    Shape shape = Shape::Random;
    double radius_frac = 0.0;  // disk radius as a fraction of H; 0 = random in [1/8, 0.42]
    bool centered = false;     // pin the subject to the image centre

    // Subject intensities stay disjoint from the background band so that a
    // simple luminance threshold separates them.
    double background_lo = 0.05, background_hi = 0.45;
    double subject_low_lo = 0.55, subject_low_hi = 0.72;   // class "dim"
    double subject_high_lo = 0.78, subject_high_hi = 0.95; // class "bright"
};

inline constexpr int kSyntheticClasses = 4;  // {disk, rect} × {dim, bright}

/// Textured random background plus one geometric subject per sample, with
/// the exact subject mask attached as ground truth. Labels encode
/// shape and intensity class: label = 2*(shape==rect) + (class==bright).
/// Subject sizes and intensities vary widely on purpose: downstream
/// separation keys on the total subject mass, so spread matters.
inline ImageBatch gen_synthetic_batch(SeededRng& rng, std::size_t B, std::size_t C,
                                      std::size_t H, std::size_t W,
                                      const SubjectSpec& spec = {}) {
    if (B < 1) throw std::invalid_argument("gen_synthetic_batch: batch must be >= 1");
    if (C != 1 && C != 3) throw std::invalid_argument("gen_synthetic_batch: channels must be 1 or 3");
    if (H < 8 || W < 8) throw std::invalid_argument("gen_synthetic_batch: images must be at least 8x8");

    ImageBatch out;
    out.images = Tensor({B, C, H, W});
    out.masks = Tensor({B, 1, H, W});
    out.labels.resize(B);

    for (std::size_t b = 0; b < B; ++b) {
        const bool rect = spec.shape == SubjectSpec::Shape::Rect ||
                          (spec.shape == SubjectSpec::Shape::Random && rng.uniform01() < 0.5);
        const bool bright = rng.uniform01() < 0.5;
        out.labels[b] = 2 * (rect ? 1 : 0) + (bright ? 1 : 0);
        const double lo = bright ? spec.subject_high_lo : spec.subject_low_lo;
        const double hi = bright ? spec.subject_high_hi : spec.subject_low_hi;

        // Background texture first.
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    out.images.at4(b, c, h, w) = rng.uniform(spec.background_lo, spec.background_hi);

        // Subject geometry.
        const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);
        if (!rect) {
            const double r = spec.radius_frac > 0.0 ? spec.radius_frac * Hd
                                                    : rng.uniform(Hd / 8.0, 0.42 * Hd);
            double cy = Hd / 2.0, cx = Wd / 2.0;
            if (!spec.centered) {
                cy = rng.uniform(r, Hd - r);
                cx = rng.uniform(r, Wd - r);
            }
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) {
                    const double dy = (static_cast<double>(h) + 0.5) - cy;
                    const double dx = (static_cast<double>(w) + 0.5) - cx;
                    if (dy * dy + dx * dx <= r * r) out.masks->at4(b, 0, h, w) = 1.0;
                }
        } else {
            const std::size_t rh = H / 5 + rng.below(H / 2 + 1);
            const std::size_t rw = W / 5 + rng.below(W / 2 + 1);
            std::size_t top = (H - rh) / 2, left = (W - rw) / 2;
            if (!spec.centered) {
                top = rng.below(H - rh + 1);
                left = rng.below(W - rw + 1);
            }
            for (std::size_t h = top; h < top + rh; ++h)
                for (std::size_t w = left; w < left + rw; ++w) out.masks->at4(b, 0, h, w) = 1.0;
        }

        // Paint the subject over the background.
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                if (out.masks->at4(b, 0, h, w) != 1.0) continue;
                for (std::size_t c = 0; c < C; ++c)
                    out.images.at4(b, c, h, w) = rng.uniform(lo, hi);
            }
    }
    out.validate();
    return out;
}

/// Fresh batch sampled with the given seed; convenience for experiment code.
inline ImageBatch gen_synthetic_batch(std::uint64_t seed, std::size_t B, std::size_t C,
                                      std::size_t H, std::size_t W,
                                      const SubjectSpec& spec = {}) {
    SeededRng rng(seed);
    return gen_synthetic_batch(rng, B, C, H, W, spec);
}

}  // namespace fedleak
