#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedleak/tensor.hpp"

namespace fedleak {

struct MaskingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A batch of victim images: B×C×H×W pixels in [0,1], one class label per
/// sample, and optionally per-sample binary subject masks (B×1×H×W).
struct ImageBatch {
    Tensor images;            // B×C×H×W
    std::vector<int> labels;  // length B
    std::optional<Tensor> masks;  // B×1×H×W, entries in {0,1}

    std::size_t batch() const { return images.shape[0]; }
    std::size_t channels() const { return images.shape[1]; }
    std::size_t height() const { return images.shape[2]; }
    std::size_t width() const { return images.shape[3]; }
    std::size_t pixels_per_sample() const { return channels() * height() * width(); }

    void validate() const {
        if (images.shape.size() != 4) throw std::invalid_argument("ImageBatch: rank-4 image tensor expected");
        if (labels.size() != batch()) throw std::invalid_argument("ImageBatch: one label per sample expected");
        for (double v : images.data)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ImageBatch: pixel outside [0,1]");
        if (masks) {
            const Tensor& m = *masks;
            if (m.shape.size() != 4 || m.shape[0] != batch() || m.shape[1] != 1 ||
                m.shape[2] != height() || m.shape[3] != width())
                throw std::invalid_argument("ImageBatch: mask shape must be B×1×H×W");
            for (double v : m.data)
                if (v != 0.0 && v != 1.0) throw std::invalid_argument("ImageBatch: mask entry outside {0,1}");
        }
    }

    Tensor sample(std::size_t b) const { return slice_sample(images, b); }
};

enum class MaskStrategy {
    Oracle,              // ground-truth masks attached by the generator
    LuminanceThreshold,  // pixel kept where the channel mean exceeds a threshold
    ExternalFile,        // masks supplied by the caller (e.g. read from PGM files)
};

/// Produces a {0,1} mask batch for any input batch. The oracle strategy
/// requires generator ground truth; the threshold strategy needs none and
/// demonstrates behaviour under imperfect masks.
struct MaskProvider {
    MaskStrategy strategy = MaskStrategy::Oracle;
    double threshold = 0.5;                // LuminanceThreshold only
    std::optional<Tensor> external_masks;  // ExternalFile only

    Tensor provide(const ImageBatch& batch) const {
        const std::size_t B = batch.batch(), C = batch.channels();
        const std::size_t H = batch.height(), W = batch.width();
        switch (strategy) {
            case MaskStrategy::Oracle: {
                if (!batch.masks)
                    throw MaskingError("mask provider: no ground-truth mask for sample 0");
                return *batch.masks;
            }
            case MaskStrategy::LuminanceThreshold: {
                Tensor m({B, 1, H, W});
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w) {
                            double lum = 0.0;
                            for (std::size_t c = 0; c < C; ++c) lum += batch.images.at4(b, c, h, w);
                            lum /= static_cast<double>(C);
                            m.at4(b, 0, h, w) = lum > threshold ? 1.0 : 0.0;
                        }
                return m;
            }
            case MaskStrategy::ExternalFile: {
                if (!external_masks)
                    throw MaskingError("mask provider: no external mask for sample 0");
                const Tensor& m = *external_masks;
                if (m.shape.size() != 4 || m.shape[1] != 1 || m.shape[2] != H || m.shape[3] != W)
                    throw MaskingError("mask provider: external mask shape mismatch");
                if (m.shape[0] < B)
                    throw MaskingError("mask provider: no external mask for sample " +
                                       std::to_string(m.shape[0]));
                if (m.shape[0] == B) return m;
                Tensor cut({B, 1, H, W});
                std::copy(m.data.begin(), m.data.begin() + cut.size(), cut.data.begin());
                return cut;
            }
        }
        throw MaskingError("mask provider: unknown strategy");
    }
};

/// Keep subject pixels, zero the rest. Output pixel is exactly 0.0 outside
/// the mask and bit-identical to the input inside it; the mask batch is
/// attached to the result. Idempotent.
inline ImageBatch extract_subject(const ImageBatch& batch, const MaskProvider& provider) {
    Tensor masks = provider.provide(batch);
    const std::size_t B = batch.batch(), C = batch.channels();
    const std::size_t H = batch.height(), W = batch.width();
    ImageBatch out;
    out.images = Tensor({B, C, H, W});
    out.labels = batch.labels;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    out.images.at4(b, c, h, w) =
                        masks.at4(b, 0, h, w) == 1.0 ? batch.images.at4(b, c, h, w) : 0.0;
    out.masks = std::move(masks);
    return out;
}

}  // namespace fedleak
