#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fedleak/forward_backward.hpp"
#include "fedleak/gradients.hpp"
#include "fedleak/optimize.hpp"
#include "fedleak/quality.hpp"
#include "fedleak/stats.hpp"
#include "fedleak/structure.hpp"

namespace fedleak {

/// Server-side knobs of the reconstruction pipeline.
struct AttackOptions {
    double z = 2.576;             // two-sided 99% confidence multiplier
    double division_floor = 1e-12;
    std::size_t min_negatives = 1000;
    ObjectiveWeights objective;
    bool run_optimize = true;  // step (7)
    bool run_filter = true;    // step (8)
};

struct SigmaEstimate {
    double sigma = 0.0;
    double sigma_from_variance = 0.0;
    std::size_t negatives = 0;
};

/// Step (1): estimate the perturbation scale from the gradient positions
/// the zero conv channels pin to zero. Those entries carry pure noise; the
/// nonpositive ones follow a (negated) half-normal whose moments give
/// sigma. An exactly-zero field means no perturbation: sigma 0.
inline SigmaEstimate estimate_sigma(const ProtectedGradients& view, const InferenceStructure& s,
                                    std::size_t min_negatives = 1000) {
    const std::size_t K = s.cfg.units, ni = s.sample_size(), din = s.conv_out_size();
    const std::vector<double> wl = view.values(kWeightLayer);
    std::vector<double> kept;
    kept.reserve(K * ni);
    bool all_zero = true;
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t t = ni; t < din; ++t) {
            const double v = wl[k * din + t];
            if (v != 0.0) all_zero = false;
            if (v <= 0.0) kept.push_back(v);
        }
    if (all_zero) return {0.0, 0.0, kept.size()};
    if (kept.size() < min_negatives)
        throw InsufficientSamplesError("estimate_sigma: only " + std::to_string(kept.size()) +
                                       " nonpositive noise samples, need " +
                                       std::to_string(min_negatives));
    const HalfNormalEstimate est = half_normal_sigma(kept);
    return {est.sigma, est.sigma_from_variance, est.count};
}

/// Step (2): average the D_b identical copies in every bias-layer column.
inline std::vector<double> reconstruct_bias(const ProtectedGradients& view,
                                            const InferenceStructure& s) {
    const std::size_t K = s.cfg.units, Db = s.cfg.bias_copies;
    const std::vector<double> bl = view.values(kBiasLayer);
    std::vector<double> bias_hat(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        double sum = 0.0;
        for (std::size_t j = 0; j < Db; ++j) sum += bl[j * K + k];
        bias_hat[k] = sum / static_cast<double>(Db);
    }
    return bias_hat;
}

struct RawReconstruction {
    Tensor candidates;             // K×C×H×W
    std::vector<double> bias_hat;  // averaged bias gradients, value domain
    std::vector<bool> valid;       // false where the averaged bias vanished
};

/// Step (3): per unit, divide the weight-layer row by the averaged bias
/// gradient over the real conv channels. Units whose averaged bias is
/// below the floor yield a zero image flagged invalid.
inline RawReconstruction raw_reconstruct(const ProtectedGradients& view,
                                         const InferenceStructure& s,
                                         double division_floor = 1e-12) {
    const std::size_t K = s.cfg.units, ni = s.sample_size();
    auto divided = view.rows_divided_by_column_means(kWeightLayer, kBiasLayer, ni);
    RawReconstruction r;
    r.candidates = Tensor({K, s.cfg.channels, s.cfg.height, s.cfg.width});
    r.bias_hat = std::move(divided.column_mean_values);
    r.valid.assign(K, false);
    for (std::size_t k = 0; k < K; ++k) {
        if (std::abs(r.bias_hat[k]) < division_floor) continue;  // zero image, invalid
        r.valid[k] = true;
        std::copy(divided.rows[k].begin(), divided.rows[k].end(),
                  r.candidates.data.begin() + k * ni);
    }
    return r;
}

struct MetricRecovery {
    MetricMatrix metrics;            // factor weighting divided back out
    std::vector<std::size_t> reverse_hat;  // decoded reverse units, 1-based
    std::vector<std::string> warnings;
};

/// Step (4): the metric layer saw a batch of one, so its input (the tiled,
/// factor-weighted metric vector) comes back by dividing weight by bias
/// gradients, replicate-averaged and row-combined. Indices decode by
/// rounding i0/K·K; out-of-range decodes are clamped and noted.
inline MetricRecovery reconstruct_metrics(const ProtectedGradients& view,
                                          const InferenceStructure& s) {
    const std::size_t B = s.cfg.batch, C = s.cfg.channels, K = s.cfg.units;
    const std::size_t n_in = s.metric_vector_size();
    std::vector<double> rec =
        view.affine_input_from_gradients(kMetricWeight, kMetricBias, n_in, s.cfg.bias_copies);

    MetricRecovery out;
    out.metrics.batch = B;
    out.metrics.channels = C;
    out.metrics.values.assign(n_in, 0.0);
    const MetricFactors& f = s.cfg.factors;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            out.metrics.metric(b, c, 0) = rec[(b * C + c) * 3 + 0] / f.mean;
            out.metrics.metric(b, c, 1) = rec[(b * C + c) * 3 + 1] / f.variance;
            out.metrics.metric(b, c, 2) = rec[(b * C + c) * 3 + 2] / f.tv;
        }
    out.reverse_hat.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double raw = rec[out.metrics.metrics_count() + b] / f.index;
        out.metrics.index_entry(b) = raw;
        long decoded = std::lround(raw * static_cast<double>(K));
        if (decoded < 1 || decoded > static_cast<long>(K)) {
            out.warnings.push_back("decoded reverse unit " + std::to_string(decoded) +
                                   " for sample " + std::to_string(b) + " clamped");
            decoded = std::clamp<long>(decoded, 1, static_cast<long>(K));
        }
        out.reverse_hat[b] = static_cast<std::size_t>(decoded);
    }
    return out;
}

struct AlignedSample {
    Tensor image;           // C×H×W candidate at this sample's reverse unit
    TargetMetrics metrics;  // the sample's recovered per-channel block
    std::size_t unit = 1;
    bool overlapped = false;
};

/// Steps (5)+(6): discard the meaningless candidates, keep the one at each
/// decoded reverse unit, and pair it with that sample's metric block so
/// sample order and metric order agree. Samples sharing a unit are kept
/// once each but flagged overlapped.
inline std::vector<AlignedSample> align_and_filter(const RawReconstruction& raw,
                                                   const MetricRecovery& rec) {
    const std::size_t B = rec.reverse_hat.size();
    std::map<std::size_t, std::size_t> unit_count;
    for (std::size_t u : rec.reverse_hat) ++unit_count[u];

    std::vector<AlignedSample> out(B);
    const std::size_t C = raw.candidates.shape[1];
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t unit = rec.reverse_hat[b];
        AlignedSample& a = out[b];
        a.unit = unit;
        a.overlapped = unit_count[unit] > 1;
        a.image = slice_sample(raw.candidates, unit - 1);
        a.metrics.per_channel.resize(C);
        for (std::size_t c = 0; c < C; ++c)
            a.metrics.per_channel[c] = {rec.metrics.metric(b, c, 0), rec.metrics.metric(b, c, 1),
                                        rec.metrics.metric(b, c, 2)};
    }
    return out;
}

/// Step (8): zero every pixel whose magnitude, rescaled by the averaged
/// bias gradient of its unit, falls inside the scaled noise interval
/// z·σ̂·√2 (the √2 absorbs the residual, replicate-averaged denominator
/// noise). Returns true when the image survived with at least one nonzero
/// pixel.
inline bool noise_filter(Tensor& image, double sigma_hat, double bias_hat_unit, double z) {
    const double threshold = z * sigma_hat * std::sqrt(2.0);
    bool any_nonzero = false;
    for (double& p : image.data) {
        if (std::abs(p) * std::abs(bias_hat_unit) <= threshold) p = 0.0;
        else any_nonzero = true;
    }
    return any_nonzero;
}

/// Everything the pipeline produces for one protected bundle.
struct AttackResult {
    double sigma_hat = 0.0;
    double sigma_hat_from_variance = 0.0;
    std::vector<double> bias_hat;        // length K
    Tensor raw_images;                   // K×C×H×W candidates
    std::vector<std::size_t> reverse_hat;  // length B
    MetricMatrix metrics_hat;
    Tensor optimized_images;             // B×C×H×W, after step (7), before filtering
    Tensor final_images;                 // B×C×H×W
    std::vector<bool> overlapped;        // length B
    std::vector<bool> degenerate;        // all-zero after filtering
    std::vector<std::string> warnings;
    QualityReport quality;               // filled by the caller when truth is at hand
};

/// The full reconstruction pipeline on one uploaded gradient bundle.
/// Per-sample failures are recorded and the remaining samples continue.
inline AttackResult run_attack(const ProtectedGradients& view, const InferenceStructure& s,
                               const AttackOptions& opt = {}) {
    if (s.cfg.batch > s.cfg.units)
        throw std::invalid_argument("run_attack: batch size " + std::to_string(s.cfg.batch) +
                                    " exceeds the " + std::to_string(s.cfg.units) +
                                    " separation units; the structure cannot separate");
    AttackResult res;

    // (1) privacy parameter extraction
    const SigmaEstimate sig = estimate_sigma(view, s, opt.min_negatives);
    res.sigma_hat = sig.sigma;
    res.sigma_hat_from_variance = sig.sigma_from_variance;

    // (2)+(3) bias reconstruction and raw division
    RawReconstruction raw = raw_reconstruct(view, s, opt.division_floor);
    res.bias_hat = raw.bias_hat;

    // (4) metric and reverse-unit recovery
    MetricRecovery rec = reconstruct_metrics(view, s);
    res.warnings = rec.warnings;

    // Candidates are meaningful only at units whose averaged bias gradient
    // rises above the replicate-averaged noise floor; a noisy index decode
    // pointing at a dead unit is snapped to the nearest live one.
    {
        const double floor = std::max(opt.division_floor,
                                      6.0 * res.sigma_hat /
                                          std::sqrt(static_cast<double>(s.cfg.bias_copies)));
        std::vector<std::size_t> live;
        for (std::size_t k = 0; k < raw.bias_hat.size(); ++k)
            if (std::abs(raw.bias_hat[k]) > floor) live.push_back(k + 1);
        if (!live.empty()) {
            for (std::size_t b = 0; b < rec.reverse_hat.size(); ++b) {
                const std::size_t u = rec.reverse_hat[b];
                if (std::abs(raw.bias_hat[u - 1]) > floor) continue;
                std::size_t best = live[0];
                for (std::size_t k : live)
                    if (std::llabs(static_cast<long long>(k) - static_cast<long long>(u)) <
                        std::llabs(static_cast<long long>(best) - static_cast<long long>(u)))
                        best = k;
                res.warnings.push_back("sample " + std::to_string(b) + ": decoded unit " +
                                       std::to_string(u) + " carries no gradient, snapped to " +
                                       std::to_string(best));
                rec.reverse_hat[b] = best;
            }
        }
    }
    res.metrics_hat = rec.metrics;
    res.reverse_hat = rec.reverse_hat;

    // (5)+(6) alignment and image filtering
    std::vector<AlignedSample> aligned = align_and_filter(raw, rec);

    const std::size_t B = aligned.size();
    res.final_images = Tensor({B, s.cfg.channels, s.cfg.height, s.cfg.width});
    res.optimized_images = Tensor(res.final_images.shape);
    res.overlapped.resize(B);
    res.degenerate.assign(B, false);

    for (std::size_t b = 0; b < B; ++b) {
        AlignedSample& a = aligned[b];
        res.overlapped[b] = a.overlapped;
        if (!raw.valid[a.unit - 1])
            res.warnings.push_back("sample " + std::to_string(b) + ": reverse unit " +
                                   std::to_string(a.unit) + " has no usable gradient");

        Tensor image = std::move(a.image);
        // (7) metric-based optimization; descend projects to [0,1] after
        // each accepted step and rejects steps that cannot decrease the
        // objective, so a candidate that the projection would distort is
        // left untouched.
        if (opt.run_optimize && opt.objective.rounds > 0)
            image = descend(std::move(image), a.metrics, opt.objective);
        std::copy(image.data.begin(), image.data.end(),
                  res.optimized_images.data.begin() + b * image.size());
        // (8) confidence-interval noise filtering
        if (opt.run_filter) {
            if (!noise_filter(image, res.sigma_hat, raw.bias_hat[a.unit - 1], opt.z)) {
                res.degenerate[b] = true;
                res.warnings.push_back("sample " + std::to_string(b) +
                                       ": filtered to an all-zero image");
            }
        }
        std::copy(image.data.begin(), image.data.end(),
                  res.final_images.data.begin() + b * image.size());
    }
    res.raw_images = std::move(raw.candidates);
    return res;
}

/// The baseline division attack on a plain fully connected layer: the
/// element-wise quotient of weight by bias gradients. With more than one
/// sample this is the batch mean, nothing sharper.
inline Tensor primary_attack(const Tensor& weight_grads, const Tensor& bias_grads) {
    if (weight_grads.shape.empty() || bias_grads.shape.empty())
        throw std::invalid_argument("primary_attack: empty gradients");
    const std::size_t D =
        weight_grads.shape.size() == 2 ? weight_grads.shape[1] : weight_grads.shape[0];
    const std::size_t K = weight_grads.shape.size() == 2 ? weight_grads.shape[0] : 1;
    if (bias_grads.size() != K) throw std::invalid_argument("primary_attack: shape mismatch");
    Tensor out({D});
    double denom = 0.0;
    for (double v : bias_grads.data) denom += v;
    if (denom == 0.0) throw std::domain_error("primary_attack: zero bias gradient");
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t t = 0; t < D; ++t) out[t] += weight_grads.data[k * D + t];
    for (double& v : out.data) v /= denom;
    return out;
}

}  // namespace fedleak
