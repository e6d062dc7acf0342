#pragma once

#include <cassert>
#include <stdexcept>
#include <vector>

#include "fedleak/stats.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak {

/// Per-entry-type weights applied to the metric vector before it enters the
/// metric layer. Recovery divides them back out; they only set how strongly
/// each metric type is imprinted on the gradients.
struct MetricFactors {
    double mean = 1.0;
    double variance = 10.0;
    double tv = 1e-3;
    double index = 4.0;  // reverse-unit entries
};

struct StructureConfig {
    std::size_t units = 256;        // K, weight-layer units
    std::size_t bias_copies = 100;  // D_b, rows of the bias layer
    std::size_t metric_units = 256; // N_m, metric-layer outputs
    std::size_t batch = 8;          // B the model is built for
    std::size_t channels = 3, height = 32, width = 32;
    double weight_value = 2e-4;     // shared weight w0 of every weight-layer row
    LaplaceParams laplace{1.7e-3, 1.3e-3};
    double tau = 1.0;               // output coefficient into the target model
    double output_gain = 12.0;      // linear gain of the separation output in the loss
    double metric_gain = 24.0;      // linear gain of the metric-layer output in the loss
    MetricFactors factors;
};

/// The malicious prefix in front of the target model: a 1×1 convolution
/// whose second half of output channels is zero, a weight layer with K
/// identical rows, a bias layer fed all-ones whose columns hold the
/// negated Laplace quantiles, and a metric layer imprinting batch metrics.
/// Only scalars and the quantile column are stored; the full parameter
/// tensors are materialized on demand (serialization, norm checks).
struct InferenceStructure {
    StructureConfig cfg;
    std::vector<double> bias_column;  // b_{1,k} = -Q(k/K), strictly decreasing, length K

    std::size_t sample_size() const { return cfg.channels * cfg.height * cfg.width; }
    std::size_t conv_out_size() const { return 2 * sample_size(); }   // D_in of the weight layer
    std::size_t metric_vector_size() const { return cfg.batch * (3 * cfg.channels + 1); }
    std::size_t metric_input_size() const { return cfg.bias_copies * metric_vector_size(); }

    /// Effective bias of unit k (1-based): D_b * b_{1,k}.
    double effective_bias(std::size_t k) const {
        return static_cast<double>(cfg.bias_copies) * bias_column[k - 1];
    }

    /// Activation of unit k (1-based) for a sample with pixel sum `sum`.
    double activation(std::size_t k, double sum) const {
        return cfg.weight_value * sum + effective_bias(k);
    }

    /// 1×1 convolution kernels as a 2C×C tensor: channels 1..C identity,
    /// channels C+1..2C zero, no bias.
    Tensor conv_weights() const {
        const std::size_t C = cfg.channels;
        Tensor w({2 * C, C});
        for (std::size_t c = 0; c < C; ++c) w.at2(c, c) = 1.0;
        return w;
    }

    Tensor weight_layer_matrix() const {
        Tensor w({cfg.units, conv_out_size()}, cfg.weight_value);
        return w;
    }

    Tensor bias_layer_matrix() const {
        Tensor b({cfg.bias_copies, cfg.units});
        for (std::size_t j = 0; j < cfg.bias_copies; ++j)
            for (std::size_t k = 0; k < cfg.units; ++k) b.at2(j, k) = bias_column[k];
        return b;
    }
};

/// Build the structure. Bias of unit k is -Q(k/K); the last unit uses
/// p = K/(K+1) because the quantile diverges at 1. Effective biases come
/// out strictly decreasing for any valid scale.
inline InferenceStructure build_structure(const StructureConfig& cfg) {
    if (cfg.units < 2) throw std::invalid_argument("build_structure: at least 2 units required");
    if (cfg.bias_copies < 1) throw std::invalid_argument("build_structure: bias_copies must be >= 1");
    if (!(cfg.laplace.s > 0.0)) throw std::invalid_argument("build_structure: laplace scale must be positive");
    if (cfg.metric_units < 1) throw std::invalid_argument("build_structure: metric_units must be >= 1");
    if (cfg.channels < 1 || cfg.height < 1 || cfg.width < 1 || cfg.batch < 1)
        throw std::invalid_argument("build_structure: degenerate geometry");

    InferenceStructure s;
    s.cfg = cfg;
    s.bias_column.resize(cfg.units);
    const double K = static_cast<double>(cfg.units);
    for (std::size_t k = 1; k <= cfg.units; ++k) {
        const double p = k < cfg.units ? static_cast<double>(k) / K : K / (K + 1.0);
        s.bias_column[k - 1] = -laplace_quantile(p, cfg.laplace);
    }
    for (std::size_t k = 1; k + 1 <= cfg.units; ++k)
        assert(s.bias_column[k - 1] > s.bias_column[k] && "bias column must decrease");
    return s;
}

/// Result of the reverse-unit scan for one sample.
struct ReverseIndex {
    std::size_t unit = 1;   // 1-based
    bool degenerate = false;  // no positive activation; gradients land in unit 1
};

/// The unique unit whose activation is the minimal positive one.
/// Activations are strictly decreasing in k, so this is the largest k with
/// activation > 0; all-positive saturates to K, all-nonpositive is flagged.
inline ReverseIndex reverse_index_of_sum(const InferenceStructure& s, double pixel_sum) {
    const std::size_t K = s.cfg.units;
    if (!(s.activation(1, pixel_sum) > 0.0)) return {1, true};
    if (s.activation(K, pixel_sum) > 0.0) return {K, false};
    // Binary search for the boundary: a(lo) > 0 >= a(hi).
    std::size_t lo = 1, hi = K;
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (s.activation(mid, pixel_sum) > 0.0) lo = mid; else hi = mid;
    }
    return {lo, false};
}

/// Same contract, taking the sample in conv-output space (or any tensor
/// whose entries should be summed).
inline ReverseIndex reverse_index(const InferenceStructure& s, const Tensor& masked_sample) {
    double sum = 0.0;
    for (double v : masked_sample.data) sum += v;
    return reverse_index_of_sum(s, sum);
}

}  // namespace fedleak
