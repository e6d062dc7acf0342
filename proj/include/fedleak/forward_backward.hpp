#pragma once

#include <string>
#include <vector>

#include "fedleak/gradients.hpp"
#include "fedleak/image.hpp"
#include "fedleak/stats.hpp"
#include "fedleak/structure.hpp"
#include "fedleak/target_model.hpp"

namespace fedleak {

// Canonical layer names of the global model's gradient bundle.
inline constexpr const char* kConvLayer = "conv";
inline constexpr const char* kWeightLayer = "weight_layer";
inline constexpr const char* kBiasLayer = "bias_layer";
inline constexpr const char* kMetricWeight = "metric_weight";
inline constexpr const char* kMetricBias = "metric_bias";
inline constexpr const char* kTargetLayers[] = {"target_w1", "target_b1", "target_w2", "target_b2"};

/// Batch-wise metric block: per sample the C×3 (mean, variance, TV) rows
/// flattened row-major, followed by one normalized reverse-unit entry per
/// sample. Layout: [sample 0: mean_0,var_0,tv_0, …, mean_{C-1},var_{C-1},tv_{C-1}] …
/// for all B samples, then [i0(0)/K, …, i0(B-1)/K].
struct MetricMatrix {
    std::size_t batch = 0, channels = 0;
    std::vector<double> values;  // length B*(3C+1)

    std::size_t metrics_count() const { return batch * 3 * channels; }
    double& metric(std::size_t b, std::size_t c, std::size_t stat) {
        return values[(b * channels + c) * 3 + stat];
    }
    double metric(std::size_t b, std::size_t c, std::size_t stat) const {
        return values[(b * channels + c) * 3 + stat];
    }
    double& index_entry(std::size_t b) { return values[metrics_count() + b]; }
    double index_entry(std::size_t b) const { return values[metrics_count() + b]; }
};

/// Metrics of a masked batch plus the normalized reverse units.
inline MetricMatrix metric_matrix(const ImageBatch& masked,
                                  std::span<const ReverseIndex> reverse, std::size_t units) {
    const std::size_t B = masked.batch(), C = masked.channels();
    if (reverse.size() != B) throw std::invalid_argument("metric_matrix: one reverse index per sample");
    MetricMatrix m;
    m.batch = B;
    m.channels = C;
    m.values.assign(B * (3 * C + 1), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        const Tensor img = masked.sample(b);
        const auto stats = channel_stats(img);
        for (std::size_t c = 0; c < C; ++c) {
            m.metric(b, c, 0) = stats[c].mean;
            m.metric(b, c, 1) = stats[c].variance;
            m.metric(b, c, 2) = stats[c].tv;
        }
        m.index_entry(b) = static_cast<double>(reverse[b].unit) / static_cast<double>(units);
    }
    return m;
}

/// The factor-weighted metric vector tiled `replicates` times, as the
/// metric layer sees it.
inline std::vector<double> metric_layer_input(const MetricMatrix& m, const MetricFactors& f,
                                              std::size_t replicates) {
    const std::size_t n = m.values.size();
    std::vector<double> weighted(n);
    for (std::size_t b = 0; b < m.batch; ++b)
        for (std::size_t c = 0; c < m.channels; ++c) {
            weighted[(b * m.channels + c) * 3 + 0] = f.mean * m.metric(b, c, 0);
            weighted[(b * m.channels + c) * 3 + 1] = f.variance * m.metric(b, c, 1);
            weighted[(b * m.channels + c) * 3 + 2] = f.tv * m.metric(b, c, 2);
        }
    for (std::size_t b = 0; b < m.batch; ++b)
        weighted[m.metrics_count() + b] = f.index * m.index_entry(b);
    std::vector<double> tiled(n * replicates);
    for (std::size_t d = 0; d < replicates; ++d)
        std::copy(weighted.begin(), weighted.end(), tiled.begin() + d * n);
    return tiled;
}

struct ForwardBackwardResult {
    double loss = 0.0;
    GradientBundle grads;
    std::vector<ReverseIndex> reverse;
    std::vector<double> y_min;
    MetricMatrix metrics;
};

inline GradientBundle make_gradient_bundle(const InferenceStructure& s, const TargetModel& t) {
    GradientBundle g;
    g.add(kConvLayer, {2 * s.cfg.channels, s.cfg.channels});
    g.add(kWeightLayer, {s.cfg.units, s.conv_out_size()});
    g.add(kBiasLayer, {s.cfg.bias_copies, s.cfg.units});
    g.add(kMetricWeight, {s.cfg.metric_units, s.metric_input_size()});
    g.add(kMetricBias, {s.cfg.bias_copies, s.cfg.metric_units});
    g.add(kTargetLayers[0], t.w1.shape);
    g.add(kTargetLayers[1], t.b1.shape);
    g.add(kTargetLayers[2], t.w2.shape);
    g.add(kTargetLayers[3], t.b2.shape);
    return g;
}

/// Forward and closed-form backward pass of the full global model.
///
/// Forward: the masked sample runs through the 1×1 convolution (identity
/// channels plus zero channels), the weight layer (K identical rows of
/// w0) and the ones-fed bias layer; the minimal positive activation
/// y_min is selected at the sample's reverse unit. Masking applies to the
/// inference path only: the target model input is the original flattened
/// sample plus τ·y_min broadcast to every unit
/// plus the metric-layer output tiled to the input length (its parameters
/// are zero, so that addition vanishes while its gradients still imprint
/// the metric vector). The loss is the batch-mean cross entropy plus the
/// linear structure outputs τ·output_gain·mean(y_min) and
/// τ·metric_gain·mean(metric_out); the linear taps pin the separation and
/// metric gradients to known magnitudes so they survive clipping and
/// perturbation.
///
/// Backward guarantees, all exact:
///   - sample i's weight-layer gradient occupies row i0 only and equals
///     (∂L/∂y_min_i) · conv_output(x_i), so its second half is zero;
///   - bias-layer column i0 holds D_b bit-identical copies of ∂L/∂y_min_i;
///   - the metric-weight gradient is the outer product of the metric-output
///     gradient with the tiled metric vector.
inline ForwardBackwardResult forward_backward(const InferenceStructure& s, const TargetModel& target,
                                              const ImageBatch& raw, const ImageBatch& masked,
                                              double tau_override = -1.0) {
    const std::size_t B = masked.batch(), C = masked.channels();
    const std::size_t ni = masked.pixels_per_sample();
    if (B != s.cfg.batch)
        throw std::invalid_argument("forward_backward: batch size differs from the structure's");
    if (C != s.cfg.channels || masked.height() != s.cfg.height || masked.width() != s.cfg.width)
        throw std::invalid_argument("forward_backward: sample geometry differs from the structure's");
    if (!raw.images.same_shape(masked.images) || raw.labels != masked.labels)
        throw std::invalid_argument("forward_backward: raw and masked batches disagree");
    if (target.input_size() != ni)
        throw std::invalid_argument("forward_backward: target input size mismatch");
    const double tau = tau_override >= 0.0 ? tau_override : s.cfg.tau;
    const double w0 = s.cfg.weight_value;
    const std::size_t K = s.cfg.units, Db = s.cfg.bias_copies, Nm = s.cfg.metric_units;
    const std::size_t nh = target.hidden_size(), nc = target.num_classes();

    ForwardBackwardResult r;
    r.grads = make_gradient_bundle(s, target);
    r.reverse.resize(B);
    r.y_min.resize(B);

    // Reverse units first; the metric matrix needs them.
    std::vector<double> pixel_sum(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        const double* x = &masked.images.data[b * ni];
        double sum = 0.0;
        for (std::size_t t = 0; t < ni; ++t) sum += x[t];
        pixel_sum[b] = sum;
        r.reverse[b] = reverse_index_of_sum(s, sum);
        r.y_min[b] = s.activation(r.reverse[b].unit, sum);
        if (r.reverse[b].degenerate)
            r.grads.notes.push_back("degenerate reverse index for sample " + std::to_string(b));
    }
    r.metrics = metric_matrix(masked, r.reverse, K);
    const std::vector<double> v_m = metric_layer_input(r.metrics, s.cfg.factors, Db);

    // Metric-layer forward output; its parameters are zero-valued, so every
    // unit emits 0 and the target input addition below adds nothing.
    const std::vector<double> metric_out(Nm, 0.0);

    Tensor& g_conv = r.grads.at(kConvLayer);
    Tensor& g_wl = r.grads.at(kWeightLayer);
    Tensor& g_bl = r.grads.at(kBiasLayer);
    Tensor& g_mw = r.grads.at(kMetricWeight);
    Tensor& g_mb = r.grads.at(kMetricBias);
    Tensor& g_w1 = r.grads.at(kTargetLayers[0]);
    Tensor& g_b1 = r.grads.at(kTargetLayers[1]);
    Tensor& g_w2 = r.grads.at(kTargetLayers[2]);
    Tensor& g_b2 = r.grads.at(kTargetLayers[3]);

    std::vector<double> bias_col(K, 0.0);    // accumulated ∂L/∂y_min per unit
    std::vector<double> g_metric(Nm, 0.0);   // ∂L/∂metric_out
    const double metric_tap = tau * s.cfg.metric_gain / static_cast<double>(Nm);
    for (double& g : g_metric) g = metric_tap;
    std::vector<double> z(ni), dz(ni), dh(nh), da1(nh);

    double ce_sum = 0.0, ymin_sum = 0.0;

    for (std::size_t b = 0; b < B; ++b) {
        const double* x = &masked.images.data[b * ni];   // inference path
        const double* x_raw = &raw.images.data[b * ni];  // target path
        const double inj = tau * r.y_min[b];
        for (std::size_t t = 0; t < ni; ++t) z[t] = x_raw[t] + inj + tau * metric_out[t % Nm];

        const TargetForward f = target_forward(target, z, masked.labels[b]);
        ce_sum += f.loss;
        ymin_sum += r.y_min[b];

        // dlogit = (p - onehot)/B
        std::vector<double> dlogit(nc);
        for (std::size_t k = 0; k < nc; ++k)
            dlogit[k] = (f.probs[k] - (static_cast<int>(k) == masked.labels[b] ? 1.0 : 0.0)) /
                        static_cast<double>(B);

        for (std::size_t k = 0; k < nc; ++k) {
            g_b2[k] += dlogit[k];
            for (std::size_t h = 0; h < nh; ++h) g_w2.at2(k, h) += dlogit[k] * f.hidden[h];
        }
        for (std::size_t h = 0; h < nh; ++h) {
            double acc = 0.0;
            for (std::size_t k = 0; k < nc; ++k) acc += target.w2.at2(k, h) * dlogit[k];
            dh[h] = acc;
            da1[h] = acc * (1.0 - f.hidden[h] * f.hidden[h]);
            g_b1[h] += da1[h];
        }
        double gamma = 0.0;
        for (std::size_t t = 0; t < ni; ++t) {
            double acc = 0.0;
            for (std::size_t h = 0; h < nh; ++h) acc += target.w1.at2(h, t) * da1[h];
            dz[t] = acc;
            gamma += acc;
        }
        for (std::size_t h = 0; h < nh; ++h) {
            const double d = da1[h];
            double* row = &g_w1.data[h * ni];
            for (std::size_t t = 0; t < ni; ++t) row[t] += d * z[t];
        }
        for (std::size_t t = 0; t < ni; ++t) g_metric[t % Nm] += tau * dz[t];

        // ∂L/∂y_min: the linear structure output plus the broadcast path
        // (the latter vanishes when the target's first layer is row-centered).
        const double dy = tau * (s.cfg.output_gain / static_cast<double>(B) + gamma);

        const std::size_t unit = r.reverse[b].unit - 1;
        double* wrow = &g_wl.data[unit * s.conv_out_size()];
        for (std::size_t t = 0; t < ni; ++t) wrow[t] += dy * x[t];  // zero channels stay zero
        bias_col[unit] += dy;

        // Conv kernels: every output channel sees the same upstream w0·dy.
        for (std::size_t c = 0; c < C; ++c) {
            double chsum = 0.0;
            const std::size_t hw = s.cfg.height * s.cfg.width;
            for (std::size_t p = 0; p < hw; ++p) chsum += x[c * hw + p];
            for (std::size_t o = 0; o < 2 * C; ++o) g_conv.at2(o, c) += dy * w0 * chsum;
        }
    }

    // Bias layer: D_b identical copies per column, assigned (not re-derived)
    // so the copies are bit-identical.
    for (std::size_t j = 0; j < Db; ++j)
        for (std::size_t k = 0; k < K; ++k) g_bl.at2(j, k) = bias_col[k];

    // Metric layer: outer product of the output gradient with its input.
    // Its bias sublayer is fed ones like the separation bias layer, so
    // every output owns D_b bit-identical bias-gradient copies.
    const std::size_t n_in = v_m.size();
    for (std::size_t o = 0; o < Nm; ++o) {
        const double g = g_metric[o];
        for (std::size_t j = 0; j < Db; ++j) g_mb.at2(j, o) = g;
        double* row = &g_mw.data[o * n_in];
        for (std::size_t j = 0; j < n_in; ++j) row[j] = g * v_m[j];
    }

    r.loss = ce_sum / static_cast<double>(B) +
             tau * s.cfg.output_gain * ymin_sum / static_cast<double>(B);

    for (const auto& [name, t] : r.grads.layers()) t.ensure_finite("gradient " + name);
    return r;
}

/// Convenience form for callers whose batch is already masked (or who want
/// the masked image on both paths).
inline ForwardBackwardResult forward_backward(const InferenceStructure& s, const TargetModel& target,
                                              const ImageBatch& masked, double tau_override = -1.0) {
    return forward_backward(s, target, masked, masked, tau_override);
}

/// Gradients of the bare target model on the same batch (no inference
/// structure anywhere). Layer names match the target layers of the full
/// bundle so noise streams and aggregation line up entry for entry.
inline std::pair<double, GradientBundle> bare_forward_backward(const TargetModel& target,
                                                               const ImageBatch& batch) {
    const std::size_t B = batch.batch(), ni = batch.pixels_per_sample();
    if (target.input_size() != ni)
        throw std::invalid_argument("bare_forward_backward: target input size mismatch");
    const std::size_t nh = target.hidden_size(), nc = target.num_classes();

    GradientBundle g;
    g.add(kTargetLayers[0], target.w1.shape);
    g.add(kTargetLayers[1], target.b1.shape);
    g.add(kTargetLayers[2], target.w2.shape);
    g.add(kTargetLayers[3], target.b2.shape);
    Tensor& g_w1 = g.at(kTargetLayers[0]);
    Tensor& g_b1 = g.at(kTargetLayers[1]);
    Tensor& g_w2 = g.at(kTargetLayers[2]);
    Tensor& g_b2 = g.at(kTargetLayers[3]);

    double ce_sum = 0.0;
    std::vector<double> da1(nh);
    for (std::size_t b = 0; b < B; ++b) {
        const double* x = &batch.images.data[b * ni];
        const TargetForward f = target_forward(target, std::span<const double>(x, ni), batch.labels[b]);
        ce_sum += f.loss;
        std::vector<double> dlogit(nc);
        for (std::size_t k = 0; k < nc; ++k)
            dlogit[k] = (f.probs[k] - (static_cast<int>(k) == batch.labels[b] ? 1.0 : 0.0)) /
                        static_cast<double>(B);
        for (std::size_t k = 0; k < nc; ++k) {
            g_b2[k] += dlogit[k];
            for (std::size_t h = 0; h < nh; ++h) g_w2.at2(k, h) += dlogit[k] * f.hidden[h];
        }
        for (std::size_t h = 0; h < nh; ++h) {
            double acc = 0.0;
            for (std::size_t k = 0; k < nc; ++k) acc += target.w2.at2(k, h) * dlogit[k];
            da1[h] = acc * (1.0 - f.hidden[h] * f.hidden[h]);
            g_b1[h] += da1[h];
        }
        for (std::size_t h = 0; h < nh; ++h) {
            const double d = da1[h];
            double* row = &g_w1.data[h * ni];
            for (std::size_t t = 0; t < ni; ++t) row[t] += d * x[t];
        }
    }
    return {ce_sum / static_cast<double>(B), std::move(g)};
}

}  // namespace fedleak
