#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedleak/rng.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak {

/// One-hidden-layer softmax classifier with tanh activation and analytic
/// backprop. Stands in for an arbitrary target model; the attack never
/// reads its gradients, so nothing larger is needed.
struct TargetModel {
    Tensor w1;  // hidden × input
    Tensor b1;  // hidden
    Tensor w2;  // classes × hidden
    Tensor b2;  // classes

    std::size_t input_size() const { return w1.shape[1]; }
    std::size_t hidden_size() const { return w1.shape[0]; }
    std::size_t num_classes() const { return w2.shape[0]; }
};

/// Xavier-style init. The first layer is row-centered (each hidden unit's
/// incoming weights sum to zero), which makes the classifier exactly
/// invariant to uniform shifts of its input, so the broadcast injections
/// of the inference structure cannot disturb the target task.
inline TargetModel init_target_model(SeededRng& rng, std::size_t input, std::size_t hidden,
                                     std::size_t classes, bool center_rows = true) {
    if (input < 2 || hidden < 1 || classes < 2)
        throw std::invalid_argument("init_target_model: degenerate sizes");
    TargetModel m;
    m.w1 = Tensor({hidden, input});
    m.b1 = Tensor({hidden});
    m.w2 = Tensor({classes, hidden});
    m.b2 = Tensor({classes});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(input));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& v : m.w1.data) v = rng.gaussian(0.0, s1);
    if (center_rows) {
        for (std::size_t r = 0; r < hidden; ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < input; ++c) mean += m.w1.at2(r, c);
            mean /= static_cast<double>(input);
            for (std::size_t c = 0; c < input; ++c) m.w1.at2(r, c) -= mean;
        }
    }
    for (double& v : m.w2.data) v = rng.gaussian(0.0, s2);
    return m;
}

struct TargetForward {
    std::vector<double> hidden;  // tanh activations
    std::vector<double> probs;   // softmax output, sums to 1
    double loss = 0.0;           // cross-entropy for the given label
};

inline TargetForward target_forward(const TargetModel& m, std::span<const double> z, int label) {
    const std::size_t nh = m.hidden_size(), nc = m.num_classes(), ni = m.input_size();
    if (z.size() != ni) throw std::invalid_argument("target_forward: input size mismatch");
    TargetForward f;
    f.hidden.resize(nh);
    for (std::size_t r = 0; r < nh; ++r) {
        double a = m.b1[r];
        const double* row = &m.w1.data[r * ni];
        for (std::size_t c = 0; c < ni; ++c) a += row[c] * z[c];
        f.hidden[r] = std::tanh(a);
    }
    std::vector<double> logits(nc);
    for (std::size_t k = 0; k < nc; ++k) {
        double a = m.b2[k];
        const double* row = &m.w2.data[k * nh];
        for (std::size_t r = 0; r < nh; ++r) a += row[r] * f.hidden[r];
        logits[k] = a;
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    f.probs.resize(nc);
    for (std::size_t k = 0; k < nc; ++k) {
        f.probs[k] = std::exp(logits[k] - mx);
        denom += f.probs[k];
    }
    for (double& p : f.probs) p /= denom;
    if (label >= 0) {
        if (static_cast<std::size_t>(label) >= nc)
            throw std::invalid_argument("target_forward: label out of range");
        f.loss = -std::log(std::max(f.probs[static_cast<std::size_t>(label)], 1e-300));
    }
    return f;
}

inline int target_predict(const TargetModel& m, std::span<const double> z) {
    TargetForward f = target_forward(m, z, -1);
    int best = 0;
    for (std::size_t k = 1; k < f.probs.size(); ++k)
        if (f.probs[k] > f.probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    return best;
}

}  // namespace fedleak
