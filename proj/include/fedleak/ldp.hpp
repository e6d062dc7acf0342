#pragma once

#include <stdexcept>

#include "fedleak/gradients.hpp"
#include "fedleak/rng.hpp"

namespace fedleak {

/// Victim-side privacy parameters. sigma is derived, never set directly.
struct LdpConfig {
    double epsilon = 10.0;
    double delta = 0.01;    // part of the threat model; does not enter sigma
    double clip_bound = 10.0;
    double c_const = 1.0;
    double m_floor = 1000.0;  // minimal local dataset size
    double sigma = 0.002;

    static LdpConfig make(double epsilon, double delta, double clip_bound, double c_const,
                          double m_floor);
};

/// Gaussian noise scale 2cC / (m·ε).
inline double noise_sigma(double c_const, double clip_bound, double m_floor, double epsilon) {
    if (!(c_const > 0.0 && clip_bound > 0.0 && m_floor > 0.0 && epsilon > 0.0))
        throw std::domain_error("noise_sigma: all parameters must be positive");
    return 2.0 * c_const * clip_bound / (m_floor * epsilon);
}

inline LdpConfig LdpConfig::make(double epsilon, double delta, double clip_bound, double c_const,
                                 double m_floor) {
    LdpConfig cfg;
    cfg.epsilon = epsilon;
    cfg.delta = delta;
    cfg.clip_bound = clip_bound;
    cfg.c_const = c_const;
    cfg.m_floor = m_floor;
    cfg.sigma = noise_sigma(c_const, clip_bound, m_floor, epsilon);
    return cfg;
}

/// Clip the whole bundle to L2 bound C: Δ = max(1, ‖g‖/C), every value
/// divided by Δ. Implemented on the bundle's shared scale, so the ratio of
/// any two entries is preserved exactly. Returns the clipped bundle and Δ.
inline std::pair<GradientBundle, double> clip(GradientBundle bundle, double clip_bound) {
    if (!(clip_bound > 0.0)) throw std::domain_error("clip: bound must be positive");
    const double norm = bundle.value_norm();
    const double delta = std::max(1.0, norm / clip_bound);
    bundle.set_scale(bundle.scale() / delta);
    bundle.clip_delta = delta;
    return {std::move(bundle), delta};
}

/// Add i.i.d. N(0, sigma^2) noise to every gradient value. Noise streams
/// are keyed per layer name (one draw from `rng` seeds the family), so two
/// bundles sharing layer names receive identical noise on those layers
/// under the same rng state.
inline GradientBundle perturb(GradientBundle bundle, double sigma, SeededRng& rng) {
    if (!(sigma >= 0.0)) throw std::domain_error("perturb: sigma must be nonnegative");
    const std::uint64_t family = rng.next_u64();
    if (sigma == 0.0) return bundle;
    const double inv_scale = 1.0 / bundle.scale();
    for (auto& [name, t] : bundle.layers()) {
        SeededRng layer_rng = SeededRng(family).derive(SeededRng::hash_tag(name));
        for (double& v : t.data) v += layer_rng.gaussian(0.0, sigma) * inv_scale;
    }
    return bundle;
}

/// Full local protection: clip to the bound, then perturb with the
/// configured sigma. Clip factor and true sigma are recorded in the
/// bundle's victim-side bookkeeping only.
inline GradientBundle protect(GradientBundle bundle, const LdpConfig& cfg, SeededRng& rng) {
    auto [clipped, delta] = clip(std::move(bundle), cfg.clip_bound);
    GradientBundle out = perturb(std::move(clipped), cfg.sigma, rng);
    out.true_sigma = cfg.sigma;
    return out;
}

}  // namespace fedleak
