#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>

#include "fedleak/forward_backward.hpp"
#include "fedleak/ldp.hpp"
#include "fedleak/synthetic.hpp"

using namespace fedleak;

namespace {

GradientBundle toy_bundle(std::initializer_list<double> a, std::initializer_list<double> b) {
    GradientBundle g;
    Tensor& ta = g.add("a", {a.size()});
    std::copy(a.begin(), a.end(), ta.data.begin());
    Tensor& tb = g.add("b", {b.size()});
    std::copy(b.begin(), b.end(), tb.data.begin());
    return g;
}

double loop_norm(const GradientBundle& g) {
    double sq = 0;
    for (const auto& [name, t] : g.layers())
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = t.data[i] * g.scale();
            sq += v * v;
        }
    return std::sqrt(sq);
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("noise scale formula", "[ldp]") {
    CHECK(noise_sigma(1, 10, 1000, 10) == Approx(0.002).epsilon(1e-15));
    CHECK(noise_sigma(1, 10, 1000, 5) == Approx(0.004).epsilon(1e-15));
    CHECK(noise_sigma(1, 5, 1000, 10) == Approx(0.001).epsilon(1e-15));
    CHECK_THROWS_AS(noise_sigma(0, 10, 1000, 10), std::domain_error);
    CHECK_THROWS_AS(noise_sigma(1, -1, 1000, 10), std::domain_error);
    CHECK_THROWS_AS(noise_sigma(1, 10, 1000, 0), std::domain_error);

    const LdpConfig cfg = LdpConfig::make(10, 0.01, 10, 1, 1000);
    CHECK(cfg.sigma == Approx(0.002));
    CHECK(cfg.delta == 0.01);  // stored, never used to derive sigma
}

TEST_CASE("clip divides every value by the norm excess", "[ldp]") {
    // Norm 20 against bound 10 halves everything.
    GradientBundle g = toy_bundle({12.0, 16.0}, {0.0});
    auto [clipped, delta] = clip(std::move(g), 10.0);
    CHECK(delta == 2.0);
    const auto a = clipped.values("a");
    CHECK(a[0] == 6.0);
    CHECK(a[1] == 8.0);
    CHECK(clipped.values("b")[0] == 0.0);

    // Norm below the bound is untouched.
    GradientBundle h = toy_bundle({3.0, 4.0}, {0.0});
    auto [same, delta2] = clip(std::move(h), 10.0);
    CHECK(delta2 == 1.0);
    CHECK(same.values("a")[0] == 3.0);
}

TEST_CASE("clipped norm equals min(norm, bound) on random bundles", "[ldp]") {
    SeededRng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        GradientBundle g;
        Tensor& t = g.add("x", {257});
        for (double& v : t.data) v = rng.uniform(-3.0, 3.0);
        const double before = loop_norm(g);
        const double bound = trial % 2 ? 0.5 : 50.0;
        auto [clipped, delta] = clip(std::move(g), bound);
        CHECK(delta == std::max(1.0, before / bound));
        CHECK(loop_norm(clipped) == Approx(std::min(before, bound)).margin(1e-9));
    }
}

TEST_CASE("clip preserves entry ratios exactly", "[ldp]") {
    SeededRng rng(78);
    GradientBundle g = toy_bundle({0.0}, {0.0});
    Tensor& t = g.at("a");
    t = Tensor({64});
    for (double& v : t.data) v = rng.uniform(-2.0, 2.0);
    const ProtectedGradients before(g);
    std::vector<double> ratios_before;
    for (std::size_t i = 0; i + 1 < 64; ++i) ratios_before.push_back(before.ratio("a", i, "a", i + 1));

    auto [clipped, delta] = clip(std::move(g), 0.01);
    REQUIRE(delta > 1.0);
    const ProtectedGradients after(clipped);
    for (std::size_t i = 0; i + 1 < 64; ++i)
        CHECK(after.ratio("a", i, "a", i + 1) == ratios_before[i]);  // bitwise
}

TEST_CASE("perturbation adds calibrated independent noise", "[ldp]") {
    // Sigma zero is the identity.
    GradientBundle g = toy_bundle({1.0, 2.0, 3.0}, {0.5});
    SeededRng rng(5);
    GradientBundle same = perturb(std::move(g), 0.0, rng);
    CHECK(same.values("a") == std::vector<double>{1.0, 2.0, 3.0});

    // Noise on a million zeros has the configured spread.
    GradientBundle zeros;
    zeros.add("z", {1000000});
    SeededRng rng2(6);
    GradientBundle noisy = perturb(std::move(zeros), 0.002, rng2);
    double sq = 0;
    const auto vals = noisy.values("z");
    for (double v : vals) sq += v * v;
    const double stddev = std::sqrt(sq / double(vals.size()));
    CHECK(stddev > 0.00198);
    CHECK(stddev < 0.00202);

    // Same seed, same noise.
    GradientBundle c1 = toy_bundle({0.0, 0.0}, {0.0});
    GradientBundle c2 = toy_bundle({0.0, 0.0}, {0.0});
    SeededRng ra(9), rb(9);
    const GradientBundle p1 = perturb(std::move(c1), 0.1, ra);
    const GradientBundle p2 = perturb(std::move(c2), 0.1, rb);
    CHECK(p1.values("a") == p2.values("a"));
    CHECK(p1.values("b") == p2.values("b"));
}

TEST_CASE("full protection composes clip and perturb", "[ldp]") {
    // Small norm and zero sigma: identity.
    GradientBundle g = toy_bundle({0.3, 0.4}, {0.0});
    LdpConfig cfg = LdpConfig::make(10, 0.01, 10, 1, 1000);
    cfg.sigma = 0.0;
    SeededRng rng(3);
    const GradientBundle out = protect(std::move(g), cfg, rng);
    CHECK(out.values("a") == std::vector<double>{0.3, 0.4});
    CHECK(out.clip_delta == 1.0);

    // Entries that were exactly zero come back as pure noise.
    GradientBundle h = toy_bundle({100.0}, {0.0, 0.0, 0.0, 0.0});
    const LdpConfig cfg2 = LdpConfig::make(10, 0.01, 10, 1, 1000);
    SeededRng rng2(4);
    const GradientBundle out2 = protect(std::move(h), cfg2, rng2);
    CHECK(out2.clip_delta == 10.0);
    for (double v : out2.values("b")) {
        CHECK(v != 0.0);
        CHECK(std::abs(v) < 0.02);  // a few sigma
    }
    CHECK(out2.true_sigma == Approx(0.002));
}

TEST_CASE("noise on pinned-zero gradient positions passes a KS check", "[ldp]") {
    // Protect a bundle holding 1e5 structural zeros plus one huge entry
    // that forces clipping; the zero positions must come back N(0, sigma^2).
    const std::size_t n = 100000;
    GradientBundle g;
    g.add("big", {1}).data[0] = 1000.0;
    g.add("zeros", {n});
    const LdpConfig cfg = LdpConfig::make(10, 0.01, 10, 1, 1000);
    SeededRng rng(123);
    const GradientBundle out = protect(std::move(g), cfg, rng);
    REQUIRE(out.clip_delta > 1.0);

    std::vector<double> vals = out.values("zeros");
    std::sort(vals.begin(), vals.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = std_normal_cdf(vals[i] / cfg.sigma);
        ks = std::max(ks, std::abs(f - double(i + 1) / double(n)));
        ks = std::max(ks, std::abs(f - double(i) / double(n)));
    }
    // 1% critical value for the one-sample KS statistic.
    CHECK(ks < 1.628 / std::sqrt(double(n)));
}

TEST_CASE("protection on model gradients keeps sigma bookkeeping private", "[ldp]") {
    StructureConfig sc;
    sc.batch = 2;
    sc.channels = 1;
    sc.height = 8;
    sc.width = 8;
    sc.units = 16;
    sc.bias_copies = 4;
    sc.metric_units = 8;
    const InferenceStructure s = build_structure(sc);
    SeededRng rng(10);
    const ImageBatch raw = gen_synthetic_batch(rng, 2, 1, 8, 8);
    const ImageBatch masked = extract_subject(raw, MaskProvider{});
    SeededRng trng(11);
    TargetModel t = init_target_model(trng, 64, 8, 4);
    ForwardBackwardResult fb = forward_backward(s, t, masked);
    SeededRng nrng(12);
    const GradientBundle out = protect(std::move(fb.grads), LdpConfig::make(10, 0.01, 10, 1, 1000), nrng);
    CHECK(out.true_sigma == Approx(0.002));
    CHECK(out.clip_delta >= 1.0);
    // The attacker-facing view only reaches values and shapes.
    const ProtectedGradients view(out);
    CHECK(view.shape(kWeightLayer)[0] == 16);
    CHECK(view.values(kMetricBias).size() == out.at(kMetricBias).size());
}
