#include <catch2/catch.hpp>

#include <cmath>
#include <set>

#include "fedleak/forward_backward.hpp"
#include "fedleak/serialize.hpp"
#include "fedleak/synthetic.hpp"
#include "support/reference_model.hpp"

using namespace fedleak;
using fedleak::testing::ReferenceModel;
using fedleak::testing::fd_gradient;

namespace {

StructureConfig small_cfg(std::size_t B = 4, std::size_t K = 16) {
    StructureConfig sc;
    sc.batch = B;
    sc.channels = 3;
    sc.height = 8;
    sc.width = 8;
    sc.units = K;
    sc.bias_copies = 5;
    sc.metric_units = 8;
    return sc;
}

ImageBatch masked_batch(std::uint64_t seed, const StructureConfig& sc) {
    SeededRng rng(seed);
    const ImageBatch raw = gen_synthetic_batch(rng, sc.batch, sc.channels, sc.height, sc.width);
    return extract_subject(raw, MaskProvider{});
}

}  // namespace

TEST_CASE("built structures have decreasing effective biases and equal rows", "[model]") {
    StructureConfig sc = small_cfg();
    sc.units = 4;
    sc.laplace = {0.0, 3e-3};
    const InferenceStructure s = build_structure(sc);
    // Bias of unit k is -Q(k/K), with the last unit clamped to K/(K+1).
    CHECK(s.bias_column[0] == Approx(-laplace_quantile(0.25, sc.laplace)));
    CHECK(s.bias_column[1] == Approx(-laplace_quantile(0.50, sc.laplace)));
    CHECK(s.bias_column[2] == Approx(-laplace_quantile(0.75, sc.laplace)));
    CHECK(s.bias_column[3] == Approx(-laplace_quantile(4.0 / 5.0, sc.laplace)));
    for (std::size_t k = 1; k < 4; ++k)
        CHECK(s.effective_bias(k) > s.effective_bias(k + 1));

    const Tensor w = s.weight_layer_matrix();
    for (double v : w.data) CHECK(v == sc.weight_value);
}

TEST_CASE("bias layer matrix is D_b by K with constant columns", "[model]") {
    StructureConfig sc = small_cfg();
    sc.units = 1024;
    sc.bias_copies = 500;
    const InferenceStructure s = build_structure(sc);
    const Tensor b = s.bias_layer_matrix();
    REQUIRE(b.shape == std::vector<std::size_t>{500, 1024});
    for (std::size_t k = 0; k < 1024; k += 97)
        for (std::size_t j = 1; j < 500; j += 61)
            CHECK(b.at2(j, k) == b.at2(0, k));
}

TEST_CASE("structure construction rejects bad inputs", "[model]") {
    StructureConfig sc = small_cfg();
    sc.units = 1;
    CHECK_THROWS_AS(build_structure(sc), std::invalid_argument);
    sc = small_cfg();
    sc.laplace.s = 0.0;
    CHECK_THROWS_AS(build_structure(sc), std::invalid_argument);
    sc = small_cfg();
    sc.bias_copies = 0;
    CHECK_THROWS_AS(build_structure(sc), std::invalid_argument);
}

TEST_CASE("reverse index scan follows the activation signs", "[model]") {
    const InferenceStructure s = build_structure(small_cfg());
    // Linear-scan oracle across a range of pixel sums.
    for (double sum = 0.0; sum < 200.0; sum += 3.7) {
        std::size_t linear = 0;
        for (std::size_t k = 1; k <= s.cfg.units; ++k)
            if (s.activation(k, sum) > 0.0) linear = k;
        const ReverseIndex r = reverse_index_of_sum(s, sum);
        if (linear == 0) {
            CHECK(r.unit == 1);
            CHECK(r.degenerate);
        } else {
            CHECK(r.unit == linear);
            CHECK_FALSE(r.degenerate);
            CHECK(s.activation(r.unit, sum) > 0.0);
            if (r.unit < s.cfg.units) CHECK(s.activation(r.unit + 1, sum) <= 0.0);
        }
    }
}

TEST_CASE("reverse index boundary conventions", "[model]") {
    // All activations positive saturates to K.
    StructureConfig hot = small_cfg();
    hot.weight_value = 1.0;
    const InferenceStructure s_hot = build_structure(hot);
    const ReverseIndex top = reverse_index_of_sum(s_hot, 1e9);
    CHECK(top.unit == s_hot.cfg.units);
    CHECK_FALSE(top.degenerate);

    // A positive location shifts every quantile up; tiny sums then leave
    // no positive activation and the scan flags unit 1.
    StructureConfig cold = small_cfg();
    cold.laplace = {1.0, 1e-3};
    const InferenceStructure s_cold = build_structure(cold);
    const ReverseIndex bottom = reverse_index_of_sum(s_cold, 1e-6);
    CHECK(bottom.unit == 1);
    CHECK(bottom.degenerate);
}

TEST_CASE("single-sample gradients reconstruct the masked sample exactly", "[model]") {
    StructureConfig sc = small_cfg(1, 32);
    const InferenceStructure s = build_structure(sc);
    const ImageBatch batch = masked_batch(41, sc);
    SeededRng trng(5);
    TargetModel t = init_target_model(trng, batch.pixels_per_sample(), 16, 4);
    const ForwardBackwardResult fb = forward_backward(s, t, batch);

    const std::size_t unit = fb.reverse[0].unit - 1;
    const Tensor& wl = fb.grads.at(kWeightLayer);
    const Tensor& bl = fb.grads.at(kBiasLayer);
    double col_mean = 0.0;
    for (std::size_t j = 0; j < sc.bias_copies; ++j) col_mean += bl.at2(j, unit);
    col_mean /= double(sc.bias_copies);
    REQUIRE(col_mean != 0.0);
    const std::size_t ni = batch.pixels_per_sample();
    for (std::size_t t2 = 0; t2 < ni; ++t2)
        CHECK(wl.at2(unit, t2) / col_mean == Approx(batch.images.data[t2]).margin(1e-10));
}

TEST_CASE("weight gradients live only in reverse-unit rows", "[model]") {
    StructureConfig sc = small_cfg(8, 64);
    const InferenceStructure s = build_structure(sc);
    SeededRng trng(6);
    TargetModel t = init_target_model(trng, sc.channels * sc.height * sc.width, 16, 4);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const ImageBatch batch = masked_batch(seed, sc);
        const ForwardBackwardResult fb = forward_backward(s, t, batch);
        std::set<std::size_t> live;
        for (const ReverseIndex& r : fb.reverse) live.insert(r.unit - 1);
        const Tensor& wl = fb.grads.at(kWeightLayer);
        std::size_t nonzero_rows = 0;
        for (std::size_t k = 0; k < sc.units; ++k) {
            bool any = false;
            for (std::size_t t2 = 0; t2 < wl.shape[1]; ++t2)
                if (wl.at2(k, t2) != 0.0) any = true;
            if (any) {
                ++nonzero_rows;
                CHECK(live.count(k) == 1);
            }
        }
        CHECK(nonzero_rows <= batch.batch());
        CHECK(nonzero_rows == live.size());
    }
}

TEST_CASE("second-half weight columns and bias copies behave exactly", "[model]") {
    StructureConfig sc = small_cfg(6, 32);
    const InferenceStructure s = build_structure(sc);
    const ImageBatch batch = masked_batch(77, sc);
    SeededRng trng(8);
    TargetModel t = init_target_model(trng, batch.pixels_per_sample(), 16, 4);
    const ForwardBackwardResult fb = forward_backward(s, t, batch);

    const Tensor& wl = fb.grads.at(kWeightLayer);
    const std::size_t ni = batch.pixels_per_sample();
    for (std::size_t k = 0; k < sc.units; ++k)
        for (std::size_t t2 = ni; t2 < 2 * ni; ++t2) CHECK(wl.at2(k, t2) == 0.0);

    const Tensor& bl = fb.grads.at(kBiasLayer);
    for (std::size_t k = 0; k < sc.units; ++k) {
        double lo = bl.at2(0, k), hi = bl.at2(0, k);
        for (std::size_t j = 1; j < sc.bias_copies; ++j) {
            lo = std::min(lo, bl.at2(j, k));
            hi = std::max(hi, bl.at2(j, k));
        }
        CHECK(hi - lo == 0.0);
    }
}

TEST_CASE("doubling the units reassigns rows without changing the weight gradient norm",
          "[model]") {
    StructureConfig sc = small_cfg(8, 64);
    SeededRng trng(9);
    TargetModel t = init_target_model(trng, sc.channels * sc.height * sc.width, 16, 4);
    std::size_t compared = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const ImageBatch batch = masked_batch(seed * 13, sc);
        StructureConfig doubled = sc;
        doubled.units = sc.units * 2;
        const ForwardBackwardResult a = forward_backward(build_structure(sc), t, batch);
        const ForwardBackwardResult b = forward_backward(build_structure(doubled), t, batch);
        std::set<std::size_t> units_a, units_b;
        for (const auto& r : a.reverse) units_a.insert(r.unit);
        for (const auto& r : b.reverse) units_b.insert(r.unit);
        if (units_a.size() != batch.batch() || units_b.size() != batch.batch()) continue;
        ++compared;
        const double na = l2_norm(a.grads.at(kWeightLayer));
        const double nb = l2_norm(b.grads.at(kWeightLayer));
        CHECK(std::abs(na - nb) <= 1e-9);
        // Doubling splits each reverse interval: the unit maps to 2k or 2k+1.
        for (std::size_t i = 0; i < batch.batch(); ++i) {
            const std::size_t k = a.reverse[i].unit, k2 = b.reverse[i].unit;
            CHECK((k2 == 2 * k || k2 == 2 * k + 1));
        }
    }
    CHECK(compared >= 20);
}

TEST_CASE("collision probability does not grow when units double", "[model]") {
    StructureConfig sc = small_cfg(8, 64);
    SeededRng trng(10);
    TargetModel t = init_target_model(trng, sc.channels * sc.height * sc.width, 16, 4);
    double previous_rate = 1.0;
    for (std::size_t K : {std::size_t(64), std::size_t(128), std::size_t(256), std::size_t(512)}) {
        StructureConfig cur = sc;
        cur.units = K;
        const InferenceStructure s = build_structure(cur);
        std::size_t collided = 0, trials = 400;
        for (std::uint64_t seed = 0; seed < trials; ++seed) {
            const ImageBatch batch = masked_batch(seed * 31 + 5, cur);
            std::set<std::size_t> units;
            for (std::size_t b = 0; b < batch.batch(); ++b) {
                double sum = 0;
                const std::size_t ni = batch.pixels_per_sample();
                for (std::size_t i = 0; i < ni; ++i) sum += batch.images.data[b * ni + i];
                units.insert(reverse_index_of_sum(s, sum).unit);
            }
            if (units.size() != batch.batch()) ++collided;
        }
        const double rate = double(collided) / double(trials);
        CHECK(rate <= previous_rate + 1e-12);
        previous_rate = rate;
    }
}

TEST_CASE("zero structure coefficient reduces to the bare target model", "[model]") {
    StructureConfig sc = small_cfg(4, 16);
    sc.tau = 0.0;
    const InferenceStructure s = build_structure(sc);
    const ImageBatch batch = masked_batch(55, sc);
    SeededRng trng(11);
    TargetModel t = init_target_model(trng, batch.pixels_per_sample(), 16, 4);
    const ForwardBackwardResult fb = forward_backward(s, t, batch);
    const auto [bare_loss, bare] = bare_forward_backward(t, batch);

    CHECK(fb.loss == Approx(bare_loss).margin(1e-12));
    for (const char* name : kTargetLayers) {
        const Tensor& a = fb.grads.at(name);
        const Tensor& b = bare.at(name);
        REQUIRE(a.same_shape(b));
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-12);
    }
    // And the inference layers carry no gradient at all.
    for (const char* name : {kConvLayer, kWeightLayer, kBiasLayer, kMetricWeight, kMetricBias})
        for (double v : fb.grads.at(name).data) CHECK(v == 0.0);
}

TEST_CASE("metric matrix layout and values", "[model]") {
    // Constant half-grey single-channel sample.
    ImageBatch flat;
    flat.images = Tensor({1, 1, 8, 8}, 0.5);
    flat.labels = {0};
    std::vector<ReverseIndex> rev{{7, false}};
    const MetricMatrix m = metric_matrix(flat, rev, 16);
    CHECK(m.metric(0, 0, 0) == 0.5);
    CHECK(m.metric(0, 0, 1) == 0.0);
    CHECK(m.metric(0, 0, 2) == 0.0);
    CHECK(m.index_entry(0) == Approx(7.0 / 16.0));

    // Sixteen 3-channel samples give 144 metric entries plus 16 indices.
    StructureConfig sc = small_cfg(16, 64);
    const ImageBatch batch = masked_batch(3, sc);
    std::vector<ReverseIndex> rev16(16, ReverseIndex{1, false});
    const MetricMatrix m16 = metric_matrix(batch, rev16, 64);
    CHECK(m16.metrics_count() == 144);
    CHECK(m16.values.size() == 160);

    // Entries equal the per-sample channel statistics.
    for (std::size_t b = 0; b < 16; ++b) {
        const auto stats = channel_stats(batch.sample(b));
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(m16.metric(b, c, 0) == stats[c].mean);
            CHECK(m16.metric(b, c, 1) == stats[c].variance);
            CHECK(m16.metric(b, c, 2) == stats[c].tv);
        }
    }
}

TEST_CASE("softmax output sums to one", "[model]") {
    SeededRng rng(12);
    TargetModel t = init_target_model(rng, 24, 8, 5);
    std::vector<double> z(24);
    for (double& v : z) v = rng.uniform01();
    const TargetForward f = target_forward(t, z, 3);
    double sum = 0;
    for (double p : f.probs) sum += p;
    CHECK(sum == Approx(1.0).margin(1e-12));
    CHECK(f.loss > 0.0);
}

TEST_CASE("analytic gradients match central finite differences", "[model]") {
    StructureConfig sc = small_cfg(4, 16);
    const InferenceStructure s = build_structure(sc);
    const ImageBatch batch = masked_batch(101, sc);
    SeededRng trng(13);
    TargetModel t = init_target_model(trng, batch.pixels_per_sample(), 12, 4);
    const ForwardBackwardResult fb = forward_backward(s, t, batch);
    ReferenceModel ref = ReferenceModel::from(s, t);
    REQUIRE(ref.loss(batch) == Approx(fb.loss).margin(1e-12));

    SeededRng pick(14);
    const double h = 1e-6;
    const auto check_layer = [&](const char* name, Tensor& param, std::size_t samples) {
        const Tensor& grad = fb.grads.at(name);
        REQUIRE(param.size() == grad.size());
        for (std::size_t n = 0; n < samples; ++n) {
            const std::size_t idx = pick.below(param.size());
            const double fd = fd_gradient(ref, param, idx, batch, h);
            const double an = grad.data[idx];
            // Relative agreement, or absolute agreement at the level of
            // central-difference roundoff for near-zero gradients.
            CHECK((std::abs(fd - an) <= 1e-5 * std::abs(an) || std::abs(fd - an) <= 1e-9));
        }
    };
    check_layer(kConvLayer, ref.conv, 12);
    check_layer(kWeightLayer, ref.wl, 40);
    check_layer(kBiasLayer, ref.bl, 30);
    check_layer(kMetricWeight, ref.mw, 40);
    check_layer(kMetricBias, ref.mb, 20);
    check_layer(kTargetLayers[0], ref.target.w1, 40);
    check_layer(kTargetLayers[1], ref.target.b1, 12);
    check_layer(kTargetLayers[2], ref.target.w2, 20);
    check_layer(kTargetLayers[3], ref.target.b2, 4);
}

TEST_CASE("parameter container round trip", "[model]") {
    StructureConfig sc = small_cfg();
    const InferenceStructure s = build_structure(sc);
    SeededRng rng(15);
    TargetModel t = init_target_model(rng, sc.channels * sc.height * sc.width, 8, 4);
    std::vector<std::pair<std::string, Tensor>> params;
    params.emplace_back("conv", s.conv_weights());
    params.emplace_back("weight_layer", s.weight_layer_matrix());
    params.emplace_back("bias_layer", s.bias_layer_matrix());
    params.emplace_back("target_w1", t.w1);
    const std::string bytes = save_tensors(params);
    const auto back = load_tensors(bytes);
    REQUIRE(back.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(back[i].first == params[i].first);
        CHECK(back[i].second == params[i].second);
    }
    CHECK_THROWS(load_tensors(bytes.substr(0, bytes.size() / 2)));
    CHECK_THROWS(load_tensors("not a container"));
}

TEST_CASE("gradient bundles persist for offline replay", "[model]") {
    StructureConfig sc = small_cfg(2, 16);
    const InferenceStructure s = build_structure(sc);
    const ImageBatch batch = masked_batch(3, sc);
    SeededRng trng(16);
    TargetModel t = init_target_model(trng, batch.pixels_per_sample(), 8, 4);
    ForwardBackwardResult fb = forward_backward(s, t, batch);
    std::vector<std::pair<std::string, Tensor>> layers(fb.grads.layers().begin(),
                                                       fb.grads.layers().end());
    const auto back = load_tensors(save_tensors(layers));
    REQUIRE(back.size() == layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) CHECK(back[i].second == layers[i].second);
}
