#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedleak/attack.hpp"
#include "fedleak/forward_backward.hpp"
#include "fedleak/image.hpp"
#include "fedleak/ldp.hpp"
#include "fedleak/synthetic.hpp"

namespace fedleak {

struct UserState {
    int id = 0;
    ImageBatch pool;     // local dataset; batches are drawn from here
    LdpConfig ldp;
    bool victim = false;
    double tau = 1e-8;   // inference-structure coefficient for this user
};

/// The global model the server distributes: the target classifier plus,
/// when the attack is staged, the inference structure in front of it.
struct GlobalModel {
    std::optional<InferenceStructure> structure;
    TargetModel target;
};

struct RoundReport {
    std::size_t round = 0;
    // Aggregated target-model gradient (mean over non-victim users), layer
    // by layer in canonical order.
    std::vector<std::pair<std::string, std::vector<double>>> aggregate;
    std::optional<GradientBundle> victim_bundle;
    std::optional<ImageBatch> victim_masked;  // server-side ground truth for scoring
    std::vector<double> user_norms;   // pre-clip gradient norms, victim-side info
    std::vector<double> user_losses;
};

/// Draw a batch of `batch` samples from the user's pool without
/// replacement (within this call; separate calls may repeat samples).
inline ImageBatch sample_batch(const UserState& user, std::size_t batch, SeededRng& rng) {
    const std::size_t pool = user.pool.batch();
    if (batch > pool) throw std::invalid_argument("sample_batch: batch exceeds the local pool");
    std::vector<std::size_t> order(pool);
    for (std::size_t i = 0; i < pool; ++i) order[i] = i;
    for (std::size_t i = pool; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const std::size_t C = user.pool.channels(), H = user.pool.height(), W = user.pool.width();
    ImageBatch out;
    out.images = Tensor({batch, C, H, W});
    out.masks = Tensor({batch, 1, H, W});
    out.labels.resize(batch);
    const std::size_t per = C * H * W, mper = H * W;
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t src = order[i];
        std::copy(user.pool.images.data.begin() + src * per,
                  user.pool.images.data.begin() + (src + 1) * per,
                  out.images.data.begin() + i * per);
        std::copy(user.pool.masks->data.begin() + src * mper,
                  user.pool.masks->data.begin() + (src + 1) * mper,
                  out.masks->data.begin() + i * mper);
        out.labels[i] = user.pool.labels[src];
    }
    return out;
}

/// One FedSGD round. Every user trains the distributed global model on a
/// local batch and protects the gradients with clip-then-perturb LDP; the
/// server averages the non-victim target-model gradients and keeps the
/// victim's bundle aside. Per-user streams derive from (master seed,
/// round, user id), so a user's contribution is independent of everyone
/// else's data.
inline RoundReport run_round(std::vector<UserState>& users, const GlobalModel& global,
                             std::size_t batch, std::size_t round, SeededRng& master,
                             int victim_id = -1) {
    std::size_t non_targets = 0;
    for (const UserState& u : users)
        if (u.id != victim_id) ++non_targets;
    if (non_targets == 0) throw std::runtime_error("run_round: no non-target users to aggregate");

    RoundReport report;
    report.round = round;
    for (const char* name : kTargetLayers) report.aggregate.emplace_back(name, std::vector<double>());

    for (UserState& user : users) {
        SeededRng user_rng = master.derive(round, static_cast<std::uint64_t>(user.id));
        SeededRng data_rng = user_rng.derive(SeededRng::hash_tag("batch"));
        SeededRng noise_rng = user_rng.derive(SeededRng::hash_tag("noise"));

        ImageBatch batch_raw = sample_batch(user, batch, data_rng);
        GradientBundle grads;
        double loss = 0.0;
        std::optional<ImageBatch> masked;
        if (global.structure) {
            MaskProvider oracle;  // ground-truth masks from the generator
            masked = extract_subject(batch_raw, oracle);
            ForwardBackwardResult fb =
                forward_backward(*global.structure, global.target, batch_raw, *masked, user.tau);
            grads = std::move(fb.grads);
            loss = fb.loss;
        } else {
            auto [bare_loss, bare_grads] = bare_forward_backward(global.target, batch_raw);
            grads = std::move(bare_grads);
            loss = bare_loss;
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("run_round: non-finite loss for user " +
                                     std::to_string(user.id) + " at round " + std::to_string(round));
        report.user_losses.push_back(loss);
        report.user_norms.push_back(grads.value_norm());

        GradientBundle uploaded = protect(std::move(grads), user.ldp, noise_rng);

        if (user.id == victim_id) {
            report.victim_bundle = std::move(uploaded);
            report.victim_masked = std::move(masked);
            continue;
        }
        for (auto& [name, acc] : report.aggregate) {
            const std::vector<double> vals = uploaded.values(name);
            if (acc.empty()) acc.assign(vals.size(), 0.0);
            for (std::size_t i = 0; i < vals.size(); ++i) acc[i] += vals[i];
        }
    }
    for (auto& [name, acc] : report.aggregate)
        for (double& v : acc) v /= static_cast<double>(non_targets);
    return report;
}

inline void apply_update(TargetModel& target, const RoundReport& report, double lr) {
    Tensor* params[] = {&target.w1, &target.b1, &target.w2, &target.b2};
    for (std::size_t l = 0; l < 4; ++l) {
        const std::vector<double>& g = report.aggregate[l].second;
        if (g.size() != params[l]->size()) throw std::runtime_error("apply_update: layout mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) params[l]->data[i] -= lr * g[i];
    }
}

inline double evaluate_accuracy(const TargetModel& target, const ImageBatch& test) {
    std::size_t hits = 0;
    const std::size_t ni = test.pixels_per_sample();
    for (std::size_t b = 0; b < test.batch(); ++b) {
        const double* x = &test.images.data[b * ni];
        if (target_predict(target, std::span<const double>(x, ni)) == test.labels[b]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test.batch());
}

/// FedSGD training loop. With `rotate_victims` set (and a structure
/// present), round r targets user r mod n: that victim receives the
/// full-strength structure coefficient for the round and its gradients
/// are excluded from aggregation. Returns the per-round test accuracy of
/// the target model, evaluated after each update. Aborts on divergence.
inline std::vector<double> train(std::vector<UserState>& users, GlobalModel& global,
                                 std::size_t rounds, double lr, std::size_t batch,
                                 const ImageBatch& test, SeededRng& master,
                                 bool rotate_victims = false, double victim_tau = 1.0) {
    std::vector<double> accuracy;
    for (std::size_t r = 0; r < rounds; ++r) {
        int victim = -1;
        double saved_tau = 0.0;
        UserState* victim_user = nullptr;
        if (rotate_victims && global.structure) {
            victim_user = &users[r % users.size()];
            victim = victim_user->id;
            saved_tau = victim_user->tau;
            victim_user->tau = victim_tau;
        }
        RoundReport report = run_round(users, global, batch, r, master, victim);
        if (victim_user) victim_user->tau = saved_tau;
        for (const auto& [name, g] : report.aggregate)
            for (double v : g)
                if (!std::isfinite(v))
                    throw std::runtime_error("train: aggregate diverged (non-finite gradient) in " +
                                             name + " at round " + std::to_string(r));
        apply_update(global.target, report, lr);
        accuracy.push_back(evaluate_accuracy(global.target, test));
    }
    return accuracy;
}

/// One attacked round: run the FL round with the given victim, then run
/// the reconstruction pipeline on the victim's uploaded bundle and score
/// it against the victim's own masked batch.
inline std::pair<RoundReport, AttackResult> attack_round(std::vector<UserState>& users,
                                                         const GlobalModel& global,
                                                         std::size_t batch, std::size_t round,
                                                         SeededRng& master, int victim_id,
                                                         const AttackOptions& opt = {},
                                                         double victim_tau = 1.0) {
    if (!global.structure)
        throw std::invalid_argument("attack_round: the global model carries no inference structure");
    UserState* victim_user = nullptr;
    for (UserState& u : users)
        if (u.id == victim_id) victim_user = &u;
    if (!victim_user)
        throw std::invalid_argument("attack_round: no user with id " + std::to_string(victim_id));

    const double saved_tau = victim_user->tau;
    victim_user->tau = victim_tau;  // the victim receives the full-strength structure
    RoundReport report = run_round(users, global, batch, round, master, victim_id);
    victim_user->tau = saved_tau;
    ProtectedGradients view(*report.victim_bundle);
    AttackResult result = run_attack(view, *global.structure, opt);
    result.quality = score_images(result.final_images, report.victim_masked->images);
    return {std::move(report), std::move(result)};
}

}  // namespace fedleak
