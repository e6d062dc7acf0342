#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedleak/attack.hpp"
#include "fedleak/config.hpp"
#include "fedleak/flsim.hpp"
#include "fedleak/ppm.hpp"
#include "fedleak/quality.hpp"
#include "fedleak/synthetic.hpp"

namespace fedleak {

namespace detail {

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string num(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

inline Tensor clamped01(Tensor t) {
    for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
    return t;
}

inline std::string sample_name(const char* stem, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%02zu.ppm", stem, i);
    return buf;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace detail

/// One full attack experiment in memory: victim batch, protected upload,
/// reconstruction, scores. The building block of every CLI command.
struct AttackExperiment {
    ImageBatch truth_raw;
    ImageBatch masked;
    AttackResult result;
    QualityReport quality;       // final images vs masked truth
    double weight_grad_norm = 0; // pre-clip weight-layer gradient norm
    double clip_delta = 1.0;
    double wall_seconds = 0.0;
};

inline AttackExperiment run_attack_experiment(const RunConfig& cfg, std::uint64_t seed,
                                              const AttackOptions* options = nullptr) {
    detail::Timer timer;
    SeededRng master(seed);

    SeededRng data_rng = master.derive(SeededRng::hash_tag("data"));
    ImageBatch raw = gen_synthetic_batch(data_rng, cfg.batch, cfg.channels, cfg.height, cfg.width);

    MaskProvider provider = cfg.mask_provider();
    if (provider.strategy == MaskStrategy::ExternalFile) {
        if (cfg.mask_file.empty()) throw ConfigError("config: external masks need mask_file=");
        Tensor masks({raw.batch(), 1, raw.height(), raw.width()});
        for (std::size_t b = 0; b < raw.batch(); ++b) {
            const Tensor m = read_mask_pgm([&] {
                std::ifstream f(cfg.mask_file + std::to_string(b) + ".pgm", std::ios::binary);
                if (!f) throw MaskingError("mask provider: no external mask for sample " +
                                           std::to_string(b));
                return std::string((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
            }());
            std::copy(m.data.begin(), m.data.end(), masks.data.begin() + b * m.size());
        }
        provider.external_masks = std::move(masks);
    }

    AttackExperiment ex;
    ex.masked = extract_subject(raw, provider);
    ex.truth_raw = std::move(raw);

    InferenceStructure structure = build_structure(cfg.structure_config());
    SeededRng model_rng = master.derive(SeededRng::hash_tag("target"));
    TargetModel target =
        init_target_model(model_rng, ex.masked.pixels_per_sample(), cfg.hidden_units, cfg.num_classes);

    ForwardBackwardResult fb = forward_backward(structure, target, ex.truth_raw, ex.masked);
    ex.weight_grad_norm = l2_norm(fb.grads.at(kWeightLayer));

    SeededRng noise_rng = master.derive(SeededRng::hash_tag("noise"));
    GradientBundle uploaded = protect(std::move(fb.grads), cfg.ldp_config(), noise_rng);
    ex.clip_delta = uploaded.clip_delta;

    AttackOptions opt;
    if (options) opt = *options;
    else {
        opt.z = cfg.z_score;
        opt.division_floor = cfg.division_floor;
        opt.min_negatives = cfg.min_negatives;
        opt.objective = cfg.objective_weights();
    }
    ProtectedGradients view(uploaded);
    ex.result = run_attack(view, structure, opt);
    ex.quality = score_images(ex.result.final_images, ex.masked.images);
    ex.result.quality = ex.quality;
    ex.wall_seconds = timer.seconds();
    return ex;
}

/// `attack` command: one experiment, images and CSV written under out_dir.
/// Every data output is byte-reproducible for a fixed config+seed; the
/// manifest carries wall-clock timings and is the one exception.
inline int cmd_attack(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    detail::Timer total;

    AttackExperiment ex = run_attack_experiment(cfg, cfg.seed);
    const std::string dir = cfg.out_dir + "/";
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        write_ppm_file(dir + detail::sample_name("ground_truth", b), slice_sample(ex.truth_raw.images, b));
        write_ppm_file(dir + detail::sample_name("masked", b), slice_sample(ex.masked.images, b));
        const std::size_t unit = ex.result.reverse_hat[b] - 1;
        write_ppm_file(dir + detail::sample_name("raw", b),
                       detail::clamped01(slice_sample(ex.result.raw_images, unit)));
        write_ppm_file(dir + detail::sample_name("optimized", b),
                       detail::clamped01(slice_sample(ex.result.optimized_images, b)));
        write_ppm_file(dir + detail::sample_name("final", b),
                       detail::clamped01(slice_sample(ex.result.final_images, b)));
    }

    // quality.csv: one row per sample, then the batch means.
    std::ostringstream csv;
    csv << "sample,reverse_unit,overlapped,degenerate,mse,psnr,ssim\n";
    for (std::size_t b = 0; b < cfg.batch; ++b)
        csv << b << "," << ex.result.reverse_hat[b] << "," << int(ex.result.overlapped[b]) << ","
            << int(ex.result.degenerate[b]) << "," << detail::num(ex.quality.sample_mse[b]) << ","
            << detail::num(ex.quality.sample_psnr[b]) << "," << detail::num(ex.quality.sample_ssim[b])
            << "\n";
    csv << "mean,,,," << detail::num(ex.quality.mean_mse) << "," << detail::num(ex.quality.mean_psnr)
        << "," << detail::num(ex.quality.mean_ssim) << "\n";
    detail::write_text(dir + "quality.csv", csv.str());

    std::ostringstream manifest;
    manifest << "# attack run manifest\n" << cfg.echo();
    manifest << "sigma_hat=" << detail::num(ex.result.sigma_hat) << "\n";
    manifest << "sigma_hat_from_variance=" << detail::num(ex.result.sigma_hat_from_variance) << "\n";
    manifest << "warnings=" << ex.result.warnings.size() << "\n";
    for (const std::string& w : ex.result.warnings) manifest << "# warning: " << w << "\n";
    manifest << "attack_seconds=" << detail::num(ex.wall_seconds) << "\n";
    manifest << "total_seconds=" << detail::num(total.seconds()) << "\n";
    detail::write_text(dir + "manifest.txt", manifest.str());
    return 0;
}

/// One sweep point: the attack at an axis value, reduced to CSV columns.
struct SweepRow {
    double value = 0;
    std::uint64_t seed = 0;
    double mse = 0, psnr = 0, ssim = 0, separation = 0, weight_norm = 0, seconds = 0;
};

inline RunConfig apply_axis(RunConfig cfg, const std::string& axis, double value) {
    if (axis == "epsilon") cfg.epsilon = value;
    else if (axis == "clip_bound") cfg.clip_bound = value;
    else if (axis == "batch") cfg.batch = static_cast<std::size_t>(value);
    else if (axis == "units") cfg.units = static_cast<std::size_t>(value);
    else if (axis == "rounds") cfg.opt_rounds = static_cast<std::size_t>(value);
    else throw ConfigError("config: unknown sweep_axis '" + axis + "'");
    return cfg;
}

/// `sweep` command: every (value, trial) point runs an independent
/// experiment with a seed derived from (master seed, point index, trial).
/// Points execute in a worker pool of `jobs` threads; rows are written in
/// deterministic order regardless of scheduling.
inline int cmd_sweep(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::vector<double> values = detail::parse_list(cfg.sweep_values);
    if (values.empty()) throw ConfigError("config: sweep_values is empty");

    struct Point {
        std::size_t index;
        double value;
        std::uint64_t trial;
    };
    std::vector<Point> points;
    for (std::size_t i = 0; i < values.size(); ++i)
        for (std::uint64_t t = 0; t < cfg.trials; ++t) points.push_back({i, values[i], t});

    std::vector<SweepRow> rows(points.size());
    SeededRng master(cfg.seed);
    std::mutex next_mutex;
    std::size_t next = 0;
    const std::size_t workers = std::max<std::size_t>(1, cfg.jobs);

    auto work = [&] {
        for (;;) {
            std::size_t mine;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (next >= points.size()) return;
                mine = next++;
            }
            const Point& p = points[mine];
            const RunConfig point_cfg = apply_axis(cfg, cfg.sweep_axis, p.value);
            const std::uint64_t point_seed = master.derive(p.index, p.trial).seed();
            AttackExperiment ex = run_attack_experiment(point_cfg, point_seed);
            SweepRow& row = rows[mine];
            row.value = p.value;
            row.seed = point_seed;
            row.mse = ex.quality.mean_mse;
            row.psnr = ex.quality.mean_psnr;
            row.ssim = ex.quality.mean_ssim;
            std::size_t separated = 0;
            for (bool o : ex.result.overlapped)
                if (!o) ++separated;
            row.separation = static_cast<double>(separated) /
                             static_cast<double>(ex.result.overlapped.size());
            row.weight_norm = ex.weight_grad_norm;
            row.seconds = ex.wall_seconds;
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    std::ostringstream csv;
    csv << cfg.sweep_axis << ",seed,mse,psnr,ssim,separation_ratio,weight_grad_norm,wall_seconds\n";
    for (const SweepRow& r : rows)
        csv << detail::num(r.value) << "," << r.seed << "," << detail::num(r.mse) << ","
            << detail::num(r.psnr) << "," << detail::num(r.ssim) << "," << detail::num(r.separation)
            << "," << detail::num(r.weight_norm) << "," << detail::num(r.seconds) << "\n";
    detail::write_text(cfg.out_dir + "/sweep.csv", csv.str());
    return 0;
}

/// Users with private pools; user 0..n-1, all non-targets until a round
/// designates a victim.
inline std::vector<UserState> make_users(const RunConfig& cfg, std::size_t count, SeededRng& master) {
    std::vector<UserState> users;
    users.reserve(count);
    for (std::size_t u = 0; u < count; ++u) {
        UserState user;
        user.id = static_cast<int>(u);
        SeededRng pool_rng = master.derive(SeededRng::hash_tag("pool"), u);
        user.pool = gen_synthetic_batch(pool_rng, cfg.fl_pool, cfg.channels, cfg.height, cfg.width);
        user.ldp = cfg.ldp_config();
        user.tau = cfg.tau_small;
        users.push_back(std::move(user));
    }
    return users;
}

/// `flsim` command: paired training runs (attack staged vs bare model,
/// identical seeds) producing the accuracy trace, then single-round paired
/// aggregates across user counts producing the gradient-difference
/// histogram.
inline int cmd_flsim(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    SeededRng master(cfg.seed);

    SeededRng test_rng = master.derive(SeededRng::hash_tag("test"));
    const ImageBatch test =
        gen_synthetic_batch(test_rng, cfg.fl_test_size, cfg.channels, cfg.height, cfg.width);

    // Paired accuracy runs: same users, same streams; one global model
    // carries the inference structure and rotates victims, one is bare.
    SeededRng model_rng = master.derive(SeededRng::hash_tag("target"));
    TargetModel init =
        init_target_model(model_rng, cfg.channels * cfg.height * cfg.width, cfg.hidden_units,
                          cfg.num_classes);
    GlobalModel attacked{build_structure(cfg.structure_config()), init};
    GlobalModel clean{std::nullopt, init};

    std::vector<UserState> users_a = make_users(cfg, cfg.fl_users, master);
    std::vector<UserState> users_c = users_a;
    SeededRng train_rng_a = master.derive(SeededRng::hash_tag("train"));
    SeededRng train_rng_c = master.derive(SeededRng::hash_tag("train"));
    const std::vector<double> acc_a =
        train(users_a, attacked, cfg.fl_rounds, cfg.fl_lr, cfg.batch, test, train_rng_a,
              /*rotate_victims=*/true, cfg.tau);
    const std::vector<double> acc_c =
        train(users_c, clean, cfg.fl_rounds, cfg.fl_lr, cfg.batch, test, train_rng_c);

    std::ostringstream acc_csv;
    acc_csv << "round,accuracy_attack,accuracy_clean,delta\n";
    for (std::size_t r = 0; r < acc_a.size(); ++r)
        acc_csv << r << "," << detail::num(acc_a[r]) << "," << detail::num(acc_c[r]) << ","
                << detail::num(acc_a[r] - acc_c[r]) << "\n";
    detail::write_text(cfg.out_dir + "/accuracy.csv", acc_csv.str());

    // Gradient-difference histogram across user counts, one round per seed.
    std::ostringstream hist_csv;
    hist_csv << "users,seed,bin_under_1e-6,bin_1e-6_to_1e-5,bin_1e-5_to_1e-4,bin_1e-4_to_1e-3,"
                "bin_1e-3_to_1e-2,bin_1e-2_up\n";
    std::stringstream counts_ss(cfg.fl_user_counts);
    std::string item;
    std::vector<std::size_t> counts;
    while (std::getline(counts_ss, item, ','))
        if (!item.empty()) counts.push_back(detail::parse_u64("fl_user_counts", item));
    for (std::size_t count : counts) {
        for (std::uint64_t trial = 0; trial < cfg.trials; ++trial) {
            SeededRng trial_master = master.derive(SeededRng::hash_tag("hist"), count * 1000 + trial);
            std::vector<UserState> ua = make_users(cfg, count, trial_master);
            std::vector<UserState> uc = ua;
            GlobalModel with{build_structure(cfg.structure_config()), init};
            GlobalModel without{std::nullopt, init};
            SeededRng round_rng_a = trial_master.derive(SeededRng::hash_tag("round"));
            SeededRng round_rng_c = trial_master.derive(SeededRng::hash_tag("round"));
            ua[0].tau = cfg.tau;  // round's victim
            RoundReport with_report = run_round(ua, with, cfg.batch, 0, round_rng_a, /*victim=*/0);
            RoundReport without_report = run_round(uc, without, cfg.batch, 0, round_rng_c);
            std::vector<double> a, b;
            for (const auto& [name, g] : with_report.aggregate) a.insert(a.end(), g.begin(), g.end());
            for (const auto& [name, g] : without_report.aggregate) b.insert(b.end(), g.begin(), g.end());
            const auto bins = gradient_diff_proportions(a, b);
            hist_csv << count << "," << trial;
            for (double v : bins) hist_csv << "," << detail::num(v);
            hist_csv << "\n";
        }
    }
    detail::write_text(cfg.out_dir + "/diff_hist.csv", hist_csv.str());
    return 0;
}

}  // namespace fedleak
