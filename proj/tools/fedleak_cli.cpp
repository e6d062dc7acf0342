// Experiment runner for the reconstruction laboratory: single attacks,
// parameter sweeps, and federated-training impact simulations.
//
//   fedleak attack --config cfg.txt --seed 1 --out results/
//   fedleak sweep  --config cfg.txt --set sweep_axis=epsilon --set sweep_values=1,5,10,20
//   fedleak flsim  --config cfg.txt --jobs 1
//
// Config files are flat key=value lines ('#' comments); --set overrides
// individual keys and may repeat. Exit codes: 0 success, 1 configuration
// error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedleak/config.hpp"
#include "fedleak/runner.hpp"

namespace {

fedleak::RunConfig load_config(const std::string& config_path,
                               const std::vector<std::string>& sets, long long seed_flag,
                               const std::string& out_flag, long long jobs_flag) {
    fedleak::RunConfig cfg;
    if (!config_path.empty()) cfg = fedleak::parse_config_file(config_path);
    for (const std::string& kv : sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw fedleak::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.assign(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed_flag >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_flag);
        cfg.seed_set = true;
    }
    if (!out_flag.empty()) cfg.out_dir = out_flag;
    if (jobs_flag > 0) cfg.jobs = static_cast<std::size_t>(jobs_flag);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sample reconstruction laboratory for LDP-protected federated learning"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::vector<std::string> sets;
    long long seed = -1, jobs = -1;
    for (auto* sub : {app.add_subcommand("attack", "run one reconstruction attack"),
                      app.add_subcommand("sweep", "sweep one parameter axis"),
                      app.add_subcommand("flsim", "federated training impact simulation")}) {
        sub->add_option("--config", config_path, "flat key=value config file");
        sub->add_option("--set", sets, "override one key (repeatable)");
        sub->add_option("--seed", seed, "master seed (overrides the config)");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--jobs", jobs, "worker threads for sweeps");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const fedleak::RunConfig cfg = load_config(config_path, sets, seed, out_dir, jobs);
        if (app.got_subcommand("attack")) return fedleak::cmd_attack(cfg);
        if (app.got_subcommand("sweep")) return fedleak::cmd_sweep(cfg);
        if (app.got_subcommand("flsim")) return fedleak::cmd_flsim(cfg);
        std::fprintf(stderr, "error: no subcommand\n");
        return 1;
    } catch (const fedleak::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
