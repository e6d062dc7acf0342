#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedleak/image.hpp"
#include "fedleak/ldp.hpp"
#include "fedleak/optimize.hpp"
#include "fedleak/structure.hpp"

namespace fedleak {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Every knob of an experiment run, parsed from a flat key=value file
/// (one pair per line, '#' comments). Unknown keys are rejected; defaults
/// are the values below.
struct RunConfig {
    // reproducibility / output
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = "out";
    std::size_t jobs = 1;

    // victim data
    std::size_t batch = 8, channels = 3, height = 32, width = 32;
    std::string mask_strategy = "oracle";  // oracle | luminance | external
    double mask_threshold = 0.5;
    std::string mask_file;  // external strategy: P5 mask batch file prefix

    // inference structure
    std::size_t units = 256, bias_copies = 100, metric_units = 256;
    double separation_weight = 2e-4;
    double laplace_mu = 1.7e-3, laplace_s = 1.3e-3;
    double tau = 1.0, tau_small = 1e-8;
    double output_gain = 12.0, metric_gain = 24.0;
    double mean_factor = 1.0, variance_factor = 10.0, tv_factor = 1e-3, index_factor = 4.0;

    // target model
    std::size_t hidden_units = 64, num_classes = 4;

    // victim-side protection
    double epsilon = 10.0, delta = 0.01, clip_bound = 10.0, c_const = 1.0, dataset_floor = 1000.0;
    bool dynamic_clip = false;  // reserved; parsed and echoed, not applied

    // attack
    double z_score = 2.576, division_floor = 1e-12;
    std::size_t min_negatives = 1000;

    // metric-based optimization
    double obj_mean_weight = 1e6, obj_variance_weight = 2e4, obj_tv_weight = 1e-6;
    double opt_lr = 1e-6;
    std::size_t opt_rounds = 1000;

    // federated simulation
    std::size_t fl_users = 50, fl_rounds = 200, fl_pool = 32, fl_test_size = 256;
    double fl_lr = 0.5;
    std::string fl_user_counts = "2,5,10,50";  // dilution histogram sweep

    // parameter sweeps
    std::string sweep_axis = "epsilon";  // epsilon | clip_bound | batch | units | rounds
    std::string sweep_values = "1,5,10,20";
    std::size_t trials = 5;  // seeds per sweep point

    StructureConfig structure_config() const {
        StructureConfig sc;
        sc.units = units;
        sc.bias_copies = bias_copies;
        sc.metric_units = metric_units;
        sc.batch = batch;
        sc.channels = channels;
        sc.height = height;
        sc.width = width;
        sc.weight_value = separation_weight;
        sc.laplace = {laplace_mu, laplace_s};
        sc.tau = tau;
        sc.output_gain = output_gain;
        sc.metric_gain = metric_gain;
        sc.factors = {mean_factor, variance_factor, tv_factor, index_factor};
        return sc;
    }

    LdpConfig ldp_config() const {
        return LdpConfig::make(epsilon, delta, clip_bound, c_const, dataset_floor);
    }

    ObjectiveWeights objective_weights() const {
        ObjectiveWeights w;
        w.w_mu = obj_mean_weight;
        w.w_sigma = obj_variance_weight;
        w.w_tv = obj_tv_weight;
        w.lr = opt_lr;
        w.rounds = opt_rounds;
        return w;
    }

    MaskProvider mask_provider() const {
        MaskProvider p;
        if (mask_strategy == "oracle") p.strategy = MaskStrategy::Oracle;
        else if (mask_strategy == "luminance") {
            p.strategy = MaskStrategy::LuminanceThreshold;
            p.threshold = mask_threshold;
        } else if (mask_strategy == "external") p.strategy = MaskStrategy::ExternalFile;
        else throw ConfigError("config: unknown mask_strategy '" + mask_strategy + "'");
        return p;
    }

    void assign(const std::string& key, const std::string& value);
    void validate() const;
    std::string echo() const;
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        if (v.empty() || v[0] == '-') throw std::invalid_argument(v);  // stoull would wrap
        std::size_t used = 0;
        const unsigned long long parsed = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double parsed = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(parse_double("list", item));
    }
    return out;
}

}  // namespace detail

inline void RunConfig::assign(const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_u64;
    if (key == "seed") { seed = parse_u64(key, value); seed_set = true; }
    else if (key == "out_dir") out_dir = value;
    else if (key == "jobs") jobs = parse_u64(key, value);
    else if (key == "batch") batch = parse_u64(key, value);
    else if (key == "channels") channels = parse_u64(key, value);
    else if (key == "height") height = parse_u64(key, value);
    else if (key == "width") width = parse_u64(key, value);
    else if (key == "mask_strategy") mask_strategy = value;
    else if (key == "mask_threshold") mask_threshold = parse_double(key, value);
    else if (key == "mask_file") mask_file = value;
    else if (key == "units") units = parse_u64(key, value);
    else if (key == "bias_copies") bias_copies = parse_u64(key, value);
    else if (key == "metric_units") metric_units = parse_u64(key, value);
    else if (key == "separation_weight") separation_weight = parse_double(key, value);
    else if (key == "laplace_mu") laplace_mu = parse_double(key, value);
    else if (key == "laplace_s") laplace_s = parse_double(key, value);
    else if (key == "tau") tau = parse_double(key, value);
    else if (key == "tau_small") tau_small = parse_double(key, value);
    else if (key == "output_gain") output_gain = parse_double(key, value);
    else if (key == "metric_gain") metric_gain = parse_double(key, value);
    else if (key == "mean_factor") mean_factor = parse_double(key, value);
    else if (key == "variance_factor") variance_factor = parse_double(key, value);
    else if (key == "tv_factor") tv_factor = parse_double(key, value);
    else if (key == "index_factor") index_factor = parse_double(key, value);
    else if (key == "hidden_units") hidden_units = parse_u64(key, value);
    else if (key == "num_classes") num_classes = parse_u64(key, value);
    else if (key == "epsilon") epsilon = parse_double(key, value);
    else if (key == "delta") delta = parse_double(key, value);
    else if (key == "clip_bound") clip_bound = parse_double(key, value);
    else if (key == "c_const") c_const = parse_double(key, value);
    else if (key == "dataset_floor") dataset_floor = parse_double(key, value);
    else if (key == "dynamic_clip") dynamic_clip = parse_bool(key, value);
    else if (key == "z_score") z_score = parse_double(key, value);
    else if (key == "division_floor") division_floor = parse_double(key, value);
    else if (key == "min_negatives") min_negatives = parse_u64(key, value);
    else if (key == "obj_mean_weight") obj_mean_weight = parse_double(key, value);
    else if (key == "obj_variance_weight") obj_variance_weight = parse_double(key, value);
    else if (key == "obj_tv_weight") obj_tv_weight = parse_double(key, value);
    else if (key == "opt_lr") opt_lr = parse_double(key, value);
    else if (key == "opt_rounds") opt_rounds = parse_u64(key, value);
    else if (key == "fl_users") fl_users = parse_u64(key, value);
    else if (key == "fl_rounds") fl_rounds = parse_u64(key, value);
    else if (key == "fl_pool") fl_pool = parse_u64(key, value);
    else if (key == "fl_test_size") fl_test_size = parse_u64(key, value);
    else if (key == "fl_lr") fl_lr = parse_double(key, value);
    else if (key == "fl_user_counts") fl_user_counts = value;
    else if (key == "sweep_axis") sweep_axis = value;
    else if (key == "sweep_values") sweep_values = value;
    else if (key == "trials") trials = parse_u64(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

inline void RunConfig::validate() const {
    if (!seed_set)
        throw ConfigError("config: missing required key 'seed' (set seed= in the file or pass --seed)");
    if (batch < 1) throw ConfigError("config: batch must be >= 1");
    if (channels != 1 && channels != 3) throw ConfigError("config: channels must be 1 or 3");
    if (height < 8 || width < 8) throw ConfigError("config: images must be at least 8x8");
    if (units < 2) throw ConfigError("config: units must be >= 2");
    if (bias_copies < 1) throw ConfigError("config: bias_copies must be >= 1");
    if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
    if (!(laplace_s > 0)) throw ConfigError("config: laplace_s must be positive");
    if (!(epsilon > 0) || !(clip_bound > 0) || !(c_const > 0) || !(dataset_floor > 0))
        throw ConfigError("config: privacy parameters must be positive");
    if (mask_strategy != "oracle" && mask_strategy != "luminance" && mask_strategy != "external")
        throw ConfigError("config: unknown mask_strategy '" + mask_strategy + "'");
    if (sweep_axis != "epsilon" && sweep_axis != "clip_bound" && sweep_axis != "batch" &&
        sweep_axis != "units" && sweep_axis != "rounds")
        throw ConfigError("config: unknown sweep_axis '" + sweep_axis + "'");
    if (fl_pool < batch) throw ConfigError("config: fl_pool must be at least batch");
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        const auto ktrim = key.find_last_not_of(" \t");
        key = key.substr(0, ktrim == std::string::npos ? 0 : ktrim + 1);
        const auto vtrim = value.find_first_not_of(" \t");
        value = vtrim == std::string::npos ? "" : value.substr(vtrim);
        cfg.assign(key, value);
    }
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

/// key=value echo of every knob, sorted by key: the config portion of the
/// run manifest, and itself parseable as a config file.
inline std::string RunConfig::echo() const {
    std::map<std::string, std::string> kv;
    const auto num = [](double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        return o.str();
    };
    kv["seed"] = std::to_string(seed);
    kv["out_dir"] = out_dir;
    kv["jobs"] = std::to_string(jobs);
    kv["batch"] = std::to_string(batch);
    kv["channels"] = std::to_string(channels);
    kv["height"] = std::to_string(height);
    kv["width"] = std::to_string(width);
    kv["mask_strategy"] = mask_strategy;
    kv["mask_threshold"] = num(mask_threshold);
    if (!mask_file.empty()) kv["mask_file"] = mask_file;
    kv["units"] = std::to_string(units);
    kv["bias_copies"] = std::to_string(bias_copies);
    kv["metric_units"] = std::to_string(metric_units);
    kv["separation_weight"] = num(separation_weight);
    kv["laplace_mu"] = num(laplace_mu);
    kv["laplace_s"] = num(laplace_s);
    kv["tau"] = num(tau);
    kv["tau_small"] = num(tau_small);
    kv["output_gain"] = num(output_gain);
    kv["metric_gain"] = num(metric_gain);
    kv["mean_factor"] = num(mean_factor);
    kv["variance_factor"] = num(variance_factor);
    kv["tv_factor"] = num(tv_factor);
    kv["index_factor"] = num(index_factor);
    kv["hidden_units"] = std::to_string(hidden_units);
    kv["num_classes"] = std::to_string(num_classes);
    kv["epsilon"] = num(epsilon);
    kv["delta"] = num(delta);
    kv["clip_bound"] = num(clip_bound);
    kv["c_const"] = num(c_const);
    kv["dataset_floor"] = num(dataset_floor);
    kv["dynamic_clip"] = dynamic_clip ? "1" : "0";
    kv["z_score"] = num(z_score);
    kv["division_floor"] = num(division_floor);
    kv["min_negatives"] = std::to_string(min_negatives);
    kv["obj_mean_weight"] = num(obj_mean_weight);
    kv["obj_variance_weight"] = num(obj_variance_weight);
    kv["obj_tv_weight"] = num(obj_tv_weight);
    kv["opt_lr"] = num(opt_lr);
    kv["opt_rounds"] = std::to_string(opt_rounds);
    kv["fl_users"] = std::to_string(fl_users);
    kv["fl_rounds"] = std::to_string(fl_rounds);
    kv["fl_pool"] = std::to_string(fl_pool);
    kv["fl_test_size"] = std::to_string(fl_test_size);
    kv["fl_lr"] = num(fl_lr);
    kv["fl_user_counts"] = fl_user_counts;
    kv["sweep_axis"] = sweep_axis;
    kv["sweep_values"] = sweep_values;
    kv["trials"] = std::to_string(trials);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

}  // namespace fedleak
