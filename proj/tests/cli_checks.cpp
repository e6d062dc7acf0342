// Integration checks for the command-line runner: determinism of outputs,
// exit codes, and the shape of the emitted files. Takes the binary path as
// argv[1]; returns the number of failed checks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedleak/ppm.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
    if (!ok) {
        ++failures;
        std::cerr << "FAIL: " << what << "\n";
    }
}

int run(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    f << content;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: cli_checks <fedleak binary>\n";
        return 1;
    }
    const std::string bin = argv[1];
    const fs::path work = fs::temp_directory_path() / "fedleak_cli_checks";
    fs::remove_all(work);
    fs::create_directories(work);

    // A small but complete experiment configuration.
    const fs::path cfg = work / "small.cfg";
    write(cfg,
          "# integration config\n"
          "batch=2\nchannels=1\nheight=16\nwidth=16\n"
          "units=32\nbias_copies=8\nmetric_units=16\nhidden_units=16\n"
          "opt_rounds=50\nmin_negatives=100\n"
          "fl_users=3\nfl_rounds=2\nfl_pool=4\nfl_test_size=64\n"
          "fl_user_counts=2,4\ntrials=1\n"
          "sweep_axis=epsilon\nsweep_values=5,10\n");

    // 1. attack: reruns with the same seed are byte-identical except the
    //    manifest (it carries wall-clock timings).
    {
        const fs::path out1 = work / "run1", out2 = work / "run2";
        expect(run(bin + " attack --config " + cfg.string() + " --seed 7 --out " + out1.string() +
                   " >/dev/null 2>&1") == 0,
               "attack run 1 exits 0");
        expect(run(bin + " attack --config " + cfg.string() + " --seed 7 --out " + out2.string() +
                   " >/dev/null 2>&1") == 0,
               "attack run 2 exits 0");
        const char* stems[] = {"ground_truth", "masked", "raw", "optimized", "final"};
        for (const char* stem : stems)
            for (int b = 0; b < 2; ++b) {
                char name[48];
                std::snprintf(name, sizeof name, "%s_%02d.ppm", stem, b);
                expect(fs::exists(out1 / name), std::string("attack writes ") + name);
                expect(slurp(out1 / name) == slurp(out2 / name),
                       std::string(name) + " is byte-identical across reruns");
            }
        expect(slurp(out1 / "quality.csv") == slurp(out2 / "quality.csv"),
               "quality.csv is byte-identical across reruns");
        expect(fs::exists(out1 / "manifest.txt"), "attack writes manifest.txt");
        const std::string manifest = slurp(out1 / "manifest.txt");
        expect(manifest.find("sigma_hat=") != std::string::npos, "manifest records sigma_hat");
        expect(manifest.find("seed=7") != std::string::npos, "manifest echoes the config");
        const std::string quality = slurp(out1 / "quality.csv");
        expect(quality.rfind("sample,reverse_unit,overlapped,degenerate,mse,psnr,ssim", 0) == 0,
               "quality.csv header is stable");
        expect(count_lines(quality) == 4, "quality.csv has two sample rows plus the mean");
    }

    // 2. a different seed changes the outputs.
    {
        const fs::path out3 = work / "run3";
        expect(run(bin + " attack --config " + cfg.string() + " --seed 8 --out " + out3.string() +
                   " >/dev/null 2>&1") == 0,
               "attack with another seed exits 0");
        expect(slurp(out3 / "final_00.ppm") != slurp(work / "run1" / "final_00.ppm"),
               "a different seed produces different reconstructions");
    }

    // 3. configuration errors exit 1 and name the offender.
    {
        const fs::path err = work / "stderr.txt";
        expect(run(bin + " attack --config " + cfg.string() + " --out " + (work / "x").string() +
                   " 2>" + err.string() + " >/dev/null") == 1,
               "missing seed exits 1");
        expect(slurp(err).find("seed") != std::string::npos, "missing-seed message names the key");

        expect(run(bin + " attack --config " + cfg.string() + " --seed 1 --set bogus=1 --out " +
                   (work / "x").string() + " 2>" + err.string() + " >/dev/null") == 1,
               "unknown key exits 1");
        expect(slurp(err).find("bogus") != std::string::npos, "unknown-key message names the key");

        expect(run(bin + " attack --config " + (work / "missing.cfg").string() + " --seed 1 --out " +
                   (work / "x").string() + " >/dev/null 2>&1") == 1,
               "missing config file exits 1");
    }

    // 4. --set overrides keys.
    {
        const fs::path out4 = work / "run4";
        expect(run(bin + " attack --config " + cfg.string() +
                   " --seed 7 --set batch=1 --out " + out4.string() + " >/dev/null 2>&1") == 0,
               "attack with --set exits 0");
        expect(count_lines(slurp(out4 / "quality.csv")) == 3, "--set batch=1 yields one sample row");
        expect(!fs::exists(out4 / "final_01.ppm"), "batch=1 writes a single final image");
    }

    // 4b. the luminance mask strategy runs end to end.
    {
        const fs::path out = work / "run_lum";
        expect(run(bin + " attack --config " + cfg.string() +
                   " --seed 7 --set mask_strategy=luminance --set mask_threshold=0.5 --out " +
                   out.string() + " >/dev/null 2>&1") == 0,
               "attack with luminance masks exits 0");
        expect(fs::exists(out / "final_00.ppm"), "luminance run writes final images");
    }

    // 4c. external mask files (P5 with {0,255}) drive the masking.
    {
        for (int b = 0; b < 2; ++b) {
            fedleak::Tensor mask({1, 16, 16});
            for (std::size_t h = 4; h < 12; ++h)
                for (std::size_t w = 4; w < 12; ++w) mask.at3(0, h, w) = 1.0;
            std::ofstream f(work / ("mask" + std::to_string(b) + ".pgm"), std::ios::binary);
            const std::string bytes = fedleak::write_mask_pgm(mask);
            f.write(bytes.data(), std::streamsize(bytes.size()));
        }
        const fs::path out = work / "run_ext";
        expect(run(bin + " attack --config " + cfg.string() +
                   " --seed 7 --set mask_strategy=external --set mask_file=" +
                   (work / "mask").string() + " --out " + out.string() + " >/dev/null 2>&1") == 0,
               "attack with external mask files exits 0");
        expect(fs::exists(out / "masked_01.ppm"), "external-mask run writes masked images");
    }

    // 5. sweep: header plus one row per (value, trial).
    {
        const fs::path out5 = work / "sweep";
        expect(run(bin + " sweep --config " + cfg.string() + " --seed 3 --jobs 2 --out " +
                   out5.string() + " >/dev/null 2>&1") == 0,
               "sweep exits 0");
        const std::string csv = slurp(out5 / "sweep.csv");
        expect(csv.rfind("epsilon,seed,mse,psnr,ssim,separation_ratio,weight_grad_norm,wall_seconds",
                         0) == 0,
               "sweep.csv header is stable");
        expect(count_lines(csv) == 3, "sweep.csv has one row per value per trial");
    }

    // 6. flsim: accuracy trace plus difference histogram; zero rounds give
    //    a header-only trace.
    {
        const fs::path out6 = work / "flsim";
        expect(run(bin + " flsim --config " + cfg.string() + " --seed 4 --out " + out6.string() +
                   " >/dev/null 2>&1") == 0,
               "flsim exits 0");
        const std::string acc = slurp(out6 / "accuracy.csv");
        expect(acc.rfind("round,accuracy_attack,accuracy_clean,delta", 0) == 0,
               "accuracy.csv header is stable");
        expect(count_lines(acc) == 3, "accuracy.csv has one row per round");
        const std::string hist = slurp(out6 / "diff_hist.csv");
        expect(count_lines(hist) == 3, "diff_hist.csv has one row per user count per trial");

        const fs::path out7 = work / "flsim0";
        expect(run(bin + " flsim --config " + cfg.string() +
                   " --seed 4 --set fl_rounds=0 --out " + out7.string() + " >/dev/null 2>&1") == 0,
               "flsim with zero rounds exits 0");
        expect(count_lines(slurp(out7 / "accuracy.csv")) == 1, "zero rounds: header-only trace");
    }

    if (failures == 0) std::puts("cli checks passed");
    fs::remove_all(work);
    return failures;
}
