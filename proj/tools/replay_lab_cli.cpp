#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "replay_lab/replay_lab.h"

namespace {

int report(rlab_status status) {
    std::cerr << "error (" << rlab_status_name(status) << "): " << rlab_last_error() << "\n";
    return status == RLAB_ERR_CONFIG || status == RLAB_ERR_INVALID_ARGUMENT ? 2 : 1;
}

void log_line(const char* message, void*) { std::cerr << message << "\n"; }

int run_command(const std::string& config_path, const std::string& out,
                const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds) {
    rlab_config* config = nullptr;
    rlab_status st = rlab_config_load(config_path.c_str(), &config);
    if (st != RLAB_OK) return report(st);

    // --out, then the config file, then $REPLAY_LAB_OUT, then ./results.
    std::string dir = out;
    if (dir.empty()) dir = rlab_config_output_dir(config);
    if (dir.empty()) {
        const char* env = std::getenv("REPLAY_LAB_OUT");
        dir = env && *env ? env : "results";
    }
    rlab_config_set_output_dir(config, dir.c_str());

    if (!variants.empty()) {
        std::vector<const char*> names;
        for (const auto& v : variants) names.push_back(v.c_str());
        st = rlab_config_select_variants(config, names.data(), names.size());
        if (st != RLAB_OK) {
            rlab_config_free(config);
            return report(st);
        }
    }
    if (!seeds.empty()) {
        st = rlab_config_set_seeds(config, seeds.data(), seeds.size());
        if (st != RLAB_OK) {
            rlab_config_free(config);
            return report(st);
        }
    }

    rlab_results* results = nullptr;
    st = rlab_run_matrix(config, log_line, nullptr, &results);
    rlab_config_free(config);
    if (!results) return report(st);

    const std::size_t n = rlab_results_run_count(results);
    for (std::size_t i = 0; i < n; ++i) {
        const char* variant = nullptr;
        const char* error = nullptr;
        std::uint64_t seed = 0;
        int ok = 0;
        rlab_results_run_info(results, i, &variant, &seed, &ok, &error);
        std::cout << (ok ? "ok     " : "FAILED ") << variant << " seed " << seed;
        if (!ok) std::cout << ": " << error;
        std::cout << "\n";
    }
    const std::string out_dir = rlab_results_output_dir(results);
    rlab_results_free(results);
    if (st != RLAB_OK) return report(st);

    std::size_t files = 0;
    st = rlab_export_plot_data(out_dir.c_str(), &files);
    if (st != RLAB_OK) return report(st);
    std::cout << "results in " << out_dir << " (" << files << " plot files)\n";
    return 0;
}

int inspect_command(const std::string& path) {
    rlab_checkpoint* ckpt = nullptr;
    const rlab_status st = rlab_checkpoint_open(path.c_str(), &ckpt);
    if (st != RLAB_OK) return report(st);
    std::cout << "version " << rlab_checkpoint_version(ckpt) << "\n";
    std::cout << "config " << rlab_checkpoint_config_json(ckpt) << "\n";
    const std::size_t n = rlab_checkpoint_group_count(ckpt);
    std::cout << n << " parameter groups\n";
    for (std::size_t i = 0; i < n; ++i) {
        const char* name = nullptr;
        std::size_t rank = 0;
        const std::size_t* shape = nullptr;
        rlab_checkpoint_group_info(ckpt, i, &name, &rank, &shape);
        std::cout << "  " << name << " [";
        for (std::size_t d = 0; d < rank; ++d) std::cout << (d ? " x " : "") << shape[d];
        std::cout << "]\n";
    }
    rlab_checkpoint_close(ckpt);
    return 0;
}

int export_command(const std::string& dir) {
    std::size_t files = 0;
    const rlab_status st = rlab_export_plot_data(dir.c_str(), &files);
    if (st != RLAB_OK) return report(st);
    std::cout << "wrote " << files << " plot files to " << dir << "/plots\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Class-incremental replay experiments"};
    app.require_subcommand(1);

    std::string config_path, out;
    std::vector<std::string> variants;
    std::vector<std::uint64_t> seeds;
    auto* run = app.add_subcommand("run", "Run every variant x seed of a config");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory (default: config output_dir, $REPLAY_LAB_OUT, ./results)");
    run->add_option("--variant", variants, "Only run this variant (repeatable)");
    run->add_option("--seed", seeds, "Override the seed list (repeatable)");

    std::string checkpoint;
    auto* inspect = app.add_subcommand("inspect", "Print a checkpoint's config and parameter shapes");
    inspect->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

    std::string results_dir;
    auto* exp = app.add_subcommand("export", "Regenerate plot CSVs from a results directory");
    exp->add_option("--results", results_dir, "Results directory")->required();

    CLI11_PARSE(app, argc, argv);
    if (*run) return run_command(config_path, out, variants, seeds);
    if (*inspect) return inspect_command(checkpoint);
    return export_command(results_dir);
}
