#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "trainer.hpp"

namespace rlab::runner {

struct RunRecord {
    std::string variant;
    std::uint64_t seed = 0;
    std::filesystem::path directory;
    bool ok = false;
    std::string error_kind;
    std::string error;
    std::optional<trainer::RunResult> result;
};

struct MatrixReport {
    std::filesystem::path output_dir;
    std::vector<RunRecord> runs;  // variant-major, seed-minor

    bool all_ok() const;
};

struct RunnerOptions {
    std::function<void(const std::string&)> log;
    /// Keep each RunResult in the report (they can be large).
    bool keep_results = false;
};

/// Runs every (variant, seed) pair, writing per-run artifacts under
/// `<output_dir>/<variant-slug>/<seed>/`, then `summary.json`, the config echo
/// and, when any run failed, `failures.json`.
MatrixReport run_matrix(const config::ExperimentConfig& config, const RunnerOptions& options = {});

/// Writes the metric files of one finished run.
void write_run_outputs(const std::filesystem::path& dir, const trainer::RunResult& result,
                       const std::string& variant, std::uint64_t seed,
                       const trainer::AblationFlags& flags);

/// Regenerates the plot-ready CSVs under `<results_dir>/plots/` from the
/// files written by run_matrix. Returns the files written.
std::vector<std::filesystem::path> export_plot_data(const std::filesystem::path& results_dir);

/// Shortest round-trip decimal form used in every CSV.
std::string format_number(double v);

}  // namespace rlab::runner
