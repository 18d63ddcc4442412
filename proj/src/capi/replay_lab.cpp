#include "replay_lab/replay_lab.h"

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "error.hpp"
#include "runner.hpp"

struct rlab_config {
    rlab::config::ExperimentConfig value;
};

struct rlab_results {
    std::string output_dir;
    rlab::runner::MatrixReport report;
};

struct rlab_checkpoint {
    rlab::model::CheckpointContents contents;
};

namespace {

thread_local std::string last_error;

rlab_status status_of(rlab::ErrorKind kind) {
    using rlab::ErrorKind;
    switch (kind) {
        case ErrorKind::Dimension: return RLAB_ERR_DIMENSION;
        case ErrorKind::Domain: return RLAB_ERR_DOMAIN;
        case ErrorKind::Contract: return RLAB_ERR_CONTRACT;
        case ErrorKind::ReplayContract: return RLAB_ERR_REPLAY_CONTRACT;
        case ErrorKind::Format: return RLAB_ERR_FORMAT;
        case ErrorKind::Config: return RLAB_ERR_CONFIG;
        case ErrorKind::Data: return RLAB_ERR_DATA;
        case ErrorKind::Export: return RLAB_ERR_EXPORT;
        case ErrorKind::Io: return RLAB_ERR_IO;
    }
    return RLAB_ERR_INTERNAL;
}

rlab_status invalid(const char* what) {
    last_error = what;
    return RLAB_ERR_INVALID_ARGUMENT;
}

template <typename F>
rlab_status guarded(F&& body) {
    try {
        last_error.clear();
        return body();
    } catch (const rlab::Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        last_error = e.what();
        return RLAB_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown failure";
        return RLAB_ERR_INTERNAL;
    }
}

char* copy_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

extern "C" {

const char* rlab_last_error(void) { return last_error.c_str(); }

const char* rlab_status_name(rlab_status status) {
    switch (status) {
        case RLAB_OK: return "ok";
        case RLAB_ERR_DIMENSION: return "dimension error";
        case RLAB_ERR_DOMAIN: return "domain error";
        case RLAB_ERR_CONTRACT: return "contract error";
        case RLAB_ERR_REPLAY_CONTRACT: return "replay-contract error";
        case RLAB_ERR_FORMAT: return "format error";
        case RLAB_ERR_CONFIG: return "config error";
        case RLAB_ERR_DATA: return "data error";
        case RLAB_ERR_EXPORT: return "export error";
        case RLAB_ERR_IO: return "io error";
        case RLAB_ERR_INVALID_ARGUMENT: return "invalid argument";
        case RLAB_ERR_RUN_FAILED: return "run failed";
        case RLAB_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void rlab_string_free(char* s) { delete[] s; }

rlab_status rlab_config_load(const char* path, rlab_config** out) {
    if (!path || !out) return invalid("rlab_config_load: null argument");
    return guarded([&] {
        *out = new rlab_config{rlab::config::load_config(path)};
        return RLAB_OK;
    });
}

rlab_status rlab_config_parse(const char* json_text, const char* base_dir, rlab_config** out) {
    if (!json_text || !out) return invalid("rlab_config_parse: null argument");
    return guarded([&] {
        *out = new rlab_config{
            rlab::config::parse_config_text(json_text, base_dir ? base_dir : "")};
        return RLAB_OK;
    });
}

rlab_status rlab_config_set_output_dir(rlab_config* config, const char* dir) {
    if (!config || !dir) return invalid("rlab_config_set_output_dir: null argument");
    config->value.output_dir = dir;
    return RLAB_OK;
}

const char* rlab_config_output_dir(const rlab_config* config) {
    return config ? config->value.output_dir.c_str() : "";
}

rlab_status rlab_config_select_variants(rlab_config* config, const char* const* names,
                                        size_t count) {
    if (!config || (!names && count > 0)) return invalid("rlab_config_select_variants: null argument");
    return guarded([&] {
        std::vector<std::string> wanted;
        for (size_t i = 0; i < count; ++i) {
            if (!names[i]) return invalid("rlab_config_select_variants: null name");
            rlab::require(config->value.find_variant(names[i]) != nullptr, rlab::ErrorKind::Config,
                          std::string("variant '") + names[i] + "' is not in the config");
            wanted.emplace_back(names[i]);
        }
        auto edited = config->value;
        edited.variants.clear();
        for (const auto& v : config->value.variants)
            if (std::find(wanted.begin(), wanted.end(), v.name) != wanted.end()) edited.variants.push_back(v);
        rlab::config::validate(edited);
        config->value = std::move(edited);
        return RLAB_OK;
    });
}

rlab_status rlab_config_set_seeds(rlab_config* config, const uint64_t* seeds, size_t count) {
    if (!config || (!seeds && count > 0)) return invalid("rlab_config_set_seeds: null argument");
    return guarded([&] {
        auto edited = config->value;
        edited.seeds.assign(seeds, seeds + count);
        rlab::config::validate(edited);
        config->value = std::move(edited);
        return RLAB_OK;
    });
}

rlab_status rlab_config_to_json(const rlab_config* config, char** out) {
    if (!config || !out) return invalid("rlab_config_to_json: null argument");
    return guarded([&] {
        *out = copy_string(rlab::config::serialize_config(config->value));
        return RLAB_OK;
    });
}

void rlab_config_free(rlab_config* config) { delete config; }

rlab_status rlab_run_matrix(const rlab_config* config, rlab_log_fn log, void* user_data,
                            rlab_results** out) {
    if (!config || !out) return invalid("rlab_run_matrix: null argument");
    return guarded([&] {
        rlab::runner::RunnerOptions options;
        if (log) options.log = [log, user_data](const std::string& m) { log(m.c_str(), user_data); };
        auto* results = new rlab_results;
        try {
            results->report = rlab::runner::run_matrix(config->value, options);
        } catch (...) {
            delete results;
            throw;
        }
        results->output_dir = results->report.output_dir.string();
        *out = results;
        if (results->report.all_ok()) return RLAB_OK;
        last_error = "one or more runs failed; see failures.json in " + results->output_dir;
        return RLAB_ERR_RUN_FAILED;
    });
}

const char* rlab_results_output_dir(const rlab_results* results) {
    return results ? results->output_dir.c_str() : "";
}

size_t rlab_results_run_count(const rlab_results* results) {
    return results ? results->report.runs.size() : 0;
}

rlab_status rlab_results_run_info(const rlab_results* results, size_t index, const char** variant,
                                  uint64_t* seed, int* ok, const char** error) {
    if (!results) return invalid("rlab_results_run_info: null results");
    if (index >= results->report.runs.size()) return invalid("rlab_results_run_info: index out of range");
    const auto& run = results->report.runs[index];
    if (variant) *variant = run.variant.c_str();
    if (seed) *seed = run.seed;
    if (ok) *ok = run.ok ? 1 : 0;
    if (error) *error = run.error.c_str();
    return RLAB_OK;
}

void rlab_results_free(rlab_results* results) { delete results; }

rlab_status rlab_export_plot_data(const char* results_dir, size_t* files_written) {
    if (!results_dir) return invalid("rlab_export_plot_data: null argument");
    return guarded([&] {
        const auto files = rlab::runner::export_plot_data(results_dir);
        if (files_written) *files_written = files.size();
        return RLAB_OK;
    });
}

rlab_status rlab_checkpoint_open(const char* path, rlab_checkpoint** out) {
    if (!path || !out) return invalid("rlab_checkpoint_open: null argument");
    return guarded([&] {
        *out = new rlab_checkpoint{rlab::model::read_checkpoint(path)};
        return RLAB_OK;
    });
}

uint32_t rlab_checkpoint_version(const rlab_checkpoint* checkpoint) {
    return checkpoint ? checkpoint->contents.version : 0;
}

const char* rlab_checkpoint_config_json(const rlab_checkpoint* checkpoint) {
    return checkpoint ? checkpoint->contents.config_json.c_str() : "";
}

size_t rlab_checkpoint_group_count(const rlab_checkpoint* checkpoint) {
    return checkpoint ? checkpoint->contents.groups.size() : 0;
}

rlab_status rlab_checkpoint_group_info(const rlab_checkpoint* checkpoint, size_t index,
                                       const char** name, size_t* rank, const size_t** shape) {
    if (!checkpoint) return invalid("rlab_checkpoint_group_info: null checkpoint");
    if (index >= checkpoint->contents.groups.size())
        return invalid("rlab_checkpoint_group_info: index out of range");
    const auto& g = checkpoint->contents.groups[index];
    if (name) *name = g.name.c_str();
    if (rank) *rank = g.shape.size();
    if (shape) *shape = g.shape.data();
    return RLAB_OK;
}

void rlab_checkpoint_close(rlab_checkpoint* checkpoint) { delete checkpoint; }

}  // extern "C"
