#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace rlab::config {

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | idx | cifar100
    // synthetic
    std::size_t num_classes = 10;
    std::size_t dim = 64;
    std::size_t samples_per_class = 1250;
    double spread = 0.5;
    std::uint64_t seed = 0;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    // cifar100
    std::string train_file, test_file;
    std::size_t resolution = 8;
};

struct VariantSpec {
    std::string name;
    trainer::AblationFlags flags;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    trainer::TrainerConfig trainer;
    /// num_tasks, context_gating and conditional_prior are derived per run.
    model::NetworkConfig network;
    std::vector<VariantSpec> variants;
    std::vector<std::uint64_t> seeds;
    std::string output_dir;
    std::size_t workers = 1;
    bool checkpoints = true;
    /// Directory that relative dataset paths are resolved against. Not
    /// serialised.
    std::filesystem::path base_dir;

    const VariantSpec* find_variant(const std::string& name) const;
};

/// Parses and validates a config document. Unknown keys, type mismatches and
/// missing required fields raise Config errors naming the key path.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config with every default written out.
nlohmann::json to_json(const ExperimentConfig& config);
/// Canonical text form: sorted keys, two-space indent, trailing newline.
std::string serialize_config(const ExperimentConfig& config);

/// Checks cross-field constraints and that dataset paths exist.
void validate(const ExperimentConfig& config);

std::filesystem::path resolve_path(const ExperimentConfig& config, const std::string& path);
data::DatasetPair load_dataset(const ExperimentConfig& config);

}  // namespace rlab::config
