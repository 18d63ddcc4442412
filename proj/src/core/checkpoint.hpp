#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "model.hpp"

namespace rlab::model {

// Layout (all integers little-endian):
//   "BIRL" | u32 version | u64 json_len | json bytes | u32 group_count |
//   per group: u32 name_len | name | u32 rank | u64 extents[rank] | f64 data[]
inline constexpr char kCheckpointMagic[4] = {'B', 'I', 'R', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParameterGroup {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

struct CheckpointContents {
    std::uint32_t version = 0;
    std::string config_json;
    std::vector<ParameterGroup> groups;
};

std::vector<char> encode_checkpoint(const ReplayModel& model);
CheckpointContents decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const ReplayModel& model, const std::filesystem::path& path);
CheckpointContents read_checkpoint(const std::filesystem::path& path);
/// Rebuilds a model, including the prior's seen classes, from a checkpoint.
ReplayModel load_checkpoint(const std::filesystem::path& path);
ReplayModel model_from_checkpoint(const CheckpointContents& contents);

}  // namespace rlab::model
