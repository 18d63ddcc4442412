#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace rlab::data {

enum class Split { Train, Test };

struct Dataset {
    ad::Tensor inputs;  // [n x input_dim]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    Split split = Split::Train;
    /// True when inputs are image intensities scaled to [0, 1].
    bool unit_scaled = false;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return inputs.cols(); }
    /// Rows in the given order.
    Dataset subset(std::span<const std::size_t> indices) const;
    void validate() const;
};

struct DatasetPair {
    Dataset train;
    Dataset test;
};

/// Parses an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes inputs (expected in [0, 1]; quantised to bytes) and labels as IDX.
/// Rows are written as 1 x dim images.
void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Parses CIFAR-100 binary records (coarse byte, fine byte, 3072 pixels).
/// Fine labels are kept. With `resolution` < 32 each channel is downscaled by
/// block averaging; 32 must be divisible by the resolution.
Dataset load_cifar100_binary(const std::filesystem::path& path, std::size_t resolution = 32);
Dataset decode_cifar100(std::span<const unsigned char> bytes, std::size_t resolution = 32);

/// Gaussian blobs around orthonormal class directions; `spread` is the
/// per-coordinate standard deviation. The first 80% of each class's samples
/// form the train split.
DatasetPair make_synthetic_blobs(std::size_t num_classes, std::size_t dim,
                                 std::size_t samples_per_class, double spread, std::uint64_t seed);

/// Class-incremental partition: consecutive groups of `classes_per_task`
/// classes, in ascending order or shuffled by `order_seed`.
struct TaskSplit {
    std::vector<std::vector<int>> task_classes;
    std::vector<std::vector<std::size_t>> train_indices;
    std::vector<std::vector<std::size_t>> test_indices;

    std::size_t num_tasks() const noexcept { return task_classes.size(); }
    /// Task owning a class, or -1 when the class is not covered.
    int task_of_class(int class_id) const;
    /// Classes of tasks 0..task inclusive, sorted.
    std::vector<int> classes_up_to(std::size_t task) const;
    void validate() const;
};

TaskSplit split_into_tasks(const Dataset& train, const Dataset& test, std::size_t num_tasks,
                           std::size_t classes_per_task,
                           std::optional<std::uint64_t> order_seed = std::nullopt);

}  // namespace rlab::data
