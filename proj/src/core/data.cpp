#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

#include "error.hpp"

namespace rlab::data {

using ad::Tensor;

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset,
                        const std::filesystem::path& path) {
    require(offset + 4 <= b.size(), ErrorKind::Format,
            path.string() + ": truncated header at byte offset " + std::to_string(offset));
    return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
           (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                           static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(bytes, 4);
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.split = split;
    out.unit_scaled = unit_scaled;
    const std::size_t d = dim();
    require(!indices.empty(), ErrorKind::Data, "subset: empty index list");
    std::vector<double> rows;
    rows.reserve(indices.size() * d);
    for (std::size_t i : indices) {
        require(i < size(), ErrorKind::Data, "subset: index out of range");
        rows.insert(rows.end(), inputs.data.begin() + i * d, inputs.data.begin() + (i + 1) * d);
        out.labels.push_back(labels[i]);
    }
    out.inputs = Tensor({indices.size(), d}, std::move(rows));
    return out;
}

void Dataset::validate() const {
    require(inputs.rank() == 2, ErrorKind::Data, "dataset inputs must be a matrix");
    require(inputs.rows() == labels.size(), ErrorKind::Data, "dataset row/label count mismatch");
    for (int l : labels) {
        require(l >= 0 && static_cast<std::size_t>(l) < num_classes, ErrorKind::Data,
                "label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    require(img_magic == 0x00000803, ErrorKind::Format,
            images_path.string() + ": bad IDX image magic at byte offset 0");
    const std::uint32_t count = read_be32(img, 4, images_path);
    const std::uint32_t rows = read_be32(img, 8, images_path);
    const std::uint32_t cols = read_be32(img, 12, images_path);
    const std::size_t pixels = std::size_t{rows} * cols;
    require(pixels > 0, ErrorKind::Format, images_path.string() + ": zero-sized images");
    const std::size_t expected = 16 + std::size_t{count} * pixels;
    require(img.size() >= expected, ErrorKind::Format,
            images_path.string() + ": truncated pixel data at byte offset " +
                std::to_string(img.size()) + " (expected " + std::to_string(expected) + " bytes)");

    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    require(lab_magic == 0x00000801, ErrorKind::Format,
            labels_path.string() + ": bad IDX label magic at byte offset 0");
    const std::uint32_t lab_count = read_be32(lab, 4, labels_path);
    require(lab_count == count, ErrorKind::Format,
            "IDX count mismatch: " + std::to_string(count) + " images vs " +
                std::to_string(lab_count) + " labels (label header byte offset 4)");
    require(lab.size() >= 8 + std::size_t{count}, ErrorKind::Format,
            labels_path.string() + ": truncated label data at byte offset " +
                std::to_string(lab.size()));
    require(count > 0, ErrorKind::Data, images_path.string() + ": empty dataset");

    Dataset ds;
    ds.unit_scaled = true;
    std::vector<double> values(std::size_t{count} * pixels);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img[16 + i] / 255.0;
    ds.inputs = Tensor({count, pixels}, std::move(values));
    int max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels.push_back(lab[8 + i]);
        max_label = std::max(max_label, ds.labels.back());
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    require(img && lab, ErrorKind::Io, "cannot write IDX files");
    const auto n = static_cast<std::uint32_t>(dataset.size());
    put_be32(img, 0x00000803);
    put_be32(img, n);
    put_be32(img, 1);
    put_be32(img, static_cast<std::uint32_t>(dataset.dim()));
    for (double v : dataset.inputs.data) {
        img.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    put_be32(lab, 0x00000801);
    put_be32(lab, n);
    for (int l : dataset.labels) {
        require(l >= 0 && l < 256, ErrorKind::Format, "IDX labels must fit in a byte");
        lab.put(static_cast<char>(l));
    }
}

Dataset decode_cifar100(std::span<const unsigned char> bytes, std::size_t resolution) {
    constexpr std::size_t kRecord = 3074;
    constexpr std::size_t kSide = 32;
    require(bytes.size() % kRecord == 0, ErrorKind::Format,
            "CIFAR-100 file length " + std::to_string(bytes.size()) +
                " is not a multiple of 3074; expected " +
                std::to_string((bytes.size() / kRecord + 1) * kRecord) + " or " +
                std::to_string(bytes.size() / kRecord * kRecord) + " bytes");
    require(!bytes.empty(), ErrorKind::Data, "CIFAR-100 file is empty");
    require(resolution > 0 && kSide % resolution == 0, ErrorKind::Config,
            "CIFAR-100 resolution must divide 32");
    const std::size_t n = bytes.size() / kRecord;
    const std::size_t block = kSide / resolution;
    const std::size_t dim = 3 * resolution * resolution;
    Dataset ds;
    ds.unit_scaled = true;
    ds.num_classes = 100;
    std::vector<double> values(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * kRecord;
        const int fine = rec[1];
        require(fine < 100, ErrorKind::Format,
                "CIFAR-100 fine label " + std::to_string(fine) + " at byte offset " +
                    std::to_string(i * kRecord + 1));
        ds.labels.push_back(fine);
        const unsigned char* px = rec + 2;
        double* out = values.data() + i * dim;
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t r = 0; r < resolution; ++r) {
                for (std::size_t c = 0; c < resolution; ++c) {
                    double acc = 0.0;
                    for (std::size_t br = 0; br < block; ++br)
                        for (std::size_t bc = 0; bc < block; ++bc)
                            acc += px[ch * kSide * kSide + (r * block + br) * kSide + c * block + bc];
                    out[ch * resolution * resolution + r * resolution + c] =
                        acc / (255.0 * static_cast<double>(block * block));
                }
            }
        }
    }
    ds.inputs = Tensor({n, dim}, std::move(values));
    return ds;
}

Dataset load_cifar100_binary(const std::filesystem::path& path, std::size_t resolution) {
    const auto bytes = read_file(path);
    return decode_cifar100(bytes, resolution);
}

DatasetPair make_synthetic_blobs(std::size_t num_classes, std::size_t dim,
                                 std::size_t samples_per_class, double spread, std::uint64_t seed) {
    require(spread > 0.0, ErrorKind::Config, "synthetic spread must be positive");
    require(num_classes >= 1 && dim >= 1, ErrorKind::Config, "synthetic blobs need classes and dim");
    require(samples_per_class >= 2, ErrorKind::Config,
            "synthetic blobs need at least 2 samples per class");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Class centres: Gram-Schmidt on Gaussian vectors; once dim is exhausted
    // the remaining centres are random unit vectors.
    std::vector<std::vector<double>> centres;
    for (std::size_t k = 0; k < num_classes; ++k) {
        std::vector<double> v(dim);
        for (double& x : v) x = normal(rng);
        if (k < dim) {
            for (const auto& u : centres) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dot += v[j] * u[j];
                for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * u[j];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        centres.push_back(std::move(v));
    }

    const std::size_t n_train = (samples_per_class * 4) / 5;
    const std::size_t n_test = samples_per_class - n_train;
    DatasetPair pair;
    std::vector<double> train_x, test_x;
    for (std::size_t k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < samples_per_class; ++i) {
            auto& dst = i < n_train ? train_x : test_x;
            for (std::size_t j = 0; j < dim; ++j) dst.push_back(centres[k][j] + spread * normal(rng));
            (i < n_train ? pair.train.labels : pair.test.labels).push_back(static_cast<int>(k));
        }
    }
    pair.train.inputs = Tensor({num_classes * n_train, dim}, std::move(train_x));
    pair.train.num_classes = num_classes;
    pair.train.split = Split::Train;
    if (n_test > 0) pair.test.inputs = Tensor({num_classes * n_test, dim}, std::move(test_x));
    pair.test.num_classes = num_classes;
    pair.test.split = Split::Test;
    return pair;
}

int TaskSplit::task_of_class(int class_id) const {
    for (std::size_t t = 0; t < task_classes.size(); ++t) {
        if (std::find(task_classes[t].begin(), task_classes[t].end(), class_id) !=
            task_classes[t].end())
            return static_cast<int>(t);
    }
    return -1;
}

std::vector<int> TaskSplit::classes_up_to(std::size_t task) const {
    std::vector<int> out;
    for (std::size_t t = 0; t <= task && t < task_classes.size(); ++t)
        out.insert(out.end(), task_classes[t].begin(), task_classes[t].end());
    std::sort(out.begin(), out.end());
    return out;
}

void TaskSplit::validate() const {
    std::set<int> classes;
    std::size_t total = 0;
    for (const auto& group : task_classes) {
        total += group.size();
        classes.insert(group.begin(), group.end());
    }
    require(classes.size() == total, ErrorKind::Contract, "task class groups overlap");
    for (const auto* lists : {&train_indices, &test_indices}) {
        std::set<std::size_t> seen;
        std::size_t count = 0;
        for (const auto& idx : *lists) {
            count += idx.size();
            seen.insert(idx.begin(), idx.end());
        }
        require(seen.size() == count, ErrorKind::Contract, "sample index assigned to two tasks");
    }
}

TaskSplit split_into_tasks(const Dataset& train, const Dataset& test, std::size_t num_tasks,
                           std::size_t classes_per_task, std::optional<std::uint64_t> order_seed) {
    require(num_tasks > 0 && classes_per_task > 0, ErrorKind::Config,
            "num_tasks and classes_per_task must be positive");
    const std::size_t needed = num_tasks * classes_per_task;
    require(needed <= train.num_classes, ErrorKind::Config,
            "split needs " + std::to_string(needed) + " classes but the dataset has " +
                std::to_string(train.num_classes));
    std::vector<int> order(train.num_classes);
    std::iota(order.begin(), order.end(), 0);
    if (order_seed) {
        std::mt19937_64 rng(*order_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }
    TaskSplit split;
    std::vector<int> class_task(train.num_classes, -1);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        std::vector<int> group(order.begin() + t * classes_per_task,
                               order.begin() + (t + 1) * classes_per_task);
        for (int c : group) class_task[c] = static_cast<int>(t);
        split.task_classes.push_back(std::move(group));
    }
    auto assign = [&](const Dataset& ds, std::vector<std::vector<std::size_t>>& lists) {
        lists.assign(num_tasks, {});
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const int label = ds.labels[i];
            if (label >= 0 && static_cast<std::size_t>(label) < class_task.size() &&
                class_task[label] >= 0)
                lists[class_task[label]].push_back(i);
        }
    };
    assign(train, split.train_indices);
    assign(test, split.test_indices);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        require(!split.train_indices[t].empty(), ErrorKind::Data,
                "task " + std::to_string(t + 1) + " has no training samples");
    }
    split.validate();
    return split;
}

}  // namespace rlab::data
