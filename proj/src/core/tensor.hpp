#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace rlab::ad {

/// Dense row-major array of doubles with an optional gradient slot.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    /// Leading extent; a scalar counts as one row.
    std::size_t rows() const noexcept { return shape.empty() ? 1 : shape[0]; }
    /// Product of all trailing extents.
    std::size_t cols() const noexcept;

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void zero_grad();
    bool all_finite() const noexcept;
    std::string shape_string() const;
};

std::size_t shape_product(const std::vector<std::size_t>& shape) noexcept;
std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace rlab::ad
