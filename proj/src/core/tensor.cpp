#include "tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "error.hpp"

namespace rlab::ad {

std::size_t shape_product(const std::vector<std::size_t>& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
    : shape(std::move(shape_)), data(shape_product(shape), fill) {
    for (auto extent : shape) {
        require(extent > 0, ErrorKind::Dimension, "tensor extents must be positive");
    }
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values)
    : shape(std::move(shape_)), data(std::move(values)) {
    for (auto extent : shape) {
        require(extent > 0, ErrorKind::Dimension, "tensor extents must be positive");
    }
    require(shape_product(shape) == data.size(), ErrorKind::Dimension,
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_to_string(shape));
}

Tensor Tensor::scalar(double value) { return Tensor({}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::cols() const noexcept {
    if (shape.size() < 2) return 1;
    std::size_t n = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
    return n;
}

void Tensor::zero_grad() { grad = std::vector<double>(data.size(), 0.0); }

bool Tensor::all_finite() const noexcept {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_string() const { return shape_to_string(shape); }

}  // namespace rlab::ad
