#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace rlab::ad {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
};

/// Applies one update to every parameter in `params`. Moment buffers are
/// sized on the first call; later calls must pass parameters in the same
/// order. Throws a Contract error when a parameter has no gradient.
void optimizer_step(OptimizerState& state, std::span<Tensor* const> params);

void zero_grads(std::span<Tensor* const> params);

}  // namespace rlab::ad
