#include "optim.hpp"

#include <cmath>
#include <string>

#include "error.hpp"

namespace rlab::ad {

void optimizer_step(OptimizerState& state, std::span<Tensor* const> params) {
    require(state.learning_rate > 0.0, ErrorKind::Config, "learning rate must be positive");
    for (std::size_t p = 0; p < params.size(); ++p) {
        require(params[p]->grad.has_value(), ErrorKind::Contract,
                "optimizer_step: parameter " + std::to_string(p) + " has no gradient");
    }
    ++state.step;
    if (state.kind == OptimizerKind::Sgd) {
        for (Tensor* param : params) {
            const auto& g = *param->grad;
            for (std::size_t i = 0; i < param->size(); ++i)
                param->data[i] -= state.learning_rate * g[i];
        }
        return;
    }

    if (state.first_moment.empty()) {
        for (Tensor* param : params) {
            state.first_moment.emplace_back(param->size(), 0.0);
            state.second_moment.emplace_back(param->size(), 0.0);
        }
    }
    require(state.first_moment.size() == params.size(), ErrorKind::Contract,
            "optimizer_step: parameter list changed between steps");

    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p];
        auto& m = state.first_moment[p];
        auto& v = state.second_moment[p];
        require(m.size() == param.size(), ErrorKind::Contract,
                "optimizer_step: moment length does not match parameter");
        const auto& g = *param.grad;
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            param.data[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void zero_grads(std::span<Tensor* const> params) {
    for (Tensor* param : params) param->zero_grad();
}

}  // namespace rlab::ad
