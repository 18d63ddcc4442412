#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace rlab::ad {

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    /// Invalidated when more nodes are recorded on the tape; copy to keep.
    const Tensor& value() const;
    const std::vector<std::size_t>& shape() const { return value().shape; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double item() const;
};

/// Define-by-run computation tape. Nodes are appended in evaluation order,
/// so the node vector is already topologically sorted; backward() walks it
/// in reverse and visits each node once.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a parameter. When `param.requires_grad` is set, backward()
    /// accumulates into `param.grad` (allocating it on first use). The
    /// parameter must outlive the tape.
    Var leaf(Tensor& param);
    Var constant(Tensor value);

    Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

    const Tensor& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    /// Gradient accumulator for a node, allocated lazily.
    std::vector<double>& grad(int id);

    /// Runs reverse accumulation from a scalar loss. Calling it again
    /// without zeroing parameter grads accumulates.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<int> inputs;
        BackwardFn backward;
        Tensor* param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);
/// x[m x n] + bias broadcast over rows; bias has n elements.
Var add_bias(Var x, Var bias);
/// x * W + b, the common dense-layer composite.
Var affine(Var x, Var weight, Var bias);

// Elementwise. Binary ops accept equal shapes or a single-element operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// Raises a Domain error if any input is non-positive.
Var log(Var a);
Var square(Var a);
/// Values outside [lo, hi] are clipped and receive zero gradient.
Var clamp(Var a, double lo, double hi);

// Reductions.
Var sum(Var a);
Var mean(Var a);
/// Per-row sum, shape [m x 1].
Var row_sum(Var a);
/// Per-row log-sum-exp with max subtraction, shape [m x 1].
Var logsumexp_rows(Var a);

// Row-wise softmax family; logits are divided by temperature first.
Var softmax(Var logits, double temperature = 1.0);
Var log_softmax(Var logits, double temperature = 1.0);

// Indexing.
Var select_columns(Var a, std::span<const int> columns);
Var gather_rows(Var a, std::span<const int> rows);
/// Stacks rows of `a` on top of rows of `b` (same column count).
Var concat_rows(Var a, Var b);

// Raw kernels, also used outside the tape. Row-major, C = A*B etc.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

}  // namespace rlab::ad
