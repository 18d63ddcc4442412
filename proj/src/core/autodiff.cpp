#include "autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"

namespace rlab::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

Tape& same_tape(Var a, Var b) {
    require(a.tape != nullptr && a.tape == b.tape, ErrorKind::Contract,
            "operands belong to different tapes");
    return *a.tape;
}

std::vector<std::size_t> matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

void require_matrix(const Tensor& t, const char* op) {
    require(t.rank() == 2, ErrorKind::Dimension,
            std::string(op) + " expects a matrix, got " + t.shape_string());
}

enum class Broadcast { Equal, LeftScalar, RightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape == b.shape) return Broadcast::Equal;
    if (a.size() == 1) return Broadcast::LeftScalar;
    if (b.size() == 1) return Broadcast::RightScalar;
    fail(ErrorKind::Dimension, std::string(op) + ": incompatible shapes " + a.shape_string() +
                                   " and " + b.shape_string());
}

template <typename Fwd>
Var unary(Var a, Fwd&& fwd, Tape::BackwardFn backward) {
    const Tensor& in = a.value();
    Tensor out(in.shape, std::vector<double>(in.size()));
    for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = fwd(in.data[i]);
    return a.tape->record(std::move(out), {a.id}, std::move(backward));
}

}  // namespace

const Tensor& Var::value() const {
    require(tape != nullptr, ErrorKind::Contract, "unbound variable");
    return tape->value(id);
}

double Var::item() const {
    const Tensor& t = value();
    require(t.size() == 1, ErrorKind::Contract, "item() on non-scalar " + t.shape_string());
    return t.data[0];
}

Var Tape::leaf(Tensor& param) {
    Node node;
    node.value.shape = param.shape;
    node.value.data = param.data;
    node.param = &param;
    node.needs_grad = param.requires_grad;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (int in : inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    node.inputs = std::move(inputs);
    if (node.needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<double>& Tape::grad(int id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
    return node.grad;
}

void Tape::backward(Var loss) {
    require(loss.tape == this, ErrorKind::Contract, "loss recorded on a different tape");
    require(value(loss.id).size() == 1, ErrorKind::Contract,
            "backward() needs a scalar loss, got " + value(loss.id).shape_string());
    for (Node& node : nodes_) node.grad.clear();
    grad(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& node = nodes_[id];
        if (!node.needs_grad || node.grad.empty()) continue;
        if (node.param != nullptr) {
            Tensor& p = *node.param;
            if (!p.grad) p.grad = std::vector<double>(p.size(), 0.0);
            auto& pg = *p.grad;
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += node.grad[i];
            continue;
        }
        if (node.backward) {
            // The closure may allocate grads of earlier nodes, which does
            // not touch this node's storage.
            const std::vector<double> upstream = std::move(node.grad);
            node.backward(*this, upstream);
            node.grad.clear();
        }
    }
}

// --- kernels ---------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    ConstMap A(a, m, k);
    ConstMap B(b, k, n);
    MutMap C(c, m, n);
    if (accumulate) C.noalias() += A * B;
    else C.noalias() = A * B;
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    ConstMap A(a, m, k);
    ConstMap B(b, n, k);
    MutMap C(c, m, n);
    if (accumulate) C.noalias() += A * B.transpose();
    else C.noalias() = A * B.transpose();
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    ConstMap A(a, k, m);
    ConstMap B(b, k, n);
    MutMap C(c, m, n);
    if (accumulate) C.noalias() += A.transpose() * B;
    else C.noalias() = A.transpose() * B;
}

// --- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    require(B.shape[0] == k, ErrorKind::Dimension,
            "matmul: inner dimensions disagree (" + A.shape_string() + " * " + B.shape_string() +
                ")");
    Tensor out(matrix_shape(m, n));
    gemm_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n, false);
    const int ia = a.id, ib = b.id;
    return tape.record(std::move(out), {ia, ib},
                       [ia, ib, m, k, n](Tape& t, const std::vector<double>& g) {
                           if (t.needs_grad(ia)) {
                               gemm_nt(g.data(), t.value(ib).data.data(), t.grad(ia).data(), m, n,
                                       k, true);
                           }
                           if (t.needs_grad(ib)) {
                               gemm_tn(t.value(ia).data.data(), g.data(), t.grad(ib).data(), k, m,
                                       n, true);
                           }
                       });
}

Var add_bias(Var x, Var bias) {
    Tape& tape = same_tape(x, bias);
    const Tensor& X = x.value();
    const Tensor& B = bias.value();
    require_matrix(X, "add_bias");
    const std::size_t m = X.shape[0], n = X.shape[1];
    require(B.size() == n, ErrorKind::Dimension,
            "add_bias: bias " + B.shape_string() + " does not match " + X.shape_string());
    Tensor out = X;
    out.requires_grad = false;
    out.grad.reset();
    for (std::size_t r = 0; r < m; ++r) {
        double* row = out.data.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) row[c] += B.data[c];
    }
    const int ix = x.id, ib = bias.id;
    return tape.record(std::move(out), {ix, ib},
                       [ix, ib, m, n](Tape& t, const std::vector<double>& g) {
                           if (t.needs_grad(ix)) {
                               auto& gx = t.grad(ix);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           }
                           if (t.needs_grad(ib)) {
                               auto& gb = t.grad(ib);
                               for (std::size_t r = 0; r < m; ++r)
                                   for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
                           }
                       });
}

Var affine(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

// --- elementwise -----------------------------------------------------------

namespace {

template <typename Fwd, typename DA, typename DB>
Var binary(Var a, Var b, const char* name, Fwd&& fwd, DA&& da, DB&& db) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const Broadcast kind = broadcast_kind(A, B, name);
    const Tensor& shape_src = kind == Broadcast::LeftScalar ? B : A;
    const std::size_t n = shape_src.size();
    Tensor out(shape_src.shape, std::vector<double>(n));
    auto ai = [kind](std::size_t i) { return kind == Broadcast::LeftScalar ? 0 : i; };
    auto bi = [kind](std::size_t i) { return kind == Broadcast::RightScalar ? 0 : i; };
    for (std::size_t i = 0; i < n; ++i) out.data[i] = fwd(A.data[ai(i)], B.data[bi(i)]);
    const int ia = a.id, ib = b.id;
    return tape.record(
        std::move(out), {ia, ib},
        [ia, ib, kind, n, da, db, ai, bi](Tape& t, const std::vector<double>& g) {
            const auto& av = t.value(ia).data;
            const auto& bv = t.value(ib).data;
            if (t.needs_grad(ia)) {
                auto& ga = t.grad(ia);
                for (std::size_t i = 0; i < n; ++i)
                    ga[ai(i)] += g[i] * da(av[ai(i)], bv[bi(i)]);
            }
            if (t.needs_grad(ib)) {
                auto& gb = t.grad(ib);
                for (std::size_t i = 0; i < n; ++i)
                    gb[bi(i)] += g[i] * db(av[ai(i)], bv[bi(i)]);
            }
            (void)kind;
        });
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
    const int ia = a.id;
    return unary(a, [factor](double x) { return x * factor; },
                 [ia, factor](Tape& t, const std::vector<double>& g) {
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                 });
}

Var add_scalar(Var a, double value) {
    const int ia = a.id;
    return unary(a, [value](double x) { return x + value; },
                 [ia](Tape& t, const std::vector<double>& g) {
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                 });
}

Var relu(Var a) {
    const int ia = a.id;
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [ia](Tape& t, const std::vector<double>& g) {
                     const auto& x = t.value(ia).data;
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i)
                         if (x[i] > 0.0) ga[i] += g[i];
                 });
}

Var sigmoid(Var a) {
    const Tensor& in = a.value();
    Tensor out(in.shape, std::vector<double>(in.size()));
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double x = in.data[i];
        out.data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    const int ia = a.id;
    Tape& tape = *a.tape;
    const int io = static_cast<int>(tape.size());
    return tape.record(std::move(out), {ia}, [ia, io](Tape& t, const std::vector<double>& g) {
        const auto& y = t.value(io).data;
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var exp(Var a) {
    const int ia = a.id;
    return unary(a, [](double x) { return std::exp(x); },
                 [ia](Tape& t, const std::vector<double>& g) {
                     const auto& x = t.value(ia).data;
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::exp(x[i]);
                 });
}

Var log(Var a) {
    for (double v : a.value().data) {
        require(v > 0.0, ErrorKind::Domain, "log of non-positive value " + std::to_string(v));
    }
    const int ia = a.id;
    return unary(a, [](double x) { return std::log(x); },
                 [ia](Tape& t, const std::vector<double>& g) {
                     const auto& x = t.value(ia).data;
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                 });
}

Var square(Var a) {
    const int ia = a.id;
    return unary(a, [](double x) { return x * x; },
                 [ia](Tape& t, const std::vector<double>& g) {
                     const auto& x = t.value(ia).data;
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * x[i];
                 });
}

Var clamp(Var a, double lo, double hi) {
    const int ia = a.id;
    return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [ia, lo, hi](Tape& t, const std::vector<double>& g) {
                     const auto& x = t.value(ia).data;
                     auto& ga = t.grad(ia);
                     for (std::size_t i = 0; i < g.size(); ++i)
                         if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
                 });
}

// --- reductions ------------------------------------------------------------

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().data) total += v;
    const int ia = a.id;
    return a.tape->record(Tensor::scalar(total), {ia},
                          [ia](Tape& t, const std::vector<double>& g) {
                              auto& ga = t.grad(ia);
                              for (double& v : ga) v += g[0];
                          });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(Var a) {
    const Tensor& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out(matrix_shape(m, 1));
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += A.data[r * n + c];
        out.data[r] = s;
    }
    const int ia = a.id;
    return a.tape->record(std::move(out), {ia}, [ia, m, n](Tape& t, const std::vector<double>& g) {
        auto& ga = t.grad(ia);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r];
    });
}

Var logsumexp_rows(Var a) {
    const Tensor& A = a.value();
    require_matrix(A, "logsumexp_rows");
    const std::size_t m = A.shape[0], n = A.shape[1];
    Tensor out(matrix_shape(m, 1));
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = A.data.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += std::exp(row[c] - mx);
        out.data[r] = mx + std::log(s);
    }
    const int ia = a.id;
    Tape& tape = *a.tape;
    const int io = static_cast<int>(tape.size());
    return tape.record(std::move(out), {ia},
                       [ia, io, m, n](Tape& t, const std::vector<double>& g) {
                           const auto& x = t.value(ia).data;
                           const auto& y = t.value(io).data;
                           auto& ga = t.grad(ia);
                           for (std::size_t r = 0; r < m; ++r)
                               for (std::size_t c = 0; c < n; ++c)
                                   ga[r * n + c] += g[r] * std::exp(x[r * n + c] - y[r]);
                       });
}

// --- softmax ---------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits, double temperature) {
    require(temperature > 0.0, ErrorKind::Domain, "softmax temperature must be positive");
    require_matrix(logits, "softmax");
    const std::size_t m = logits.shape[0], n = logits.shape[1];
    Tensor out(logits.shape);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = logits.data.data() + r * n;
        double* o = out.data.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            o[c] = std::exp((row[c] - mx) / temperature);
            s += o[c];
        }
        for (std::size_t c = 0; c < n; ++c) o[c] /= s;
    }
    return out;
}

Var softmax(Var logits, double temperature) {
    Tensor out = softmax_rows(logits.value(), temperature);
    const std::size_t m = out.shape[0], n = out.shape[1];
    const int ia = logits.id;
    Tape& tape = *logits.tape;
    const int io = static_cast<int>(tape.size());
    return tape.record(std::move(out), {ia},
                       [ia, io, m, n, temperature](Tape& t, const std::vector<double>& g) {
                           const auto& y = t.value(io).data;
                           auto& ga = t.grad(ia);
                           for (std::size_t r = 0; r < m; ++r) {
                               double dot = 0.0;
                               for (std::size_t c = 0; c < n; ++c)
                                   dot += g[r * n + c] * y[r * n + c];
                               for (std::size_t c = 0; c < n; ++c)
                                   ga[r * n + c] +=
                                       y[r * n + c] * (g[r * n + c] - dot) / temperature;
                           }
                       });
}

Var log_softmax(Var logits, double temperature) {
    require(temperature > 0.0, ErrorKind::Domain, "softmax temperature must be positive");
    const Tensor& A = logits.value();
    require_matrix(A, "log_softmax");
    const std::size_t m = A.shape[0], n = A.shape[1];
    Tensor out(A.shape);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = A.data.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += std::exp((row[c] - mx) / temperature);
        const double lse = std::log(s);
        for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] = (row[c] - mx) / temperature - lse;
    }
    const int ia = logits.id;
    Tape& tape = *logits.tape;
    const int io = static_cast<int>(tape.size());
    return tape.record(std::move(out), {ia},
                       [ia, io, m, n, temperature](Tape& t, const std::vector<double>& g) {
                           const auto& y = t.value(io).data;
                           auto& ga = t.grad(ia);
                           for (std::size_t r = 0; r < m; ++r) {
                               double gs = 0.0;
                               for (std::size_t c = 0; c < n; ++c) gs += g[r * n + c];
                               for (std::size_t c = 0; c < n; ++c)
                                   ga[r * n + c] +=
                                       (g[r * n + c] - std::exp(y[r * n + c]) * gs) / temperature;
                           }
                       });
}

// --- indexing --------------------------------------------------------------

Var select_columns(Var a, std::span<const int> columns) {
    const Tensor& A = a.value();
    require_matrix(A, "select_columns");
    require(!columns.empty(), ErrorKind::Dimension, "select_columns: empty column list");
    const std::size_t m = A.shape[0], n = A.shape[1], k = columns.size();
    std::vector<int> cols(columns.begin(), columns.end());
    for (int c : cols) {
        require(c >= 0 && static_cast<std::size_t>(c) < n, ErrorKind::Dimension,
                "select_columns: column " + std::to_string(c) + " out of range");
    }
    Tensor out(matrix_shape(m, k));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < k; ++j) out.data[r * k + j] = A.data[r * n + cols[j]];
    const int ia = a.id;
    return a.tape->record(std::move(out), {ia},
                          [ia, m, n, k, cols](Tape& t, const std::vector<double>& g) {
                              auto& ga = t.grad(ia);
                              for (std::size_t r = 0; r < m; ++r)
                                  for (std::size_t j = 0; j < k; ++j)
                                      ga[r * n + cols[j]] += g[r * k + j];
                          });
}

Var gather_rows(Var a, std::span<const int> rows) {
    const Tensor& A = a.value();
    require_matrix(A, "gather_rows");
    require(!rows.empty(), ErrorKind::Dimension, "gather_rows: empty row list");
    const std::size_t m = A.shape[0], n = A.shape[1], k = rows.size();
    std::vector<int> idx(rows.begin(), rows.end());
    for (int r : idx) {
        require(r >= 0 && static_cast<std::size_t>(r) < m, ErrorKind::Dimension,
                "gather_rows: row " + std::to_string(r) + " out of range");
    }
    Tensor out(matrix_shape(k, n));
    for (std::size_t i = 0; i < k; ++i)
        std::copy_n(A.data.data() + idx[i] * n, n, out.data.data() + i * n);
    const int ia = a.id;
    return a.tape->record(std::move(out), {ia}, [ia, n, k, idx](Tape& t, const std::vector<double>& g) {
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t c = 0; c < n; ++c) ga[idx[i] * n + c] += g[i * n + c];
    });
}

Var concat_rows(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "concat_rows");
    require_matrix(B, "concat_rows");
    require(A.shape[1] == B.shape[1], ErrorKind::Dimension,
            "concat_rows: column counts differ (" + A.shape_string() + ", " + B.shape_string() + ")");
    const std::size_t na = A.size();
    std::vector<double> data(A.data);
    data.insert(data.end(), B.data.begin(), B.data.end());
    Tensor out(matrix_shape(A.shape[0] + B.shape[0], A.shape[1]), std::move(data));
    const int ia = a.id, ib = b.id;
    return tape.record(std::move(out), {ia, ib}, [ia, ib, na](Tape& t, const std::vector<double>& g) {
        if (t.needs_grad(ia)) {
            auto& ga = t.grad(ia);
            for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (t.needs_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        }
    });
}

}  // namespace rlab::ad
