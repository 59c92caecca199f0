#pragma once

// Tape-based reverse-mode differentiation over dense 2-D tensors.
//
// Every primitive's vector-Jacobian product is itself recorded on the tape using
// primitives, so gradients are ordinary nodes and can be differentiated again
// (gradient matching and unrolled training both need this).

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "graphslim/tensor.hpp"

namespace graphslim {

using NodeId = std::size_t;

enum class Op {
    Leaf,
    MatMul,
    SpMM,
    Add,
    Sub,
    Mul,
    Div,
    Affine,
    MulConst,
    ScaleBy,
    Pow,
    Exp,
    Relu,
    LeakyRelu,
    Relu6,
    Elu,
    Sigmoid,
    Tanh,
    Softplus,
    LogSoftmax,
    RowSum,
    BroadcastCols,
    ColSum,
    BroadcastRows,
    Sum,
    BroadcastScalar,
    GatherRows,
    ScatterRows,
    GatherCols,
    ScatterCols,
    Transpose,
    ConcatCols,
    Reshape,
    Solve,
    Nll,
    Clamp,
    ArcCosK0,
    ArcCosK1,
    EdgeSpMM,
    EdgeDot,
};

const char* op_name(Op op);

struct OpAux {
    double a = 0.0;
    double b = 0.0;
    bool trans_a = false;
    bool trans_b = false;
    std::size_t n = 0;
    std::size_t m = 0;
    std::shared_ptr<const std::vector<std::size_t>> index;
    std::shared_ptr<const std::vector<int>> labels;
    std::shared_ptr<const Tensor> constant;
    SparseOperatorPtr sparse;
    std::shared_ptr<const EdgeList> edges;
};

struct TapeNode {
    Op op = Op::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    OpAux aux;
};

class Tape;

/// Handle to a node on a tape.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    NodeId id() const { return id_; }
    const Tensor& value() const;
    bool requires_grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool valid() const { return tape_ != nullptr; }

  private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

/// Ordered record of primitive operations. Single-threaded; one per worker.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const TapeNode& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    Var record(Op op, std::vector<NodeId> inputs, Tensor value, OpAux aux = {});

    /// Gradients of scalar `loss` with respect to `wrt`, as tape nodes (differentiable again).
    std::vector<Var> grad(Var loss, std::span<const Var> wrt);

    /// True when every node input precedes the node (topological order).
    bool well_formed() const;

  private:
    void accumulate(std::vector<NodeId>& adjoint, std::vector<bool>& has, NodeId target, Var g);
    void vjp(NodeId id, Var g, std::vector<NodeId>& adjoint, std::vector<bool>& has);

    std::vector<TapeNode> nodes_;
};

/// Exact reverse-mode gradients for every differentiable leaf; unreached leaves get zeros.
std::map<NodeId, Tensor> backward(Tape& tape, Var loss);

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
/// s * x, or s^T * x when `transpose` is set.
Var spmm(const SparseOperatorPtr& s, Var x, bool transpose = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// scale * x + shift
Var affine(Var x, double scale, double shift = 0.0);
Var mul_const(Var x, std::shared_ptr<const Tensor> c);
Var mul_const(Var x, Tensor c);
/// s * x for a 1x1 node s.
Var scale_by(Var s, Var x);
Var pow(Var x, double p);
Var exp(Var x);
Var relu(Var x);
Var leaky_relu(Var x, double slope = 0.01);
Var relu6(Var x);
Var elu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var softplus(Var x);
Var log_softmax(Var x);
Var row_sum(Var x);
Var broadcast_cols(Var x, std::size_t cols);
Var col_sum(Var x);
Var broadcast_rows(Var x, std::size_t rows);
Var sum(Var x);
Var mean(Var x);
Var broadcast_scalar(Var s, std::size_t rows, std::size_t cols);
Var gather_rows(Var x, std::shared_ptr<const std::vector<std::size_t>> idx);
Var gather_rows(Var x, std::vector<std::size_t> idx);
Var scatter_rows(Var x, std::shared_ptr<const std::vector<std::size_t>> idx, std::size_t rows);
Var gather_cols(Var x, std::shared_ptr<const std::vector<std::size_t>> idx);
Var gather_cols(Var x, std::vector<std::size_t> idx);
Var scatter_cols(Var x, std::shared_ptr<const std::vector<std::size_t>> idx, std::size_t cols);
Var transpose(Var x);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var x, std::size_t rows, std::size_t cols);
/// A^{-1} B via LU; gradients use the adjoint system.
Var solve(Var a, Var b);
/// Mean negative log-likelihood of `labels` at `rows` of a log-probability matrix.
Var nll(Var log_probs, std::shared_ptr<const std::vector<std::size_t>> rows, std::shared_ptr<const std::vector<int>> labels);
Var clamp(Var x, double lo, double hi);
/// (pi - arccos x) / pi
Var arccos_k0(Var x);
/// (sqrt(1 - x^2) + (pi - arccos x) x) / pi
Var arccos_k1(Var x);
/// Symmetric edge-weighted propagation: out[u] += w_e h[v], out[v] += w_e h[u].
Var edge_spmm(Var weights, Var h, std::shared_ptr<const EdgeList> edges);
/// Per-edge g[u].h[v] + g[v].h[u], as an |E| x 1 column.
Var edge_dot(Var g, Var h, std::shared_ptr<const EdgeList> edges);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);

/// Cross-entropy of logits at `rows` against `labels`.
Var cross_entropy(Var logits, std::span<const std::size_t> rows, std::span<const int> labels);

/// max_i |g_ad - g_fd| / max(1, |g_fd|) using central differences.
double fd_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& point, double epsilon = 1e-6);

}  // namespace graphslim
