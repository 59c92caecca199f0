#include "graphslim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace graphslim {

namespace {

constexpr double kPi = std::numbers::pi;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                                    shape_string(b));
    }
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = f(x[i]);
    }
    return out;
}

template <typename F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = f(a[i], b[i]);
    }
    return out;
}

std::shared_ptr<const std::vector<std::size_t>> share(std::vector<std::size_t> v) {
    return std::make_shared<const std::vector<std::size_t>>(std::move(v));
}

Tape& same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) {
        throw std::invalid_argument("operands recorded on different tapes");
    }
    return a.tape();
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::SpMM: return "spmm";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Affine: return "affine";
        case Op::MulConst: return "mul_const";
        case Op::ScaleBy: return "scale_by";
        case Op::Pow: return "pow";
        case Op::Exp: return "exp";
        case Op::Relu: return "relu";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::Relu6: return "relu6";
        case Op::Elu: return "elu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Softplus: return "softplus";
        case Op::LogSoftmax: return "log_softmax";
        case Op::RowSum: return "row_sum";
        case Op::BroadcastCols: return "broadcast_cols";
        case Op::ColSum: return "col_sum";
        case Op::BroadcastRows: return "broadcast_rows";
        case Op::Sum: return "sum";
        case Op::BroadcastScalar: return "broadcast_scalar";
        case Op::GatherRows: return "gather_rows";
        case Op::ScatterRows: return "scatter_rows";
        case Op::GatherCols: return "gather_cols";
        case Op::ScatterCols: return "scatter_cols";
        case Op::Transpose: return "transpose";
        case Op::ConcatCols: return "concat_cols";
        case Op::Reshape: return "reshape";
        case Op::Solve: return "solve";
        case Op::Nll: return "nll";
        case Op::Clamp: return "clamp";
        case Op::ArcCosK0: return "arccos_k0";
        case Op::ArcCosK1: return "arccos_k1";
        case Op::EdgeSpMM: return "edge_spmm";
        case Op::EdgeDot: return "edge_dot";
    }
    return "unknown";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) {
        throw NumericalError("non-finite value in leaf tensor");
    }
    TapeNode n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Op op, std::vector<NodeId> inputs, Tensor value, OpAux aux) {
    if (!value.all_finite()) {
        throw NumericalError(std::string("non-finite output from ") + op_name(op));
    }
    bool rg = false;
    for (NodeId in : inputs) {
        if (in >= nodes_.size()) {
            throw std::logic_error("tape record references a future node");
        }
        rg = rg || nodes_[in].requires_grad;
    }
    TapeNode n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = rg;
    n.aux = std::move(aux);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

bool Tape::well_formed() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (NodeId in : nodes_[i].inputs) {
            if (in >= i) {
                return false;
            }
        }
    }
    return true;
}

void Tape::accumulate(std::vector<NodeId>& adjoint, std::vector<bool>& has, NodeId target, Var g) {
    if (!nodes_[target].requires_grad) {
        return;
    }
    if (has[target]) {
        adjoint[target] = add(Var(this, adjoint[target]), g).id();
    } else {
        adjoint[target] = g.id();
        has[target] = true;
    }
}

std::vector<Var> Tape::grad(Var loss, std::span<const Var> wrt) {
    if (&loss.tape() != this) {
        throw std::invalid_argument("loss belongs to a different tape");
    }
    if (loss.value().size() != 1) {
        throw std::invalid_argument("grad requires a scalar loss, got " + shape_string(loss.value()));
    }
    const NodeId top = loss.id();
    std::vector<NodeId> adjoint(top + 1, 0);
    std::vector<bool> has(top + 1, false);
    adjoint[top] = constant(Tensor::scalar(1.0)).id();
    has[top] = true;
    for (NodeId id = top + 1; id-- > 0;) {
        if (!has[id] || !nodes_[id].requires_grad || nodes_[id].op == Op::Leaf) {
            continue;
        }
        vjp(id, Var(this, adjoint[id]), adjoint, has);
    }
    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
        if (w.id() <= top && has[w.id()]) {
            out.emplace_back(this, adjoint[w.id()]);
        } else {
            const Tensor& v = w.value();
            out.push_back(constant(Tensor(v.rows(), v.cols())));
        }
    }
    return out;
}

void Tape::vjp(NodeId id, Var g, std::vector<NodeId>& adjoint, std::vector<bool>& has) {
    // Copy what we need: recording new nodes may reallocate `nodes_`.
    const Op op = nodes_[id].op;
    const std::vector<NodeId> inputs = nodes_[id].inputs;
    const OpAux aux = nodes_[id].aux;
    const Var out(this, id);
    auto in = [&](std::size_t i) { return Var(this, inputs[i]); };
    auto needs = [&](std::size_t i) { return nodes_[inputs[i]].requires_grad; };
    auto push = [&](std::size_t i, Var contrib) { accumulate(adjoint, has, inputs[i], contrib); };

    switch (op) {
        case Op::Leaf:
            return;
        case Op::MatMul: {
            const bool ta = aux.trans_a;
            const bool tb = aux.trans_b;
            if (needs(0)) {
                push(0, ta ? matmul(in(1), g, tb, true) : matmul(g, in(1), false, !tb));
            }
            if (needs(1)) {
                push(1, tb ? matmul(g, in(0), true, ta) : matmul(in(0), g, !ta, false));
            }
            return;
        }
        case Op::SpMM:
            push(0, spmm(aux.sparse, g, !aux.trans_a));
            return;
        case Op::Add:
            if (needs(0)) push(0, g);
            if (needs(1)) push(1, g);
            return;
        case Op::Sub:
            if (needs(0)) push(0, g);
            if (needs(1)) push(1, affine(g, -1.0));
            return;
        case Op::Mul:
            if (needs(0)) push(0, mul(g, in(1)));
            if (needs(1)) push(1, mul(g, in(0)));
            return;
        case Op::Div:
            if (needs(0)) push(0, div(g, in(1)));
            if (needs(1)) push(1, affine(div(mul(g, out), in(1)), -1.0));
            return;
        case Op::Affine:
            push(0, affine(g, aux.a));
            return;
        case Op::MulConst:
            push(0, mul_const(g, aux.constant));
            return;
        case Op::ScaleBy:
            if (needs(0)) push(0, sum(mul(g, in(1))));
            if (needs(1)) push(1, scale_by(in(0), g));
            return;
        case Op::Pow:
            push(0, mul(g, affine(pow(in(0), aux.a - 1.0), aux.a)));
            return;
        case Op::Exp:
            push(0, mul(g, out));
            return;
        case Op::Relu: {
            const Tensor& x = nodes_[inputs[0]].value;
            push(0, mul_const(g, map_values(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; })));
            return;
        }
        case Op::LeakyRelu: {
            const double slope = aux.a;
            const Tensor& x = nodes_[inputs[0]].value;
            push(0, mul_const(g, map_values(x, [slope](double v) { return v > 0.0 ? 1.0 : slope; })));
            return;
        }
        case Op::Relu6: {
            const Tensor& x = nodes_[inputs[0]].value;
            push(0, mul_const(g, map_values(x, [](double v) { return v > 0.0 && v < 6.0 ? 1.0 : 0.0; })));
            return;
        }
        case Op::Elu: {
            const Tensor& x = nodes_[inputs[0]].value;
            Tensor neg = map_values(x, [](double v) { return v > 0.0 ? 0.0 : 1.0; });
            push(0, mul(g, affine(mul_const(out, std::move(neg)), 1.0, 1.0)));
            return;
        }
        case Op::Sigmoid:
            push(0, mul(g, mul(out, affine(out, -1.0, 1.0))));
            return;
        case Op::Tanh:
            push(0, mul(g, affine(mul(out, out), -1.0, 1.0)));
            return;
        case Op::Softplus:
            push(0, mul(g, sigmoid(in(0))));
            return;
        case Op::LogSoftmax:
            push(0, sub(g, mul(exp(out), broadcast_cols(row_sum(g), g.cols()))));
            return;
        case Op::RowSum:
            push(0, broadcast_cols(g, aux.n));
            return;
        case Op::BroadcastCols:
            push(0, row_sum(g));
            return;
        case Op::ColSum:
            push(0, broadcast_rows(g, aux.n));
            return;
        case Op::BroadcastRows:
            push(0, col_sum(g));
            return;
        case Op::Sum:
            push(0, broadcast_scalar(g, aux.n, aux.m));
            return;
        case Op::BroadcastScalar:
            push(0, sum(g));
            return;
        case Op::GatherRows:
            push(0, scatter_rows(g, aux.index, aux.n));
            return;
        case Op::ScatterRows:
            push(0, gather_rows(g, aux.index));
            return;
        case Op::GatherCols:
            push(0, scatter_cols(g, aux.index, aux.n));
            return;
        case Op::ScatterCols:
            push(0, gather_cols(g, aux.index));
            return;
        case Op::Transpose:
            push(0, transpose(g));
            return;
        case Op::ConcatCols: {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                const std::size_t w = nodes_[inputs[i]].value.cols();
                if (needs(i)) {
                    std::vector<std::size_t> cols(w);
                    std::iota(cols.begin(), cols.end(), offset);
                    push(i, gather_cols(g, std::move(cols)));
                }
                offset += w;
            }
            return;
        }
        case Op::Reshape:
            push(0, reshape(g, aux.n, aux.m));
            return;
        case Op::Solve: {
            // X = A^{-1} B:  dB = A^{-T} G,  dA = -dB X^T.
            Var db = solve(transpose(in(0)), g);
            if (needs(1)) push(1, db);
            if (needs(0)) push(0, affine(matmul(db, out, false, true), -1.0));
            return;
        }
        case Op::Nll: {
            const Tensor& lp = nodes_[inputs[0]].value;
            auto pattern = std::make_shared<Tensor>(lp.rows(), lp.cols());
            const double w = -1.0 / static_cast<double>(aux.index->size());
            for (std::size_t k = 0; k < aux.index->size(); ++k) {
                (*pattern)((*aux.index)[k], static_cast<std::size_t>((*aux.labels)[k])) += w;
            }
            push(0, scale_by(g, constant(std::move(*pattern))));
            return;
        }
        case Op::Clamp: {
            const Tensor& x = nodes_[inputs[0]].value;
            const double lo = aux.a;
            const double hi = aux.b;
            push(0, mul_const(g, map_values(x, [lo, hi](double v) { return v >= lo && v <= hi ? 1.0 : 0.0; })));
            return;
        }
        case Op::ArcCosK0: {
            Var x = in(0);
            push(0, mul(g, affine(pow(affine(mul(x, x), -1.0, 1.0), -0.5), 1.0 / kPi)));
            return;
        }
        case Op::ArcCosK1:
            push(0, mul(g, arccos_k0(in(0))));
            return;
        case Op::EdgeSpMM:
            if (needs(0)) push(0, edge_dot(g, in(1), aux.edges));
            if (needs(1)) push(1, edge_spmm(in(0), g, aux.edges));
            return;
        case Op::EdgeDot:
            if (needs(0)) push(0, edge_spmm(g, in(1), aux.edges));
            if (needs(1)) push(1, edge_spmm(g, in(0), aux.edges));
            return;
    }
}

std::map<NodeId, Tensor> backward(Tape& tape, Var loss) {
    std::vector<Var> leaves;
    for (NodeId id = 0; id < tape.size(); ++id) {
        const TapeNode& n = tape.node(id);
        if (n.op == Op::Leaf && n.requires_grad) {
            leaves.emplace_back(&tape, id);
        }
    }
    std::vector<Var> grads = tape.grad(loss, leaves);
    std::map<NodeId, Tensor> out;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const Tensor& g = grads[i].value();
        if (!g.all_finite()) {
            throw NumericalError("NaN encountered during backward sweep");
        }
        out.emplace(leaves[i].id(), g);
    }
    return out;
}

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t ar = trans_a ? av.cols() : av.rows();
    const std::size_t ac = trans_a ? av.rows() : av.cols();
    const std::size_t br = trans_b ? bv.cols() : bv.rows();
    const std::size_t bc = trans_b ? bv.rows() : bv.cols();
    if (ac != br) {
        throw std::invalid_argument("matmul: inner dimensions differ (" + shape_string(av) + ", " + shape_string(bv) +
                                    ")");
    }
    Tensor out(ar, bc);
    if (!trans_a && !trans_b) {
        out.mat().noalias() = av.mat() * bv.mat();
    } else if (trans_a && !trans_b) {
        out.mat().noalias() = av.mat().transpose() * bv.mat();
    } else if (!trans_a && trans_b) {
        out.mat().noalias() = av.mat() * bv.mat().transpose();
    } else {
        out.mat().noalias() = av.mat().transpose() * bv.mat().transpose();
    }
    OpAux aux;
    aux.trans_a = trans_a;
    aux.trans_b = trans_b;
    return t.record(Op::MatMul, {a.id(), b.id()}, std::move(out), std::move(aux));
}

Var spmm(const SparseOperatorPtr& s, Var x, bool transpose) {
    const Tensor& xv = x.value();
    const SparseMatrix& m = transpose ? s->transpose : s->matrix;
    if (static_cast<std::size_t>(m.cols()) != xv.rows()) {
        throw std::invalid_argument("spmm: operator has " + std::to_string(m.cols()) + " columns, input " +
                                    shape_string(xv));
    }
    Tensor out(static_cast<std::size_t>(m.rows()), xv.cols());
    out.mat().noalias() = m * xv.mat();
    OpAux aux;
    aux.sparse = s;
    aux.trans_a = transpose;
    return x.tape().record(Op::SpMM, {x.id()}, std::move(out), std::move(aux));
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    return same_tape(a, b).record(Op::Add, {a.id(), b.id()},
                                  zip_values(a.value(), b.value(), [](double x, double y) { return x + y; }));
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    return same_tape(a, b).record(Op::Sub, {a.id(), b.id()},
                                  zip_values(a.value(), b.value(), [](double x, double y) { return x - y; }));
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    return same_tape(a, b).record(Op::Mul, {a.id(), b.id()},
                                  zip_values(a.value(), b.value(), [](double x, double y) { return x * y; }));
}

Var div(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "div");
    return same_tape(a, b).record(Op::Div, {a.id(), b.id()},
                                  zip_values(a.value(), b.value(), [](double x, double y) { return x / y; }));
}

Var affine(Var x, double scale, double shift) {
    OpAux aux;
    aux.a = scale;
    aux.b = shift;
    return x.tape().record(Op::Affine, {x.id()},
                           map_values(x.value(), [scale, shift](double v) { return scale * v + shift; }),
                           std::move(aux));
}

Var mul_const(Var x, std::shared_ptr<const Tensor> c) {
    require_same_shape(x.value(), *c, "mul_const");
    Tensor out = zip_values(x.value(), *c, [](double a, double b) { return a * b; });
    OpAux aux;
    aux.constant = std::move(c);
    return x.tape().record(Op::MulConst, {x.id()}, std::move(out), std::move(aux));
}

Var mul_const(Var x, Tensor c) { return mul_const(x, std::make_shared<const Tensor>(std::move(c))); }

Var scale_by(Var s, Var x) {
    const double k = s.value().item();
    return same_tape(s, x).record(Op::ScaleBy, {s.id(), x.id()}, map_values(x.value(), [k](double v) { return k * v; }));
}

Var pow(Var x, double p) {
    OpAux aux;
    aux.a = p;
    return x.tape().record(Op::Pow, {x.id()}, map_values(x.value(), [p](double v) { return std::pow(v, p); }),
                           std::move(aux));
}

Var exp(Var x) { return x.tape().record(Op::Exp, {x.id()}, map_values(x.value(), [](double v) { return std::exp(v); })); }

Var relu(Var x) {
    return x.tape().record(Op::Relu, {x.id()}, map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }));
}

Var leaky_relu(Var x, double slope) {
    OpAux aux;
    aux.a = slope;
    return x.tape().record(Op::LeakyRelu, {x.id()},
                           map_values(x.value(), [slope](double v) { return v > 0.0 ? v : slope * v; }),
                           std::move(aux));
}

Var relu6(Var x) {
    return x.tape().record(Op::Relu6, {x.id()},
                           map_values(x.value(), [](double v) { return std::clamp(v, 0.0, 6.0); }));
}

Var elu(Var x) {
    return x.tape().record(Op::Elu, {x.id()},
                           map_values(x.value(), [](double v) { return v > 0.0 ? v : std::expm1(v); }));
}

Var sigmoid(Var x) {
    return x.tape().record(Op::Sigmoid, {x.id()}, map_values(x.value(), [](double v) {
                               if (v >= 0.0) {
                                   return 1.0 / (1.0 + std::exp(-v));
                               }
                               const double e = std::exp(v);
                               return e / (1.0 + e);
                           }));
}

Var tanh(Var x) { return x.tape().record(Op::Tanh, {x.id()}, map_values(x.value(), [](double v) { return std::tanh(v); })); }

Var softplus(Var x) {
    return x.tape().record(Op::Softplus, {x.id()}, map_values(x.value(), [](double v) {
                               return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
                           }));
}

Var log_softmax(Var x) {
    const Tensor& v = x.value();
    Tensor out(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i) {
        auto row = v.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double z : row) {
            s += std::exp(z - mx);
        }
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < v.cols(); ++j) {
            out(i, j) = row[j] - lse;
        }
    }
    return x.tape().record(Op::LogSoftmax, {x.id()}, std::move(out));
}

Var row_sum(Var x) {
    const Tensor& v = x.value();
    Tensor out(v.rows(), 1);
    for (std::size_t i = 0; i < v.rows(); ++i) {
        double s = 0.0;
        for (double z : v.row(i)) {
            s += z;
        }
        out(i, 0) = s;
    }
    OpAux aux;
    aux.n = v.cols();
    return x.tape().record(Op::RowSum, {x.id()}, std::move(out), std::move(aux));
}

Var broadcast_cols(Var x, std::size_t cols) {
    const Tensor& v = x.value();
    if (v.cols() != 1) {
        throw std::invalid_argument("broadcast_cols expects a column vector");
    }
    Tensor out(v.rows(), cols);
    for (std::size_t i = 0; i < v.rows(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out(i, j) = v(i, 0);
        }
    }
    return x.tape().record(Op::BroadcastCols, {x.id()}, std::move(out));
}

Var col_sum(Var x) {
    const Tensor& v = x.value();
    Tensor out(1, v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i) {
        for (std::size_t j = 0; j < v.cols(); ++j) {
            out(0, j) += v(i, j);
        }
    }
    OpAux aux;
    aux.n = v.rows();
    return x.tape().record(Op::ColSum, {x.id()}, std::move(out), std::move(aux));
}

Var broadcast_rows(Var x, std::size_t rows) {
    const Tensor& v = x.value();
    if (v.rows() != 1) {
        throw std::invalid_argument("broadcast_rows expects a row vector");
    }
    Tensor out(rows, v.cols());
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy(v.values().begin(), v.values().end(), out.row(i).begin());
    }
    return x.tape().record(Op::BroadcastRows, {x.id()}, std::move(out));
}

Var sum(Var x) {
    const Tensor& v = x.value();
    double s = 0.0;
    for (double z : v.values()) {
        s += z;
    }
    OpAux aux;
    aux.n = v.rows();
    aux.m = v.cols();
    return x.tape().record(Op::Sum, {x.id()}, Tensor::scalar(s), std::move(aux));
}

Var mean(Var x) { return affine(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var broadcast_scalar(Var s, std::size_t rows, std::size_t cols) {
    return s.tape().record(Op::BroadcastScalar, {s.id()}, Tensor(rows, cols, s.value().item()));
}

Var gather_rows(Var x, std::shared_ptr<const std::vector<std::size_t>> idx) {
    const Tensor& v = x.value();
    Tensor out(idx->size(), v.cols());
    for (std::size_t k = 0; k < idx->size(); ++k) {
        const std::size_t r = (*idx)[k];
        if (r >= v.rows()) {
            throw std::out_of_range("gather_rows index out of range");
        }
        auto src = v.row(r);
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    OpAux aux;
    aux.index = std::move(idx);
    aux.n = v.rows();
    return x.tape().record(Op::GatherRows, {x.id()}, std::move(out), std::move(aux));
}

Var gather_rows(Var x, std::vector<std::size_t> idx) { return gather_rows(x, share(std::move(idx))); }

Var scatter_rows(Var x, std::shared_ptr<const std::vector<std::size_t>> idx, std::size_t rows) {
    const Tensor& v = x.value();
    if (v.rows() != idx->size()) {
        throw std::invalid_argument("scatter_rows index count mismatch");
    }
    Tensor out(rows, v.cols());
    for (std::size_t k = 0; k < idx->size(); ++k) {
        auto dst = out.row((*idx)[k]);
        auto src = v.row(k);
        for (std::size_t j = 0; j < v.cols(); ++j) {
            dst[j] += src[j];
        }
    }
    OpAux aux;
    aux.index = std::move(idx);
    aux.n = rows;
    return x.tape().record(Op::ScatterRows, {x.id()}, std::move(out), std::move(aux));
}

Var gather_cols(Var x, std::shared_ptr<const std::vector<std::size_t>> idx) {
    const Tensor& v = x.value();
    Tensor out(v.rows(), idx->size());
    for (std::size_t k = 0; k < idx->size(); ++k) {
        if ((*idx)[k] >= v.cols()) {
            throw std::out_of_range("gather_cols index out of range");
        }
    }
    for (std::size_t i = 0; i < v.rows(); ++i) {
        for (std::size_t k = 0; k < idx->size(); ++k) {
            out(i, k) = v(i, (*idx)[k]);
        }
    }
    OpAux aux;
    aux.index = std::move(idx);
    aux.n = v.cols();
    return x.tape().record(Op::GatherCols, {x.id()}, std::move(out), std::move(aux));
}

Var gather_cols(Var x, std::vector<std::size_t> idx) { return gather_cols(x, share(std::move(idx))); }

Var scatter_cols(Var x, std::shared_ptr<const std::vector<std::size_t>> idx, std::size_t cols) {
    const Tensor& v = x.value();
    if (v.cols() != idx->size()) {
        throw std::invalid_argument("scatter_cols index count mismatch");
    }
    Tensor out(v.rows(), cols);
    for (std::size_t i = 0; i < v.rows(); ++i) {
        for (std::size_t k = 0; k < idx->size(); ++k) {
            out(i, (*idx)[k]) += v(i, k);
        }
    }
    OpAux aux;
    aux.index = std::move(idx);
    aux.n = cols;
    return x.tape().record(Op::ScatterCols, {x.id()}, std::move(out), std::move(aux));
}

Var transpose(Var x) { return x.tape().record(Op::Transpose, {x.id()}, x.value().transposed()); }

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols of nothing");
    }
    const std::size_t rows = parts[0].value().rows();
    std::size_t cols = 0;
    std::vector<NodeId> ids;
    for (const Var& p : parts) {
        if (p.value().rows() != rows) {
            throw std::invalid_argument("concat_cols row mismatch");
        }
        cols += p.value().cols();
        ids.push_back(p.id());
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < v.cols(); ++j) {
                out(i, offset + j) = v(i, j);
            }
        }
        offset += v.cols();
    }
    return parts[0].tape().record(Op::ConcatCols, std::move(ids), std::move(out));
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
    const Tensor& v = x.value();
    if (rows * cols != v.size()) {
        throw std::invalid_argument("reshape changes element count");
    }
    std::vector<double> vals(v.values().begin(), v.values().end());
    OpAux aux;
    aux.n = v.rows();
    aux.m = v.cols();
    return x.tape().record(Op::Reshape, {x.id()}, Tensor(rows, cols, std::move(vals)), std::move(aux));
}

Var solve(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rows() != av.cols() || av.rows() != bv.rows()) {
        throw std::invalid_argument("solve: incompatible shapes " + shape_string(av) + ", " + shape_string(bv));
    }
    Eigen::PartialPivLU<RowMatrix> lu(av.mat());
    Tensor out(bv.rows(), bv.cols());
    out.mat() = lu.solve(bv.mat());
    return same_tape(a, b).record(Op::Solve, {a.id(), b.id()}, std::move(out));
}

Var nll(Var log_probs, std::shared_ptr<const std::vector<std::size_t>> rows, std::shared_ptr<const std::vector<int>> labels) {
    const Tensor& lp = log_probs.value();
    if (rows->size() != labels->size() || rows->empty()) {
        throw std::invalid_argument("nll: rows and labels must be non-empty and aligned");
    }
    double s = 0.0;
    for (std::size_t k = 0; k < rows->size(); ++k) {
        const int y = (*labels)[k];
        if (y < 0 || static_cast<std::size_t>(y) >= lp.cols() || (*rows)[k] >= lp.rows()) {
            throw std::out_of_range("nll: label or row out of range");
        }
        s -= lp((*rows)[k], static_cast<std::size_t>(y));
    }
    OpAux aux;
    aux.index = std::move(rows);
    aux.labels = std::move(labels);
    const double m = static_cast<double>(aux.index->size());
    return log_probs.tape().record(Op::Nll, {log_probs.id()}, Tensor::scalar(s / m), std::move(aux));
}

Var clamp(Var x, double lo, double hi) {
    OpAux aux;
    aux.a = lo;
    aux.b = hi;
    return x.tape().record(Op::Clamp, {x.id()}, map_values(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
                           std::move(aux));
}

Var arccos_k0(Var x) {
    return x.tape().record(Op::ArcCosK0, {x.id()}, map_values(x.value(), [](double v) {
                               return (kPi - std::acos(std::clamp(v, -1.0, 1.0))) / kPi;
                           }));
}

Var arccos_k1(Var x) {
    return x.tape().record(Op::ArcCosK1, {x.id()}, map_values(x.value(), [](double v) {
                               const double r = std::clamp(v, -1.0, 1.0);
                               return (std::sqrt(1.0 - r * r) + (kPi - std::acos(r)) * r) / kPi;
                           }));
}

Var edge_spmm(Var weights, Var h, std::shared_ptr<const EdgeList> edges) {
    const Tensor& w = weights.value();
    const Tensor& hv = h.value();
    if (w.rows() != edges->src.size() || w.cols() != 1 || hv.rows() != edges->num_nodes) {
        throw std::invalid_argument("edge_spmm shape mismatch");
    }
    Tensor out(hv.rows(), hv.cols());
    for (std::size_t e = 0; e < edges->src.size(); ++e) {
        const std::size_t u = edges->src[e];
        const std::size_t v = edges->dst[e];
        const double we = w(e, 0);
        for (std::size_t j = 0; j < hv.cols(); ++j) {
            out(u, j) += we * hv(v, j);
            out(v, j) += we * hv(u, j);
        }
    }
    OpAux aux;
    aux.edges = std::move(edges);
    return same_tape(weights, h).record(Op::EdgeSpMM, {weights.id(), h.id()}, std::move(out), std::move(aux));
}

Var edge_dot(Var g, Var h, std::shared_ptr<const EdgeList> edges) {
    const Tensor& gv = g.value();
    const Tensor& hv = h.value();
    require_same_shape(gv, hv, "edge_dot");
    Tensor out(edges->src.size(), 1);
    for (std::size_t e = 0; e < edges->src.size(); ++e) {
        const std::size_t u = edges->src[e];
        const std::size_t v = edges->dst[e];
        double s = 0.0;
        for (std::size_t j = 0; j < gv.cols(); ++j) {
            s += gv(u, j) * hv(v, j) + gv(v, j) * hv(u, j);
        }
        out(e, 0) = s;
    }
    OpAux aux;
    aux.edges = std::move(edges);
    return same_tape(g, h).record(Op::EdgeDot, {g.id(), h.id()}, std::move(out), std::move(aux));
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var cross_entropy(Var logits, std::span<const std::size_t> rows, std::span<const int> labels) {
    auto r = std::make_shared<const std::vector<std::size_t>>(rows.begin(), rows.end());
    auto l = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
    return nll(log_softmax(logits), std::move(r), std::move(l));
}

double fd_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& point, double epsilon) {
    Tensor analytic;
    {
        Tape tape;
        Var x = tape.leaf(point);
        Var y = fn(tape, x);
        if (y.value().size() != 1) {
            throw std::invalid_argument("fd_check requires a scalar-valued function");
        }
        const Var wrt[] = {x};
        analytic = tape.grad(y, wrt)[0].value();
    }
    auto eval = [&](const Tensor& p) {
        Tape tape;
        return fn(tape, tape.constant(p)).value().item();
    };
    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + epsilon;
        const double up = eval(probe);
        probe[i] = point[i] - epsilon;
        const double down = eval(probe);
        probe[i] = point[i];
        const double numeric = (up - down) / (2.0 * epsilon);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

}  // namespace graphslim
