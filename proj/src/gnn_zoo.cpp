#include "graphslim/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "graphslim/optim.hpp"

namespace graphslim {

namespace {

const std::pair<Arch, const char*> kArchNames[] = {
    {Arch::GCN, "gcn"}, {Arch::SGC, "sgc"}, {Arch::APPNP, "appnp"}, {Arch::Cheby, "cheby"}, {Arch::SAGE, "sage"},
};

const std::pair<Activation, const char*> kActivationNames[] = {
    {Activation::Sigmoid, "sigmoid"},      {Activation::Tanh, "tanh"},   {Activation::Relu, "relu"},
    {Activation::Linear, "linear"},        {Activation::Softplus, "softplus"},
    {Activation::LeakyRelu, "leaky_relu"}, {Activation::Relu6, "relu6"}, {Activation::Elu, "elu"},
};

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::replace(s.begin(), s.end(), '-', '_');
    return s;
}

Var activate(Var h, Activation a) {
    switch (a) {
        case Activation::Sigmoid:
            return sigmoid(h);
        case Activation::Tanh:
            return tanh(h);
        case Activation::Relu:
            return relu(h);
        case Activation::Linear:
            return h;
        case Activation::Softplus:
            return softplus(h);
        case Activation::LeakyRelu:
            return leaky_relu(h);
        case Activation::Relu6:
            return relu6(h);
        case Activation::Elu:
            return elu(h);
    }
    return h;
}

Var add_bias(Var h, Var b) { return add(h, broadcast_rows(b, h.rows())); }

class Dropout {
  public:
    Dropout(double rate, bool active, std::uint64_t seed) : rate_(rate), active_(active && rate > 0.0), rng_(seed) {}

    Var operator()(Var h) {
        if (!active_) {
            return h;
        }
        auto mask = std::make_shared<Tensor>(h.rows(), h.cols());
        std::bernoulli_distribution keep(1.0 - rate_);
        const double scale = 1.0 / (1.0 - rate_);
        for (std::size_t i = 0; i < mask->size(); ++i) {
            (*mask)[i] = keep(rng_) ? scale : 0.0;
        }
        return mul_const(h, std::shared_ptr<const Tensor>(std::move(mask)));
    }

  private:
    double rate_;
    bool active_;
    std::mt19937_64 rng_;
};

std::vector<std::size_t> layer_dims(const ModelSpec& spec, std::size_t in_dim, std::size_t out_dim) {
    std::vector<std::size_t> dims{in_dim};
    for (std::size_t l = 1; l < spec.layers; ++l) {
        dims.push_back(spec.hidden);
    }
    dims.push_back(out_dim);
    return dims;
}

// Weights per layer in parameter order (bias last).
std::size_t weights_per_layer(const ModelSpec& spec) {
    switch (spec.arch) {
        case Arch::Cheby:
            return spec.k + 1;
        case Arch::SAGE:
            return 2;
        default:
            return 1;
    }
}

SparseMatrix normalize_raw(const SparseMatrix& raw, Norm norm) {
    const auto n = raw.rows();
    SparseMatrix a = raw;
    if (norm == Norm::GcnSym) {
        SparseMatrix eye(n, n);
        eye.setIdentity();
        a = a + eye;
    }
    Eigen::VectorXd deg = a * Eigen::VectorXd::Ones(n);
    Eigen::VectorXd left(n);
    Eigen::VectorXd right(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = deg(i);
        if (d <= 0.0) {
            left(i) = right(i) = 0.0;
        } else if (norm == Norm::Mean) {
            left(i) = 1.0 / d;
            right(i) = 1.0;
        } else {
            left(i) = right(i) = 1.0 / std::sqrt(d);
        }
    }
    SparseMatrix out = left.asDiagonal() * a * right.asDiagonal();
    out.prune(0.0);
    out.makeCompressed();
    return out;
}

double power_lambda_max(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply, Eigen::Index n) {
    if (n == 0) {
        return 0.0;
    }
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
    }
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < 10000; ++it) {
        Eigen::VectorXd w = apply(v);
        const double next = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) {
            return 0.0;
        }
        v = w / norm;
        if (std::abs(next - lambda) < 1e-13 * std::max(1.0, std::abs(next))) {
            return next;
        }
        lambda = next;
    }
    return lambda;
}

double laplacian_lambda(const SparseMatrix& sym) {
    if (sym.rows() <= 400) {
        RowMatrix lap = RowMatrix::Identity(sym.rows(), sym.rows()) - RowMatrix(sym);
        Eigen::SelfAdjointEigenSolver<RowMatrix> es(lap, Eigen::EigenvaluesOnly);
        return es.eigenvalues().maxCoeff();
    }
    return power_lambda_max([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v - sym * v; }, sym.rows());
}

}  // namespace

Arch parse_arch(const std::string& s) {
    const std::string key = lower(s);
    for (auto [a, name] : kArchNames) {
        if (key == name) {
            return a;
        }
    }
    throw std::invalid_argument("unknown architecture '" + s + "'");
}

std::string to_string(Arch a) {
    for (auto [x, name] : kArchNames) {
        if (x == a) {
            return name;
        }
    }
    return "?";
}

Activation parse_activation(const std::string& s) {
    const std::string key = lower(s);
    for (auto [a, name] : kActivationNames) {
        if (key == name) {
            return a;
        }
    }
    throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
    for (auto [x, name] : kActivationNames) {
        if (x == a) {
            return name;
        }
    }
    return "?";
}

void ModelSpec::validate() const {
    if (layers == 0) {
        throw std::invalid_argument("model needs at least one layer");
    }
    if (hidden == 0) {
        throw std::invalid_argument("hidden units must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("dropout must lie in [0, 1)");
    }
    if ((arch == Arch::APPNP || arch == Arch::Cheby) && k == 0) {
        throw std::invalid_argument("K must be at least 1");
    }
    if (arch == Arch::APPNP && !(alpha > 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("alpha must lie in (0, 1]");
    }
}

std::string ModelSpec::describe() const {
    std::ostringstream os;
    os << to_string(arch) << " layers=" << layers << " hidden=" << hidden << " act=" << to_string(activation);
    if (arch == Arch::SGC || arch == Arch::APPNP || arch == Arch::Cheby) {
        os << " k=" << k;
    }
    if (arch == Arch::APPNP) {
        os << " alpha=" << alpha;
    }
    return os.str();
}

std::size_t Params::count() const {
    std::size_t n = 0;
    for (const Tensor& t : values) {
        n += t.size();
    }
    return n;
}

Params init_params(const ModelSpec& spec, std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
    spec.validate();
    if (in_dim == 0 || out_dim == 0) {
        throw std::invalid_argument("init_params: dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    const auto dims = layer_dims(spec, in_dim, out_dim);
    const std::size_t per_layer = weights_per_layer(spec);
    Params p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t w = 0; w < per_layer; ++w) {
            Tensor t(dims[l], dims[l + 1]);
            for (std::size_t i = 0; i < t.size(); ++i) {
                t[i] = u(rng);
            }
            p.names.push_back("layer" + std::to_string(l) + ".weight" + (per_layer > 1 ? std::to_string(w) : ""));
            p.values.push_back(std::move(t));
        }
        p.names.push_back("layer" + std::to_string(l) + ".bias");
        p.values.emplace_back(1, dims[l + 1]);
    }
    return p;
}

std::vector<Var> bind_params(Tape& tape, const Params& params, bool requires_grad) {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const Tensor& t : params.values) {
        out.push_back(tape.leaf(t, requires_grad));
    }
    return out;
}

// ---- graph operators --------------------------------------------------------

struct GraphOperator::State {
    enum class Kind { Sparse, Dense, Edges } kind = Kind::Sparse;
    std::size_t n = 0;
    SparseMatrix raw;
    std::map<Norm, SparseOperatorPtr> normalized;
    Var adjacency;
    Var weights;
    std::shared_ptr<const EdgeList> edges;
    // Tape nodes reused across propagations for differentiable kinds.
    std::map<Norm, Var> dense_cache;
    std::map<Norm, Var> scale_cache;
    std::optional<double> lambda;
};

GraphOperator GraphOperator::sparse(const SparseMatrix& raw_adjacency) {
    if (raw_adjacency.rows() != raw_adjacency.cols()) {
        throw std::invalid_argument("adjacency must be square");
    }
    GraphOperator op;
    op.state_ = std::make_shared<State>();
    op.state_->n = static_cast<std::size_t>(raw_adjacency.rows());
    op.state_->raw = raw_adjacency;
    for (Norm norm : {Norm::GcnSym, Norm::Sym, Norm::Mean}) {
        op.state_->normalized[norm] = make_sparse_operator(normalize_raw(raw_adjacency, norm));
    }
    return op;
}

GraphOperator GraphOperator::from_graph(const Graph& g) { return sparse(adjacency_matrix(g)); }

GraphOperator GraphOperator::identity(std::size_t n) { return sparse(SparseMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))); }

GraphOperator GraphOperator::dense_constant(const Tensor& raw_adjacency) {
    if (raw_adjacency.rows() != raw_adjacency.cols()) {
        throw std::invalid_argument("adjacency must be square");
    }
    return sparse(sparse_from_dense(raw_adjacency)->matrix);
}

GraphOperator GraphOperator::dense(Var raw_adjacency) {
    if (raw_adjacency.rows() != raw_adjacency.cols()) {
        throw std::invalid_argument("adjacency must be square");
    }
    GraphOperator op;
    op.state_ = std::make_shared<State>();
    op.state_->kind = State::Kind::Dense;
    op.state_->n = raw_adjacency.rows();
    op.state_->adjacency = raw_adjacency;
    return op;
}

GraphOperator GraphOperator::restrict_to(std::span<const std::size_t> ids) const {
    if (state_->kind != State::Kind::Sparse) {
        throw std::invalid_argument("restrict_to needs a constant operator");
    }
    const auto n = static_cast<Eigen::Index>(state_->n);
    const auto k = static_cast<Eigen::Index>(ids.size());
    std::vector<Eigen::Triplet<double>> trips;
    for (Eigen::Index r = 0; r < k; ++r) {
        if (ids[static_cast<std::size_t>(r)] >= state_->n) {
            throw std::out_of_range("restrict_to: node id out of range");
        }
        trips.emplace_back(r, static_cast<Eigen::Index>(ids[static_cast<std::size_t>(r)]), 1.0);
    }
    SparseMatrix pick(k, n);
    pick.setFromTriplets(trips.begin(), trips.end());
    GraphOperator op;
    op.state_ = std::make_shared<State>();
    op.state_->n = ids.size();
    op.state_->raw = SparseMatrix(pick * state_->raw * pick.transpose());
    for (const auto& [norm, m] : state_->normalized) {
        op.state_->normalized[norm] = make_sparse_operator(SparseMatrix(pick * m->matrix * pick.transpose()));
    }
    return op;
}

GraphOperator GraphOperator::weighted_edges(Var weights, std::shared_ptr<const EdgeList> edges) {
    if (weights.cols() != 1 || weights.rows() != edges->src.size() || edges->src.size() != edges->dst.size()) {
        throw std::invalid_argument("edge weights must be an |E| x 1 column aligned with the edge list");
    }
    GraphOperator op;
    op.state_ = std::make_shared<State>();
    op.state_->kind = State::Kind::Edges;
    op.state_->n = edges->num_nodes;
    op.state_->weights = weights;
    op.state_->edges = std::move(edges);
    return op;
}

std::size_t GraphOperator::num_nodes() const { return state_ ? state_->n : 0; }

bool GraphOperator::differentiable() const { return state_ && state_->kind != State::Kind::Sparse; }

Var GraphOperator::propagate(Var h, Norm norm) const {
    if (!state_) {
        throw std::logic_error("empty graph operator");
    }
    State& s = *state_;
    if (h.rows() != s.n) {
        throw std::invalid_argument("propagate: operator has " + std::to_string(s.n) + " nodes, input has " +
                                    std::to_string(h.rows()) + " rows");
    }
    switch (s.kind) {
        case State::Kind::Sparse:
            return spmm(s.normalized.at(norm), h);
        case State::Kind::Dense: {
            auto it = s.dense_cache.find(norm);
            if (it == s.dense_cache.end()) {
                Tape& tape = s.adjacency.tape();
                Var a = s.adjacency;
                if (norm == Norm::GcnSym) {
                    a = add(a, tape.constant(Tensor::identity(s.n)));
                }
                Var deg = clamp(row_sum(a), 1e-12, std::numeric_limits<double>::infinity());
                Var normalized;
                if (norm == Norm::Mean) {
                    normalized = div(a, broadcast_cols(deg, s.n));
                } else {
                    Var inv = pow(deg, -0.5);
                    normalized = mul(mul(a, broadcast_cols(inv, s.n)), broadcast_rows(transpose(inv), s.n));
                }
                it = s.dense_cache.emplace(norm, normalized).first;
            }
            return matmul(it->second, h);
        }
        case State::Kind::Edges: {
            auto it = s.scale_cache.find(norm);
            if (it == s.scale_cache.end()) {
                Tape& tape = s.weights.tape();
                Var deg = edge_spmm(s.weights, tape.constant(Tensor(s.n, 1, 1.0)), s.edges);
                if (norm == Norm::GcnSym) {
                    deg = affine(deg, 1.0, 1.0);
                }
                deg = clamp(deg, 1e-12, std::numeric_limits<double>::infinity());
                it = s.scale_cache.emplace(norm, norm == Norm::Mean ? pow(deg, -1.0) : pow(deg, -0.5)).first;
            }
            Var scale = broadcast_cols(it->second, h.cols());
            if (norm == Norm::Mean) {
                return mul(edge_spmm(s.weights, h, s.edges), scale);
            }
            Var hs = mul(h, scale);
            Var agg = edge_spmm(s.weights, hs, s.edges);
            if (norm == Norm::GcnSym) {
                agg = add(agg, hs);
            }
            return mul(agg, scale);
        }
    }
    throw std::logic_error("unreachable");
}

double GraphOperator::laplacian_lambda_max() const {
    if (!state_) {
        throw std::logic_error("empty graph operator");
    }
    State& s = *state_;
    if (s.lambda) {
        return *s.lambda;
    }
    SparseMatrix raw;
    if (s.kind == State::Kind::Sparse) {
        raw = s.raw;
    } else if (s.kind == State::Kind::Dense) {
        raw = sparse_from_dense(s.adjacency.value())->matrix;
    } else {
        std::vector<Eigen::Triplet<double>> trip;
        const Tensor& w = s.weights.value();
        for (std::size_t e = 0; e < s.edges->src.size(); ++e) {
            const auto u = static_cast<Eigen::Index>(s.edges->src[e]);
            const auto v = static_cast<Eigen::Index>(s.edges->dst[e]);
            trip.emplace_back(u, v, w(e, 0));
            trip.emplace_back(v, u, w(e, 0));
        }
        raw.resize(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.n));
        raw.setFromTriplets(trip.begin(), trip.end());
    }
    double lambda = laplacian_lambda(normalize_raw(raw, Norm::Sym));
    // An edgeless graph has L = I.
    if (!(lambda > 1e-9)) {
        lambda = 1.0;
    }
    s.lambda = lambda;
    return lambda;
}

// ---- node inputs ------------------------------------------------------------

NodeInput NodeInput::constant(const Tensor& x) {
    NodeInput in;
    std::size_t nnz = 0;
    for (double v : x.values()) {
        nnz += v != 0.0 ? 1 : 0;
    }
    if (x.size() > 0 && nnz * 4 < x.size()) {
        in.sparse_ = sparse_from_dense(x);
    } else {
        in.dense_ = std::make_shared<const Tensor>(x);
    }
    return in;
}

NodeInput NodeInput::variable(Var x) {
    NodeInput in;
    in.var_ = x;
    return in;
}

std::size_t NodeInput::rows() const {
    if (var_) {
        return var_->rows();
    }
    return sparse_ ? sparse_->rows() : (dense_ ? dense_->rows() : 0);
}

std::size_t NodeInput::cols() const {
    if (var_) {
        return var_->cols();
    }
    return sparse_ ? sparse_->cols() : (dense_ ? dense_->cols() : 0);
}

Var NodeInput::project(Var w) const {
    if (var_) {
        return matmul(*var_, w);
    }
    if (sparse_) {
        return spmm(sparse_, w);
    }
    if (!dense_) {
        throw std::logic_error("empty node input");
    }
    return matmul(w.tape().leaf(*dense_, false), w);
}

// ---- forward ------------------------------------------------------------------

Var forward(const ModelSpec& spec, std::span<const Var> params, const GraphOperator& graph, const NodeInput& x,
            const ForwardOptions& options) {
    spec.validate();
    const std::size_t per_layer = weights_per_layer(spec) + 1;
    if (params.size() != spec.layers * per_layer) {
        throw std::invalid_argument("forward: expected " + std::to_string(spec.layers * per_layer) +
                                    " parameter tensors, got " + std::to_string(params.size()));
    }
    if (x.rows() != graph.num_nodes()) {
        throw std::invalid_argument("forward: features have " + std::to_string(x.rows()) + " rows, graph has " +
                                    std::to_string(graph.num_nodes()) + " nodes");
    }
    if (x.cols() != params[0].rows()) {
        throw std::invalid_argument("forward: feature width " + std::to_string(x.cols()) +
                                    " does not match first layer input " + std::to_string(params[0].rows()));
    }
    Dropout dropout(spec.dropout, options.train, options.dropout_seed);
    const std::size_t last = spec.layers - 1;
    auto layer = [&](std::size_t l, std::size_t w) { return params[l * per_layer + w]; };
    auto bias = [&](std::size_t l) { return params[l * per_layer + per_layer - 1]; };
    // Linear map of the layer input; the first layer reads the node features directly.
    auto lin = [&](std::size_t l, std::size_t w, const std::optional<Var>& h) {
        return h ? matmul(*h, layer(l, w)) : x.project(layer(l, w));
    };

    std::optional<Var> h;
    switch (spec.arch) {
        case Arch::GCN:
            for (std::size_t l = 0; l < spec.layers; ++l) {
                Var z = add_bias(graph.propagate(lin(l, 0, h), Norm::GcnSym), bias(l));
                h = l == last ? z : dropout(activate(z, spec.activation));
            }
            return *h;
        case Arch::SGC:
            // (A^K X) W + b == A^K (X W) + b; propagating after the first projection keeps X sparse.
            for (std::size_t l = 0; l < spec.layers; ++l) {
                Var z = lin(l, 0, h);
                if (l == 0) {
                    for (std::size_t k = 0; k < spec.k; ++k) {
                        z = graph.propagate(z, Norm::GcnSym);
                    }
                }
                h = add_bias(z, bias(l));
            }
            return *h;
        case Arch::APPNP: {
            for (std::size_t l = 0; l < spec.layers; ++l) {
                Var z = add_bias(lin(l, 0, h), bias(l));
                h = l == last ? z : dropout(activate(z, spec.activation));
            }
            const Var z0 = *h;
            Var out = z0;
            const Var teleport = affine(z0, spec.alpha);
            for (std::size_t k = 0; k < spec.k; ++k) {
                out = add(affine(graph.propagate(out, Norm::GcnSym), 1.0 - spec.alpha), teleport);
            }
            return out;
        }
        case Arch::Cheby: {
            // Clenshaw recurrence for sum_k T_k(L~) Z_k with L~ = 2L/lambda - I, L = I - S.
            const double lambda = graph.laplacian_lambda_max();
            auto scaled_laplacian = [&](Var v) {
                return sub(affine(v, 2.0 / lambda - 1.0), affine(graph.propagate(v, Norm::Sym), 2.0 / lambda));
            };
            for (std::size_t l = 0; l < spec.layers; ++l) {
                std::vector<Var> zs;
                for (std::size_t k = 0; k <= spec.k; ++k) {
                    zs.push_back(lin(l, k, h));
                }
                std::optional<Var> b1;
                std::optional<Var> b2;
                for (std::size_t k = spec.k; k >= 1; --k) {
                    Var b = zs[k];
                    if (b1) {
                        b = add(b, affine(scaled_laplacian(*b1), 2.0));
                    }
                    if (b2) {
                        b = sub(b, *b2);
                    }
                    b2 = b1;
                    b1 = b;
                }
                Var z = add(zs[0], scaled_laplacian(*b1));
                if (b2) {
                    z = sub(z, *b2);
                }
                z = add_bias(z, bias(l));
                h = l == last ? z : dropout(activate(z, spec.activation));
            }
            return *h;
        }
        case Arch::SAGE:
            for (std::size_t l = 0; l < spec.layers; ++l) {
                Var z = add(lin(l, 0, h), graph.propagate(lin(l, 1, h), Norm::Mean));
                z = add_bias(z, bias(l));
                h = l == last ? z : dropout(activate(z, spec.activation));
            }
            return *h;
    }
    throw std::logic_error("unreachable");
}

Tensor predict(const ModelSpec& spec, const Params& params, const GraphOperator& graph, const NodeInput& x) {
    Tape tape;
    auto vars = bind_params(tape, params, false);
    return forward(spec, vars, graph, x).value();
}

// ---- training -------------------------------------------------------------------

Var classification_loss(Var logits, std::span<const std::size_t> rows, std::span<const int> labels,
                        const std::shared_ptr<const Tensor>& soft_labels) {
    if (!soft_labels) {
        return cross_entropy(logits, rows, labels);
    }
    if (soft_labels->rows() != rows.size() || soft_labels->cols() != logits.cols()) {
        throw std::invalid_argument("soft labels must be rows x classes");
    }
    Var lp = gather_rows(log_softmax(logits), std::vector<std::size_t>(rows.begin(), rows.end()));
    return affine(sum(mul_const(lp, soft_labels)), -1.0 / static_cast<double>(rows.size()));
}

TrainData train_data(const Graph& g, std::optional<GraphOperator> adjacency_override) {
    TrainData d;
    d.graph = adjacency_override ? *adjacency_override : GraphOperator::from_graph(g);
    d.features = NodeInput::constant(g.features);
    d.rows = g.train;
    d.labels = g.labels_of(g.train);
    d.num_classes = g.num_classes;
    if (!g.val.empty()) {
        d.validation = TrainData::Eval{d.graph, d.features, g.val, g.labels_of(g.val)};
    }
    return d;
}

TrainResult train(const ModelSpec& spec, const TrainData& data, const TrainConfig& config, std::uint64_t seed) {
    if (data.rows.empty()) {
        throw std::invalid_argument("train: no labelled rows");
    }
    if (!data.soft_labels && data.rows.size() != data.labels.size()) {
        throw std::invalid_argument("train: rows and labels differ in length");
    }
    std::size_t classes = data.num_classes;
    if (data.soft_labels) {
        classes = std::max(classes, data.soft_labels->cols());
    }
    for (int y : data.labels) {
        classes = std::max(classes, static_cast<std::size_t>(y) + 1);
    }

    TrainResult result;
    result.params = init_params(spec, data.features.cols(), classes, mix_seed(seed, 0));
    AdamState adam(AdamHyper{.lr = config.lr, .weight_decay = config.weight_decay});

    auto validate = [&]() {
        if (!data.validation) {
            return 0.0;
        }
        const auto& v = *data.validation;
        return accuracy(predict(spec, result.params, v.graph, v.features), v.rows, v.labels);
    };
    auto snapshot = [&](std::size_t epoch) {
        const double acc = validate();
        result.best_val_acc = std::max(result.best_val_acc, acc);
        result.trajectory.snapshots.push_back({epoch, result.params, acc});
    };

    if (config.snapshot_every > 0) {
        snapshot(0);
    }
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<Tensor> grads;
        try {
            Tape tape;
            auto vars = bind_params(tape, result.params);
            Var logits = forward(spec, vars, data.graph, data.features,
                                 {.train = true, .dropout_seed = mix_seed(seed, epoch)});
            Var loss = classification_loss(logits, data.rows, data.labels, data.soft_labels);
            auto g = backward(tape, loss);
            for (const Var& v : vars) {
                grads.push_back(std::move(g.at(v.id())));
            }
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        adam_step(result.params.values, grads, adam);
        for (const Tensor& p : result.params.values) {
            if (!p.all_finite()) {
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": non-finite parameters");
            }
        }
        if (config.snapshot_every > 0 && (epoch % config.snapshot_every == 0 || epoch == config.epochs)) {
            snapshot(epoch);
        }
    }
    if (config.snapshot_every == 0 && data.validation) {
        result.best_val_acc = validate();
    }
    return result;
}

TrainResult train(const ModelSpec& spec, const Graph& g, std::optional<GraphOperator> adjacency_override,
                  const TrainConfig& config, std::uint64_t seed) {
    return train(spec, train_data(g, std::move(adjacency_override)), config, seed);
}

double accuracy(const Tensor& logits, std::span<const std::size_t> rows, std::span<const int> labels) {
    if (rows.empty()) {
        throw std::invalid_argument("accuracy: empty mask");
    }
    if (rows.size() != labels.size()) {
        throw std::invalid_argument("accuracy: rows and labels differ in length");
    }
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        auto r = logits.row(rows[k]);
        const auto best = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
        hits += best == labels[k] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

double evaluate(const ModelSpec& spec, const Params& params, const Graph& g, std::span<const std::size_t> mask) {
    if (mask.empty()) {
        throw std::invalid_argument("evaluate: empty mask");
    }
    Tensor logits = predict(spec, params, GraphOperator::from_graph(g), NodeInput::constant(g.features));
    return accuracy(logits, mask, g.labels_of(mask));
}

}  // namespace graphslim
