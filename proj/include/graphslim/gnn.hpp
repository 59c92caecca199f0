#pragma once
// Message-passing models: GCN, SGC, APPNP, Cheby and SAGE.
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphslim/autodiff.hpp"
#include "graphslim/graph.hpp"

namespace graphslim {

enum class Arch { GCN, SGC, APPNP, Cheby, SAGE };
enum class Activation { Sigmoid, Tanh, Relu, Linear, Softplus, LeakyRelu, Relu6, Elu };

Arch parse_arch(const std::string& s);
std::string to_string(Arch a);
Activation parse_activation(const std::string& s);
std::string to_string(Activation a);

struct ModelSpec {
    Arch arch = Arch::GCN;
    std::size_t layers = 2;
    std::size_t hidden = 256;
    double dropout = 0.5;
    Activation activation = Activation::Relu;
    /// Propagation steps (SGC, APPNP) or polynomial order (Cheby).
    std::size_t k = 2;
    /// Teleport coefficient for APPNP.
    double alpha = 0.1;

    void validate() const;
    std::string describe() const;
};

struct Params {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    std::size_t size() const { return values.size(); }
    std::size_t count() const;
    friend bool operator==(const Params&, const Params&) = default;
};

/// Glorot-uniform weights and zero biases, seeded.
Params init_params(const ModelSpec& spec, std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

/// Binds every parameter to a new leaf on `tape`.
std::vector<Var> bind_params(Tape& tape, const Params& params, bool requires_grad = true);

enum class Norm {
    /// D^{-1/2}(A + I)D^{-1/2}
    GcnSym,
    /// D^{-1/2} A D^{-1/2}, isolated nodes map to zero
    Sym,
    /// D^{-1} A, isolated nodes map to zero
    Mean,
};

/// The adjacency a forward pass propagates over: a constant sparse matrix, a dense
/// tape node, or a weighted edge list whose weights are a tape node. Raw adjacencies
/// are normalized here, so callers always pass unnormalized symmetric weights.
class GraphOperator {
  public:
    static GraphOperator from_graph(const Graph& g);
    static GraphOperator sparse(const SparseMatrix& raw_adjacency);
    static GraphOperator identity(std::size_t n);
    /// Constant dense adjacency, stored sparse.
    static GraphOperator dense_constant(const Tensor& raw_adjacency);
    /// Differentiable dense adjacency (n x n tape node).
    static GraphOperator dense(Var raw_adjacency);
    /// Differentiable edge weights (|E| x 1 tape node) over `edges`.
    static GraphOperator weighted_edges(Var weights, std::shared_ptr<const EdgeList> edges);

    std::size_t num_nodes() const;
    bool differentiable() const;
    Var propagate(Var h, Norm norm) const;
    /// Largest eigenvalue of I - D^{-1/2} A D^{-1/2} at the current values (exact for small graphs,
    /// power iteration otherwise). Treated as a constant by differentiable operators.
    double laplacian_lambda_max() const;
    /// Rows and columns `ids` of the normalized matrices of a constant operator. Outputs of a
    /// k-layer model at a node match the full graph when `ids` contains its k-hop neighbourhood.
    GraphOperator restrict_to(std::span<const std::size_t> ids) const;

  private:
    struct State;
    std::shared_ptr<State> state_;
};

/// Node features: a tape node, or a constant held sparse or dense.
class NodeInput {
  public:
    NodeInput() = default;
    /// Chooses sparse storage when fewer than a quarter of the entries are nonzero.
    static NodeInput constant(const Tensor& x);
    static NodeInput variable(Var x);

    std::size_t rows() const;
    std::size_t cols() const;
    /// X W
    Var project(Var w) const;

  private:
    std::optional<Var> var_;
    SparseOperatorPtr sparse_;
    std::shared_ptr<const Tensor> dense_;
};

struct ForwardOptions {
    bool train = false;
    std::uint64_t dropout_seed = 0;
};

/// Logits for every node.
Var forward(const ModelSpec& spec, std::span<const Var> params, const GraphOperator& graph, const NodeInput& x,
            const ForwardOptions& options = {});

/// Eval-mode logits as plain values.
Tensor predict(const ModelSpec& spec, const Params& params, const GraphOperator& graph, const NodeInput& x);

struct Snapshot {
    std::size_t epoch = 0;
    Params params;
    double val_acc = 0.0;
};

struct Trajectory {
    std::vector<Snapshot> snapshots;
};

struct TrainConfig {
    double lr = 0.01;
    double weight_decay = 5e-4;
    std::size_t epochs = 300;
    /// 0 disables snapshots.
    std::size_t snapshot_every = 0;
};

/// Labelled rows to fit, plus an optional validation set evaluated on a possibly different graph.
struct TrainData {
    GraphOperator graph;
    NodeInput features;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    /// Soft targets aligned with `rows` (rows x classes). Replaces `labels` in the loss when set.
    std::shared_ptr<const Tensor> soft_labels;
    std::size_t num_classes = 0;

    struct Eval {
        GraphOperator graph;
        NodeInput features;
        std::vector<std::size_t> rows;
        std::vector<int> labels;
    };
    std::optional<Eval> validation;
};

TrainData train_data(const Graph& g, std::optional<GraphOperator> adjacency_override = std::nullopt);

struct TrainResult {
    Params params;
    Trajectory trajectory;
    double best_val_acc = 0.0;
};

/// Full-batch Adam with cross-entropy. Throws NumericalError naming the epoch on divergence.
TrainResult train(const ModelSpec& spec, const TrainData& data, const TrainConfig& config, std::uint64_t seed);
TrainResult train(const ModelSpec& spec, const Graph& g, std::optional<GraphOperator> adjacency_override,
                  const TrainConfig& config, std::uint64_t seed);

/// Fraction of `rows` whose argmax (ties to the lowest class) matches the label.
double accuracy(const Tensor& logits, std::span<const std::size_t> rows, std::span<const int> labels);
double evaluate(const ModelSpec& spec, const Params& params, const Graph& g, std::span<const std::size_t> mask);

/// Training loss on `rows` for either hard or soft targets.
Var classification_loss(Var logits, std::span<const std::size_t> rows, std::span<const int> labels,
                        const std::shared_ptr<const Tensor>& soft_labels);

}  // namespace graphslim
