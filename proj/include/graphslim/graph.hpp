#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphslim/tensor.hpp"

namespace graphslim {

/// Malformed input data: bad bundle, bad labels, overlapping masks.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Undirected edge stored once with u < v.
struct Edge {
    std::size_t u = 0;
    std::size_t v = 0;
    double weight = 1.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

enum class Setting { Transductive, Inductive };

Setting parse_setting(const std::string& s);
std::string to_string(Setting s);

/// Node-classification graph. Immutable once constructed and validated.
struct Graph {
    std::size_t num_nodes = 0;
    std::size_t num_classes = 0;
    Tensor features;
    std::vector<int> labels;
    /// Sorted, deduplicated, u < v, no self-loops.
    std::vector<Edge> edges;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;

    std::size_t num_features() const { return features.cols(); }
    std::vector<int> labels_of(std::span<const std::size_t> ids) const;
    /// Class histogram over `ids` (size num_classes).
    std::vector<std::size_t> class_counts(std::span<const std::size_t> ids) const;

    /// Throws DataError when an invariant is violated.
    void validate() const;

    friend bool operator==(const Graph&, const Graph&) = default;
};

/// Sorts, symmetrizes (u < v), drops self-loops and merges duplicates keeping the larger weight.
std::vector<Edge> canonical_edges(std::vector<Edge> edges);

/// Raw symmetric adjacency as a sparse matrix (both triangles).
SparseMatrix adjacency_matrix(const Graph& g);
std::vector<double> weighted_degrees(const Graph& g);

/// D^{-1/2} (A [+ I]) D^{-1/2}. Throws DataError on a zero-degree node without self-loops.
SparseOperatorPtr normalize_adjacency(const Graph& g, bool add_self_loops = true);
/// Dense counterpart for small learned adjacencies.
Tensor normalize_dense_adjacency(const Tensor& adjacency, bool add_self_loops = true);

/// Subgraph on `ids` (in the given order); masks are restricted and remapped.
Graph induced_subgraph(const Graph& g, std::span<const std::size_t> ids);

/// Transductive: the graph itself. Inductive: the subgraph induced by the training nodes.
Graph training_graph(const Graph& g, Setting setting);

struct ReductionConfig {
    std::optional<double> rate;
    std::optional<std::size_t> ipc;
    Setting setting = Setting::Transductive;
};

/// Per-class node counts for a reduced graph. Total is max(c, round(rate * training_graph_nodes)),
/// capped by the labelled population, allocated by largest remainder with at least one node per class.
std::vector<std::size_t> reduction_budget(const ReductionConfig& config, std::size_t training_graph_nodes,
                                          std::span<const std::size_t> train_class_counts);

struct SbmParams {
    std::vector<std::size_t> block_sizes;
    double p_intra = 0.1;
    double p_inter = 0.01;
    std::size_t feature_dim = 16;
    double mean_separation = 1.0;
    double noise = 1.0;
    double train_fraction = 0.6;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
};

/// Stochastic block model with Gaussian features; blocks become classes.
Graph sbm_generate(const SbmParams& params);

// ---- bundle I/O -----------------------------------------------------------

/// Reads edges.csv, features.csv, labels.csv, splits.json from `dir`.
Graph load_bundle(const std::filesystem::path& dir);
/// Writes the four bundle files; doubles are printed in shortest round-trip form.
void save_bundle(const Graph& g, const std::filesystem::path& dir);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

/// Builds a graph from Planetoid `.content` / `.cites` files. Split: `per_class` training
/// nodes per class, then `num_val` validation and `num_test` test nodes, drawn with `seed`.
Graph convert_planetoid(const std::filesystem::path& content, const std::filesystem::path& cites,
                        std::uint64_t seed = 0, std::size_t per_class = 20, std::size_t num_val = 500,
                        std::size_t num_test = 1000);

/// Stable content hash (FNV-1a over the canonical bundle text), hex encoded.
std::string graph_hash(const Graph& g);

}  // namespace graphslim
