#pragma once
// Reduced graphs produced by coreset, coarsening and condensation methods.
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "graphslim/graph.hpp"

namespace graphslim {

struct CondensedMeta {
    std::string method;
    std::string source;
    double rate = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;

    friend bool operator==(const CondensedMeta&, const CondensedMeta&) = default;
};

struct CondensedGraph {
    /// m x d
    Tensor features;
    /// m x m, symmetric with zero diagonal. Absent for structure-free methods.
    std::optional<Tensor> adjacency;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    /// Optional learned targets (m x classes) used instead of `labels` when training on the graph.
    std::optional<Tensor> soft_labels;
    CondensedMeta meta;
    double delta = 0.5;

    std::size_t num_nodes() const { return features.rows(); }
    bool has_structure() const { return adjacency.has_value(); }
    std::vector<std::size_t> class_counts() const;

    /// Throws DataError when an invariant is violated.
    void validate() const;

    friend bool operator==(const CondensedGraph&, const CondensedGraph&) = default;
};

/// Wraps a (sub)graph: all nodes become labelled rows, edges become a dense adjacency.
CondensedGraph condensed_from_graph(const Graph& g, bool keep_structure = true);

/// Entries below `delta` are zeroed. Throws std::invalid_argument on a structure-free graph.
CondensedGraph sparsify(const CondensedGraph& cg, double delta);

/// Bundle files plus meta.json (and soft_labels.csv when present).
void save_condensed(const CondensedGraph& cg, const std::filesystem::path& dir);
CondensedGraph load_condensed(const std::filesystem::path& dir);

}  // namespace graphslim
