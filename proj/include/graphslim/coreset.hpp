#pragma once
// Per-class node selection baselines.
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graphslim/graph.hpp"

namespace graphslim {

struct Selection {
    /// Chosen training nodes, grouped by class in selection order.
    std::vector<std::size_t> ids;
    std::vector<std::size_t> per_class;
    std::string strategy;
    std::uint64_t seed = 0;

    friend bool operator==(const Selection&, const Selection&) = default;
};

enum class Centrality { Degree, PageRank };

/// Uniform without replacement within each class.
Selection select_random(const Graph& g, std::span<const std::size_t> budget, std::uint64_t seed);
/// Greedy farthest-first per class, starting from the node nearest the class mean.
Selection select_kcenter(const Graph& g, std::span<const std::size_t> budget, const Tensor& embedding,
                         std::uint64_t seed = 0);
/// Greedy herding per class: each step adds the node that brings the running sum closest to (t+1) * mean.
Selection select_herding(const Graph& g, std::span<const std::size_t> budget, const Tensor& embedding,
                         std::uint64_t seed = 0);
/// Top training nodes per class by degree or PageRank.
Selection select_centrality(const Graph& g, std::span<const std::size_t> budget, Centrality kind);

/// Parameter-free embedding A_hat^2 X.
Tensor propagated_features(const Graph& g, std::size_t hops = 2);
/// PageRank with damping 0.85 and 100 power iterations; dangling mass spread uniformly.
std::vector<double> pagerank(const Graph& g, double damping = 0.85, std::size_t iterations = 100);

/// Subgraph on the selected nodes; every node becomes a training node.
Graph induce_subgraph(const Graph& g, const Selection& s);

std::string selection_to_json(const Selection& s);
Selection selection_from_json(const std::string& text);

}  // namespace graphslim
