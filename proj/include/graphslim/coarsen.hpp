#pragma once
// Coarsening baselines: class-wise averaging and VNG.
#include <cstdint>
#include <span>
#include <vector>

#include "graphslim/condensed.hpp"

namespace graphslim {

/// Hard mapping of training nodes to supernodes. Supernodes are numbered class by class.
struct Assignment {
    /// Training-graph node ids, one per row of P.
    std::vector<std::size_t> nodes;
    /// Supernode of each entry of `nodes`.
    std::vector<std::size_t> group;
    std::size_t num_groups = 0;
    /// Class of each supernode.
    std::vector<int> group_label;
};

/// Weighted Lloyd k-means with k-means++ seeding. Returns a cluster per row; every cluster is non-empty.
/// Clusters are renumbered by their smallest member row.
std::vector<std::size_t> kmeans(const Tensor& points, std::span<const double> weights, std::size_t k,
                                std::uint64_t seed, std::size_t iterations = 50);

/// Per-class k-means of the training nodes on `points` (weighted by `weights` when non-empty).
Assignment assign_per_class(const Graph& g, std::span<const std::size_t> budget, const Tensor& points,
                            std::span<const double> weights, std::uint64_t seed);

/// Supernode features are group means; A' = group-pair edge density (P^T A P divided by group sizes),
/// zero diagonal.
CondensedGraph coarsen_averaging(const Graph& g, std::span<const std::size_t> budget, std::uint64_t seed);

struct VngFit {
    Tensor features;
    /// Least-squares solution before symmetrization and clipping.
    Tensor raw_adjacency;
    /// || P A' X' - (A_hat X)[nodes] ||_F for the raw solution.
    double residual = 0.0;
    bool ridge_used = false;
};

/// Fits supernode features and adjacency for a fixed assignment.
VngFit vng_fit(const Graph& g, const Assignment& a);

/// Weighted k-means on A_hat X, then the least-squares adjacency fit, symmetrized and clipped to [0, 1].
CondensedGraph coarsen_vng(const Graph& g, std::span<const std::size_t> budget, std::uint64_t seed);

}  // namespace graphslim
