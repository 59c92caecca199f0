#pragma once
// Graph property metrics and the original-vs-reduced property report.
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphslim/condensed.hpp"

namespace graphslim {

/// Fraction of node pairs joined by an edge of weight >= delta (any positive weight when delta = 0).
double density(const Graph& g, double delta = 0.0);
double density(const CondensedGraph& cg, double delta = 0.0);

/// Largest eigenvalue of D - A by power iteration (relative residual 1e-6, at most 10000 iterations).
/// Throws NumericalError with the achieved residual when it does not converge.
double max_laplacian_eig(const Graph& g);
double max_laplacian_eig(const CondensedGraph& cg, double delta = 0.0);

/// Davies-Bouldin index with Euclidean distances over the classes present in `labels`.
double dbi(const Tensor& features, std::span<const int> labels);
/// dbi(A_hat^2 X, labels).
double dbi_agg(const Graph& g);
double dbi_agg(const CondensedGraph& cg, double delta = 0.0);

/// Weighted edge homophily over edges with weight >= delta.
double homophily(const Graph& g, double delta = 0.0);
double homophily(const CondensedGraph& cg, double delta = 0.0);

/// Sample Pearson correlation. Throws std::invalid_argument on zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);
/// Pearson correlation of average ranks.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct PropertyVector {
    std::optional<double> density;
    std::optional<double> max_eig;
    std::optional<double> dbi;
    std::optional<double> dbi_agg;
    std::optional<double> homophily;
    /// Metric name -> error message for cells that failed.
    std::map<std::string, std::string> errors;
};

inline const char* const kMetricNames[] = {"density", "max_eig", "dbi", "dbi_agg", "homophily"};

std::optional<double> metric_value(const PropertyVector& p, const std::string& name);

PropertyVector properties(const Graph& g);
/// Structure-free graphs report DBI only.
PropertyVector properties(const CondensedGraph& cg, double delta = 0.0);

struct PropertyPair {
    std::string name;
    PropertyVector original;
    PropertyVector condensed;
};

struct PropertyReport {
    std::vector<PropertyPair> pairs;
    /// Pearson correlation across pairs per metric; absent with fewer than two complete pairs.
    std::map<std::string, std::optional<double>> correlation;
    std::map<std::string, std::string> correlation_errors;
};

struct NamedPair {
    std::string name;
    const Graph* original;
    const CondensedGraph* condensed;
};

PropertyReport property_report(std::span<const NamedPair> pairs, double delta = 0.0);
PropertyReport property_report(std::vector<PropertyPair> pairs);
/// metric x (pair original / condensed) table plus a Corr. row per metric.
std::string property_report_csv(const PropertyReport& report);

}  // namespace graphslim
