#include "graphslim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace graphslim {

namespace {

// Undirected weighted edges of a condensed adjacency, weight >= delta (> 0 when delta = 0).
std::vector<Edge> condensed_edges(const CondensedGraph& cg, double delta) {
    if (!cg.adjacency) {
        throw std::invalid_argument("condensed graph has no structure");
    }
    std::vector<Edge> out;
    const Tensor& a = *cg.adjacency;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            if (a(i, j) > 0.0 && a(i, j) >= delta) {
                out.push_back({i, j, a(i, j)});
            }
        }
    }
    return out;
}

Graph as_graph(const CondensedGraph& cg, double delta) {
    Graph g;
    g.num_nodes = cg.num_nodes();
    g.num_classes = cg.num_classes;
    g.features = cg.features;
    g.labels = cg.labels;
    g.edges = condensed_edges(cg, delta);
    return g;
}

bool qualifies(const Edge& e, double delta) { return e.weight > 0.0 && e.weight >= delta; }

double laplacian_power(std::size_t n, const std::vector<Edge>& edges) {
    if (n == 0) {
        return 0.0;
    }
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd deg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const Edge& e : edges) {
        const auto u = static_cast<Eigen::Index>(e.u);
        const auto v = static_cast<Eigen::Index>(e.v);
        trip.emplace_back(u, v, -e.weight);
        trip.emplace_back(v, u, -e.weight);
        deg(u) += e.weight;
        deg(v) += e.weight;
    }
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        trip.emplace_back(i, i, deg(i));
    }
    SparseMatrix lap(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    lap.setFromTriplets(trip.begin(), trip.end());
    if (edges.empty()) {
        return 0.0;
    }

    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = 1.0 + static_cast<double>((i * 7919) % 13) / 13.0;
    }
    v.normalize();
    double residual = INFINITY;
    double lambda = 0.0;
    for (int it = 0; it < 10000; ++it) {
        Eigen::VectorXd w = lap * v;
        lambda = v.dot(w);
        residual = (w - lambda * v).norm() / std::max(std::abs(lambda), 1e-300);
        if (residual < 1e-6) {
            return lambda;
        }
        v = w / w.norm();
    }
    throw NumericalError("max_laplacian_eig did not converge; relative residual " + std::to_string(residual));
}

Tensor two_hop(const Tensor& x, const Tensor& normalized) {
    return Tensor::from_matrix(normalized.mat() * (normalized.mat() * x.mat()));
}

double homophily_of(const std::vector<Edge>& edges, std::span<const int> labels, double delta) {
    double same = 0.0;
    double total = 0.0;
    for (const Edge& e : edges) {
        if (!qualifies(e, delta)) {
            continue;
        }
        total += e.weight;
        same += labels[e.u] == labels[e.v] ? e.weight : 0.0;
    }
    if (total <= 0.0) {
        throw std::invalid_argument("homophily: no edges with weight >= " + std::to_string(delta));
    }
    return same / total;
}

double density_of(std::size_t n, const std::vector<Edge>& edges, double delta) {
    if (n < 2) {
        throw std::invalid_argument("density needs at least two nodes");
    }
    double count = 0.0;
    for (const Edge& e : edges) {
        count += qualifies(e, delta) ? 1.0 : 0.0;
    }
    return count / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<double> ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> r(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

template <class Fn>
void fill(PropertyVector& p, std::optional<double> PropertyVector::*field, const char* name, Fn fn) {
    try {
        p.*field = fn();
    } catch (const std::exception& e) {
        p.errors[name] = e.what();
    }
}

std::string cell(const std::optional<double>& v) {
    if (!v) {
        return "";
    }
    std::ostringstream os;
    os.precision(6);
    os << *v;
    return os.str();
}

}  // namespace

double density(const Graph& g, double delta) { return density_of(g.num_nodes, g.edges, delta); }

double density(const CondensedGraph& cg, double delta) {
    return density_of(cg.num_nodes(), condensed_edges(cg, 0.0), delta);
}

double max_laplacian_eig(const Graph& g) { return laplacian_power(g.num_nodes, g.edges); }

double max_laplacian_eig(const CondensedGraph& cg, double delta) {
    return laplacian_power(cg.num_nodes(), condensed_edges(cg, delta));
}

double dbi(const Tensor& features, std::span<const int> labels) {
    if (labels.size() != features.rows()) {
        throw std::invalid_argument("dbi: labels must align with feature rows");
    }
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        members[labels[i]].push_back(i);
    }
    if (members.size() < 2) {
        throw std::invalid_argument("dbi needs at least two non-empty classes");
    }
    const auto d = static_cast<Eigen::Index>(features.cols());
    std::vector<int> cls;
    std::vector<Eigen::VectorXd> centroid;
    std::vector<double> scatter;
    const auto x = features.mat();
    for (const auto& [k, ids] : members) {
        Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
        for (std::size_t i : ids) {
            c += x.row(static_cast<Eigen::Index>(i)).transpose();
        }
        c /= static_cast<double>(ids.size());
        double s = 0.0;
        for (std::size_t i : ids) {
            s += (x.row(static_cast<Eigen::Index>(i)).transpose() - c).norm();
        }
        cls.push_back(k);
        centroid.push_back(std::move(c));
        scatter.push_back(s / static_cast<double>(ids.size()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < cls.size(); ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < cls.size(); ++j) {
            if (i == j) {
                continue;
            }
            const double dist = (centroid[i] - centroid[j]).norm();
            if (dist == 0.0) {
                throw std::invalid_argument("dbi: classes " + std::to_string(cls[i]) + " and " + std::to_string(cls[j]) +
                                            " have coincident centroids");
            }
            worst = std::max(worst, (scatter[i] + scatter[j]) / dist);
        }
        total += worst;
    }
    return total / static_cast<double>(cls.size());
}

double dbi_agg(const Graph& g) {
    auto op = normalize_adjacency(g);
    return dbi(op->apply(op->apply(g.features)), g.labels);
}

double dbi_agg(const CondensedGraph& cg, double delta) {
    if (!cg.adjacency) {
        return dbi(cg.features, cg.labels);
    }
    Tensor a(cg.num_nodes(), cg.num_nodes());
    for (const Edge& e : condensed_edges(cg, delta)) {
        a(e.u, e.v) = a(e.v, e.u) = e.weight;
    }
    return dbi(two_hop(cg.features, normalize_dense_adjacency(a)), cg.labels);
}

double homophily(const Graph& g, double delta) { return homophily_of(g.edges, g.labels, delta); }

double homophily(const CondensedGraph& cg, double delta) {
    return homophily_of(condensed_edges(cg, 0.0), cg.labels, delta);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw std::invalid_argument("pearson needs two aligned samples of length >= 2");
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        throw std::invalid_argument("pearson: zero variance");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    const auto rx = ranks(xs);
    const auto ry = ranks(ys);
    return pearson(rx, ry);
}

std::optional<double> metric_value(const PropertyVector& p, const std::string& name) {
    if (name == "density") {
        return p.density;
    }
    if (name == "max_eig") {
        return p.max_eig;
    }
    if (name == "dbi") {
        return p.dbi;
    }
    if (name == "dbi_agg") {
        return p.dbi_agg;
    }
    if (name == "homophily") {
        return p.homophily;
    }
    throw std::invalid_argument("unknown metric '" + name + "'");
}

PropertyVector properties(const Graph& g) {
    PropertyVector p;
    fill(p, &PropertyVector::density, "density", [&] { return density(g); });
    fill(p, &PropertyVector::max_eig, "max_eig", [&] { return max_laplacian_eig(g); });
    fill(p, &PropertyVector::dbi, "dbi", [&] { return dbi(g.features, g.labels); });
    fill(p, &PropertyVector::dbi_agg, "dbi_agg", [&] { return dbi_agg(g); });
    fill(p, &PropertyVector::homophily, "homophily", [&] { return homophily(g); });
    return p;
}

PropertyVector properties(const CondensedGraph& cg, double delta) {
    PropertyVector p;
    fill(p, &PropertyVector::dbi, "dbi", [&] { return dbi(cg.features, cg.labels); });
    if (!cg.has_structure()) {
        return p;
    }
    Graph g = as_graph(cg, delta);
    fill(p, &PropertyVector::density, "density", [&] { return density(g); });
    fill(p, &PropertyVector::max_eig, "max_eig", [&] { return max_laplacian_eig(g); });
    fill(p, &PropertyVector::dbi_agg, "dbi_agg", [&] { return dbi_agg(cg, delta); });
    fill(p, &PropertyVector::homophily, "homophily", [&] { return homophily(g); });
    return p;
}

PropertyReport property_report(std::vector<PropertyPair> pairs) {
    PropertyReport r;
    r.pairs = std::move(pairs);
    for (const char* name : kMetricNames) {
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto& pp : r.pairs) {
            auto a = metric_value(pp.original, name);
            auto b = metric_value(pp.condensed, name);
            if (a && b) {
                xs.push_back(*a);
                ys.push_back(*b);
            }
        }
        r.correlation[name] = std::nullopt;
        if (xs.size() < 2) {
            r.correlation_errors[name] = "fewer than two pairs with values";
            continue;
        }
        try {
            r.correlation[name] = pearson(xs, ys);
        } catch (const std::exception& e) {
            r.correlation_errors[name] = e.what();
        }
    }
    return r;
}

PropertyReport property_report(std::span<const NamedPair> pairs, double delta) {
    std::vector<PropertyPair> out;
    for (const auto& p : pairs) {
        out.push_back({p.name, properties(*p.original), properties(*p.condensed, delta)});
    }
    return property_report(std::move(out));
}

std::string property_report_csv(const PropertyReport& report) {
    std::ostringstream os;
    os << "metric";
    for (const auto& p : report.pairs) {
        os << ',' << p.name << ":original," << p.name << ":condensed";
    }
    os << ",corr\n";
    for (const char* name : kMetricNames) {
        os << name;
        for (const auto& p : report.pairs) {
            os << ',' << cell(metric_value(p.original, name)) << ',' << cell(metric_value(p.condensed, name));
        }
        os << ',' << cell(report.correlation.at(name)) << '\n';
    }
    return os.str();
}

}  // namespace graphslim
