#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <unordered_map>

#include "graphslim/graph.hpp"

namespace graphslim {

Setting parse_setting(const std::string& s) {
    if (s == "transductive") {
        return Setting::Transductive;
    }
    if (s == "inductive") {
        return Setting::Inductive;
    }
    throw std::invalid_argument("unknown setting '" + s + "'");
}

std::string to_string(Setting s) { return s == Setting::Transductive ? "transductive" : "inductive"; }

std::vector<int> Graph::labels_of(std::span<const std::size_t> ids) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) {
        out.push_back(labels.at(i));
    }
    return out;
}

std::vector<std::size_t> Graph::class_counts(std::span<const std::size_t> ids) const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i : ids) {
        ++counts.at(static_cast<std::size_t>(labels.at(i)));
    }
    return counts;
}

void Graph::validate() const {
    if (features.rows() != num_nodes) {
        throw DataError("feature rows (" + std::to_string(features.rows()) + ") != node count (" +
                        std::to_string(num_nodes) + ")");
    }
    if (labels.size() != num_nodes) {
        throw DataError("label count != node count");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw DataError("label " + std::to_string(labels[i]) + " of node " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const Edge& e = edges[k];
        if (e.u >= e.v || e.v >= num_nodes) {
            throw DataError("edge " + std::to_string(e.u) + "-" + std::to_string(e.v) + " is not canonical");
        }
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
            throw DataError("edge weight must be positive and finite");
        }
        if (k > 0 && !(edges[k - 1].u < e.u || (edges[k - 1].u == e.u && edges[k - 1].v < e.v))) {
            throw DataError("edges are not sorted and unique");
        }
    }
    std::vector<std::uint8_t> seen(num_nodes, 0);
    auto mark = [&](const std::vector<std::size_t>& ids, std::uint8_t bit, const char* name) {
        for (std::size_t i : ids) {
            if (i >= num_nodes) {
                throw DataError(std::string(name) + " mask references node " + std::to_string(i));
            }
            if (seen[i] != 0) {
                throw DataError(std::string("node ") + std::to_string(i) + " appears in overlapping masks (" + name +
                                ")");
            }
            seen[i] = bit;
        }
    };
    mark(train, 1, "train");
    mark(val, 2, "val");
    mark(test, 4, "test");
}

std::vector<Edge> canonical_edges(std::vector<Edge> edges) {
    std::vector<Edge> out;
    out.reserve(edges.size());
    for (Edge e : edges) {
        if (e.u == e.v) {
            continue;
        }
        if (e.u > e.v) {
            std::swap(e.u, e.v);
        }
        out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) {
        return a.u != b.u ? a.u < b.u : (a.v != b.v ? a.v < b.v : a.weight > b.weight);
    });
    out.erase(std::unique(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return a.u == b.u && a.v == b.v; }),
              out.end());
    return out;
}

SparseMatrix adjacency_matrix(const Graph& g) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.edges.size() * 2);
    for (const Edge& e : g.edges) {
        trip.emplace_back(static_cast<int>(e.u), static_cast<int>(e.v), e.weight);
        trip.emplace_back(static_cast<int>(e.v), static_cast<int>(e.u), e.weight);
    }
    const auto n = static_cast<Eigen::Index>(g.num_nodes);
    SparseMatrix a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
}

std::vector<double> weighted_degrees(const Graph& g) {
    std::vector<double> d(g.num_nodes, 0.0);
    for (const Edge& e : g.edges) {
        d[e.u] += e.weight;
        d[e.v] += e.weight;
    }
    return d;
}

SparseOperatorPtr normalize_adjacency(const Graph& g, bool add_self_loops) {
    std::vector<double> deg = weighted_degrees(g);
    const double loop = add_self_loops ? 1.0 : 0.0;
    std::vector<double> dinv(g.num_nodes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        const double d = deg[i] + loop;
        if (d <= 0.0) {
            throw DataError("node " + std::to_string(i) + " has zero degree and self-loops are disabled");
        }
        dinv[i] = 1.0 / std::sqrt(d);
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.edges.size() * 2 + g.num_nodes);
    for (const Edge& e : g.edges) {
        const double w = e.weight * dinv[e.u] * dinv[e.v];
        trip.emplace_back(static_cast<int>(e.u), static_cast<int>(e.v), w);
        trip.emplace_back(static_cast<int>(e.v), static_cast<int>(e.u), w);
    }
    if (add_self_loops) {
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            trip.emplace_back(static_cast<int>(i), static_cast<int>(i), dinv[i] * dinv[i]);
        }
    }
    const auto n = static_cast<Eigen::Index>(g.num_nodes);
    SparseMatrix m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    return make_sparse_operator(std::move(m));
}

Tensor normalize_dense_adjacency(const Tensor& adjacency, bool add_self_loops) {
    const std::size_t n = adjacency.rows();
    if (adjacency.cols() != n) {
        throw std::invalid_argument("adjacency must be square");
    }
    std::vector<double> dinv(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = add_self_loops ? 1.0 : 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            d += adjacency(i, j);
        }
        if (d <= 0.0) {
            throw DataError("node " + std::to_string(i) + " has zero degree and self-loops are disabled");
        }
        dinv[i] = 1.0 / std::sqrt(d);
    }
    Tensor out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double a = adjacency(i, j) + (add_self_loops && i == j ? 1.0 : 0.0);
            out(i, j) = a * dinv[i] * dinv[j];
        }
    }
    return out;
}

Graph induced_subgraph(const Graph& g, std::span<const std::size_t> ids) {
    constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
    std::vector<std::size_t> remap(g.num_nodes, kAbsent);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= g.num_nodes || remap[ids[k]] != kAbsent) {
            throw std::invalid_argument("induced_subgraph: invalid or duplicate node id");
        }
        remap[ids[k]] = k;
    }
    Graph sub;
    sub.num_nodes = ids.size();
    sub.num_classes = g.num_classes;
    sub.features = Tensor(ids.size(), g.num_features());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto src = g.features.row(ids[k]);
        std::copy(src.begin(), src.end(), sub.features.row(k).begin());
        sub.labels.push_back(g.labels[ids[k]]);
    }
    std::vector<Edge> edges;
    for (const Edge& e : g.edges) {
        if (remap[e.u] != kAbsent && remap[e.v] != kAbsent) {
            edges.push_back({remap[e.u], remap[e.v], e.weight});
        }
    }
    sub.edges = canonical_edges(std::move(edges));
    auto restrict = [&](const std::vector<std::size_t>& mask) {
        std::vector<std::size_t> out;
        for (std::size_t i : mask) {
            if (remap[i] != kAbsent) {
                out.push_back(remap[i]);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    };
    sub.train = restrict(g.train);
    sub.val = restrict(g.val);
    sub.test = restrict(g.test);
    return sub;
}

Graph training_graph(const Graph& g, Setting setting) {
    if (g.train.empty()) {
        throw DataError("graph has an empty training set");
    }
    if (setting == Setting::Transductive) {
        return g;
    }
    std::vector<std::size_t> ids = g.train;
    std::sort(ids.begin(), ids.end());
    return induced_subgraph(g, ids);
}

std::vector<std::size_t> reduction_budget(const ReductionConfig& config, std::size_t training_graph_nodes,
                                          std::span<const std::size_t> train_class_counts) {
    if (config.rate.has_value() == config.ipc.has_value()) {
        throw std::invalid_argument("reduction config needs exactly one of rate or ipc");
    }
    const std::size_t c = train_class_counts.size();
    const std::size_t population = std::accumulate(train_class_counts.begin(), train_class_counts.end(), std::size_t{0});
    if (c == 0 || population == 0) {
        throw std::invalid_argument("reduction_budget: empty training label histogram");
    }
    for (std::size_t k = 0; k < c; ++k) {
        if (train_class_counts[k] == 0) {
            throw std::invalid_argument("reduction_budget: class " + std::to_string(k) + " has no training nodes");
        }
    }
    if (config.ipc) {
        if (*config.ipc == 0) {
            throw std::invalid_argument("ipc must be positive");
        }
        std::vector<std::size_t> out(c);
        for (std::size_t k = 0; k < c; ++k) {
            out[k] = std::min(*config.ipc, train_class_counts[k]);
        }
        return out;
    }
    const double rate = *config.rate;
    if (!(rate > 0.0) || rate > 1.0) {
        throw std::invalid_argument("rate must lie in (0, 1]");
    }
    std::size_t total = static_cast<std::size_t>(std::llround(rate * static_cast<double>(training_graph_nodes)));
    total = std::min(std::max(total, c), population);

    std::vector<double> quota(c);
    std::vector<std::size_t> out(c);
    for (std::size_t k = 0; k < c; ++k) {
        quota[k] = static_cast<double>(total) * static_cast<double>(train_class_counts[k]) / static_cast<double>(population);
        out[k] = std::min(train_class_counts[k], std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(quota[k]))));
    }
    std::size_t assigned = std::accumulate(out.begin(), out.end(), std::size_t{0});
    while (assigned < total) {
        std::size_t best = c;
        for (std::size_t k = 0; k < c; ++k) {
            if (out[k] >= train_class_counts[k]) {
                continue;
            }
            if (best == c) {
                best = k;
                continue;
            }
            const double rk = quota[k] - static_cast<double>(out[k]);
            const double rb = quota[best] - static_cast<double>(out[best]);
            if (rk > rb || (rk == rb && train_class_counts[k] > train_class_counts[best])) {
                best = k;
            }
        }
        ++out[best];
        ++assigned;
    }
    while (assigned > total) {
        std::size_t best = c;
        for (std::size_t k = 0; k < c; ++k) {
            if (out[k] <= 1) {
                continue;
            }
            if (best == c || static_cast<double>(out[k]) - quota[k] > static_cast<double>(out[best]) - quota[best]) {
                best = k;
            }
        }
        if (best == c) {
            break;
        }
        --out[best];
        --assigned;
    }
    return out;
}

Graph sbm_generate(const SbmParams& p) {
    if (p.p_intra < 0.0 || p.p_intra > 1.0 || p.p_inter < 0.0 || p.p_inter > 1.0) {
        throw std::invalid_argument("SBM probabilities must lie in [0, 1]");
    }
    if (p.block_sizes.empty()) {
        throw std::invalid_argument("SBM needs at least one block");
    }
    std::mt19937_64 rng(p.seed);
    Graph g;
    g.num_classes = p.block_sizes.size();
    for (std::size_t b = 0; b < p.block_sizes.size(); ++b) {
        g.labels.insert(g.labels.end(), p.block_sizes[b], static_cast<int>(b));
    }
    g.num_nodes = g.labels.size();

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> means(g.num_classes, std::vector<double>(p.feature_dim));
    for (auto& mu : means) {
        double norm = 0.0;
        for (double& x : mu) {
            x = gauss(rng);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : mu) {
            x = norm > 0.0 ? p.mean_separation * x / norm : 0.0;
        }
    }
    g.features = Tensor(g.num_nodes, p.feature_dim);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        const auto& mu = means[static_cast<std::size_t>(g.labels[i])];
        for (std::size_t j = 0; j < p.feature_dim; ++j) {
            g.features(i, j) = mu[j] + p.noise * gauss(rng);
        }
    }

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        for (std::size_t j = i + 1; j < g.num_nodes; ++j) {
            const double prob = g.labels[i] == g.labels[j] ? p.p_intra : p.p_inter;
            if (unif(rng) < prob) {
                g.edges.push_back({i, j, 1.0});
            }
        }
    }

    std::vector<std::size_t> perm(g.num_nodes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(p.train_fraction * static_cast<double>(g.num_nodes)));
    const auto n_val = static_cast<std::size_t>(std::llround(p.val_fraction * static_cast<double>(g.num_nodes)));
    g.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    g.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(std::min(g.num_nodes, n_train + n_val)));
    g.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(std::min(g.num_nodes, n_train + n_val)), perm.end());
    std::sort(g.train.begin(), g.train.end());
    std::sort(g.val.begin(), g.val.end());
    std::sort(g.test.begin(), g.test.end());
    g.validate();
    return g;
}

std::string graph_hash(const Graph& g) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    auto feed_u64 = [&](std::uint64_t v) { feed(&v, sizeof v); };
    feed_u64(g.num_nodes);
    feed_u64(g.num_classes);
    feed_u64(g.features.cols());
    feed(g.features.values().data(), g.features.size() * sizeof(double));
    feed(g.labels.data(), g.labels.size() * sizeof(int));
    for (const Edge& e : g.edges) {
        feed_u64(e.u);
        feed_u64(e.v);
        feed(&e.weight, sizeof e.weight);
    }
    for (const auto* mask : {&g.train, &g.val, &g.test}) {
        feed_u64(mask->size());
        for (std::size_t i : *mask) {
            feed_u64(i);
        }
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace graphslim
